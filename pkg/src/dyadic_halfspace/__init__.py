"""Multilinear dyadic maximal operators on the upper half-space.

Exact (rational) and binary64 computation of dyadic and half-space maximal
functions, the stopping-time sparse decomposition, the Muckenhoupt/Carleson
type weight characteristics, and numerical verifiers for the weighted
weak- and strong-type bounds built on them.
"""

from __future__ import annotations

from .core import (
    CarlesonBox,
    DyadicCube,
    ExponentVector,
    GridFamily,
    HalfSpaceMeasure,
    Lattice,
    StepFunction,
    average,
    covering_cube,
    derive_exponents,
    enumerate_cubes,
)
from .errors import (
    DyadicError,
    GuardExceeded,
    InfiniteConstant,
    MixedResolution,
    NonAdmissibleExponent,
    NotCovered,
    SubResolutionCube,
    TooLarge,
    ZeroWeightCell,
)
from .instance import Instance, generate, load, loads, random_instance
from .maximal import (
    MaximalField,
    dyadic_maximal_boundary,
    geometric_maximal,
    halfspace_dyadic_maximal,
    halfspace_maximal_oracle,
    level_set_measure,
    weighted_dyadic_maximal,
)
from .sparse import SparseFamily, decompose, invariant_report, level_set_identity_check, select_level_cubes
from .theorems import (
    THEOREMS,
    CarlesonInput,
    StressReport,
    VerificationResult,
    stress_search,
    verify_ap_prime_duality,
    verify_bprime,
    verify_aprime_winfty,
    verify_carleson,
    verify_instance,
    verify_sawyer,
    verify_strong_c0,
    verify_strong_cinf,
    verify_weak_type,
)
from .weights import ConstantReport, all_constants

__version__ = "0.1.0"
