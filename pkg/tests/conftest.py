from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from dyadic_halfspace.core import GridFamily, HalfSpaceMeasure, Lattice, StepFunction, derive_exponents
from dyadic_halfspace.instance import Instance


def step(lat: Lattice, values, background=0) -> StepFunction:
    return StepFunction.from_cells(lat, [Fraction(v) for v in values], background)


def spike_instance(L0: int = 4, atom=True) -> Instance:
    """``f = 16 chi_[0,1)`` on ``[0, 2**L0)``, ``w = 1``, ``p = 2``, optional atom ``(1/2, 0, 1)``."""
    lat = Lattice(1, L0, 0)
    N = lat.N
    f = step(lat, [16] + [0] * (N - 1))
    w = step(lat, [1] * N, 1)
    mu = HalfSpaceMeasure.from_atoms([[["1/2"], "0", "1"]]) if atom else HalfSpaceMeasure.empty(1)
    return Instance(lat, derive_exponents(["2"]), [w], [f], mu)


def lebesgue_lift(lat: Lattice, fine: bool = False) -> HalfSpaceMeasure:
    return HalfSpaceMeasure.lattice_lift(StepFunction.constant(lat, Fraction(1)), fine=fine)


def one_grid(lat: Lattice, top: int | None = None) -> GridFamily:
    return GridFamily.standard(lat.n, -lat.L, lat.L0 if top is None else top)


def random_step(rng: np.random.Generator, lat: Lattice, lo=0, hi=8, den=4, zero=0.3, background=0) -> StepFunction:
    vals = [Fraction(int(rng.integers(lo, hi + 1)), int(rng.integers(1, den + 1))) for _ in range(lat.cells**lat.n)]
    vals = [Fraction(0) if rng.random() < zero else v for v in vals]
    return StepFunction.from_cells(lat, vals, background)


def random_weight(rng: np.random.Generator, lat: Lattice, B=2) -> StepFunction:
    vals = [Fraction(2) ** int(e) for e in rng.integers(-B, B + 1, size=lat.cells**lat.n)]
    return StepFunction.from_cells(lat, vals, Fraction(1))


@pytest.fixture
def spike():
    return spike_instance()


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
