"""Problem instances: JSON round-trip and the seeded generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ExponentVector, HalfSpaceMeasure, Lattice, StepFunction, derive_exponents
from .errors import GuardExceeded, ZeroWeightCell
from .numeric import format_number, parse_number, power

EXPONENT_MENU = (Fraction(3, 2), Fraction(2), Fraction(3), Fraction(4), Fraction(5, 2), Fraction(4, 3), Fraction(6))


@dataclass(eq=False)
class Instance:
    lattice: Lattice
    exponents: ExponentVector
    weights: list
    functions: list
    mu: HalfSpaceMeasure
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.lattice.n

    @property
    def m(self) -> int:
        return self.exponents.m

    @property
    def exact(self) -> bool:
        return all(f.exact for f in self.weights + self.functions) and self.mu.exact and self.exponents.exact

    # -- derived weights ---------------------------------------------------
    def _check_positive(self):
        for i, w in enumerate(self.weights):
            if (w.values == 0).any() or w.background == 0:
                raise ZeroWeightCell(f"weight {i} vanishes on a cell")

    def sigmas(self) -> list:
        """Dual weights ``sigma_i = w_i**(1 - p_i')``, background included."""
        self._check_positive()
        out = []
        for w, pc in zip(self.weights, self.exponents.p_conj):
            e = 1 - pc
            out.append(StepFunction(w.lattice, power(w.values, e), power(np.array([w.background], dtype=object if w.exact else float), e)[0]))
        return out

    def v_weight(self) -> StepFunction:
        """``v = prod_i w_i**(p/p_i)``."""
        return product_power(self.weights, self.exponents.ratios())

    def sigma_power_product(self) -> StepFunction:
        """``prod_i sigma_i**(p/p_i)``."""
        return product_power(self.sigmas(), self.exponents.ratios())

    def f_sigma(self) -> list:
        """``f_i sigma_i`` (vanishing outside the domain)."""
        return [StepFunction(f.lattice, f.values * s.values, 0) for f, s in zip(self.functions, self.sigmas())]

    def digest(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "m": self.m,
            "p": [format_number(q) for q in self.exponents.p_i],
            "L0": self.lattice.L0,
            "L": self.lattice.L,
        }

    # -- JSON --------------------------------------------------------------
    def to_json(self) -> dict:
        def cells(f: StepFunction):
            return [format_number(v) for v in f.values.reshape(-1)]

        out = {
            "n": self.n,
            "m": self.m,
            "p": [format_number(q) for q in self.exponents.p_i],
            "L0": self.lattice.L0,
            "L": self.lattice.L,
            "weights": [cells(w) for w in self.weights],
            "functions": [cells(f) for f in self.functions],
            "mu_atoms": [
                [[format_number(c) for c in x], format_number(t), format_number(mass)] for x, t, mass in self.mu.atoms()
            ],
        }
        bgs = [w.background for w in self.weights]
        if any(b != 1 for b in bgs):
            out["weight_background"] = [format_number(b) for b in bgs]
        if self.seed is not None:
            out["seed"] = self.seed
        if self.meta:
            out["meta"] = self.meta
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)

    def save(self, path: str | Path):
        Path(path).write_text(self.dumps() + "\n")


def product_power(fs: Sequence[StepFunction], exps: Sequence) -> StepFunction:
    vals, bg = None, None
    for f, e in zip(fs, exps):
        pv = power(f.values, e)
        pb = power(np.array([f.background], dtype=object if f.exact else float), e)[0]
        vals = pv if vals is None else _mul(vals, pv)
        bg = pb if bg is None else bg * pb
    return StepFunction(fs[0].lattice, vals, bg)


def _mul(a, b):
    if a.dtype != b.dtype:
        return a.astype(float) * b.astype(float)
    return a * b


def from_json(data: dict) -> Instance:
    lat = Lattice(int(data["n"]), int(data["L0"]), int(data["L"]))
    ex = derive_exponents(data["p"])
    if int(data.get("m", ex.m)) != ex.m:
        raise ValueError("m disagrees with the exponent list")
    bgs = data.get("weight_background") or [1] * ex.m
    weights = [StepFunction.from_cells(lat, w, parse_number(b)) for w, b in zip(data["weights"], bgs)]
    functions = [StepFunction.from_cells(lat, f, 0) for f in data["functions"]]
    if len(weights) != ex.m or len(functions) != ex.m:
        raise ValueError("need one weight and one function per exponent")
    mu = HalfSpaceMeasure.from_atoms(data.get("mu_atoms", [])) if data.get("mu_atoms") else HalfSpaceMeasure.empty(lat.n)
    return Instance(lat, ex, weights, functions, mu, data.get("seed"), data.get("meta", {}))


def load(path: str | Path) -> Instance:
    return from_json(json.loads(Path(path).read_text()))


def loads(text: str) -> Instance:
    return from_json(json.loads(text))


# --------------------------------------------------------------------------
# generator


WEIGHT_STEP_CAP = 12


def weight_step(ex: ExponentVector, cap: int | None = WEIGHT_STEP_CAP) -> list:
    """Per-factor exponent step keeping ``sigma_i``, ``v`` and ``sigma_i**(p/p_i)`` dyadic.

    When that step exceeds ``cap`` the weights would span absurd ranges
    (``2**(±B*step)``); the step then only keeps ``sigma_i`` dyadic and the
    power products fall back to binary64.
    """
    out = []
    r = ex.ratios()
    for q, pc, ri in zip(ex.p_i, ex.p_conj, r):
        if not isinstance(q, Fraction):
            out.append(1)
            continue
        dual = Fraction(pc - 1).denominator
        full = math.lcm(dual, Fraction(ri).denominator, Fraction((1 - pc) * ri).denominator)
        out.append(full if cap is None or full <= cap else dual)
    return out


def generate(
    seed: int,
    n: int = 1,
    m: int = 1,
    p: Sequence | None = None,
    L0: int = 2,
    L: int = 1,
    B: int = 2,
    atoms: int = 6,
    density: bool = True,
    f_zero: float = 0.4,
    f_bits: int = 2,
) -> Instance:
    """Random instance: dyadic-power weights, dyadic-rational functions, atomic ``mu``.

    ``mu`` is a lattice lift (one atom per fine cell at a random height below
    the resolution, mass ``2**b`` times the fine cell volume) plus ``atoms``
    random atoms in the domain times ``[0, 2**L0)``.  The lift keeps every
    Carleson box of the family charged, so ``C0`` stays finite.
    """
    if n > 3 or m > 3 or L0 + L > 8 or n < 1 or m < 1:
        raise GuardExceeded("desk-scale guard: n <= 3, m <= 3, L0 + L <= 8")
    rng = np.random.default_rng(seed)
    if p is None:
        p = [EXPONENT_MENU[i] for i in rng.integers(0, len(EXPONENT_MENU), size=m)]
    ex = derive_exponents(p)
    lat = Lattice(n, L0, L)
    N = lat.N
    shape = (N,) * n
    steps = weight_step(ex)
    weights = []
    for i in range(m):
        b = rng.integers(-B, B + 1, size=shape) * steps[i]
        vals = np.empty(b.size, dtype=object)
        vals[:] = [Fraction(2) ** int(e) for e in b.reshape(-1)]
        weights.append(StepFunction(lat, vals.reshape(shape), Fraction(1)))
    functions = []
    for i in range(m):
        num = rng.integers(0, 2 ** (f_bits + 2) + 1, size=shape)
        num[rng.random(shape) < f_zero] = 0
        den = 2 ** rng.integers(0, f_bits + 1, size=shape)
        vals = np.empty(shape, dtype=object)
        flat = [Fraction(int(a), int(d)) for a, d in zip(num.reshape(-1), den.reshape(-1))]
        vals.reshape(-1)[:] = flat
        functions.append(StepFunction(lat, vals, 0))
    mu = HalfSpaceMeasure.empty(n)
    if density:
        fine = lat.fine
        nf = fine.cells
        h = Fraction(1, lat.scale)
        cell_idx = np.indices((nf,) * n).reshape(n, -1).T
        K = len(cell_idx)
        xs = np.empty((K, n), dtype=object)
        for d in range(n):
            xs[:, d] = [h * int(i) + h / 2 for i in cell_idx[:, d]]
        ts = [Fraction(int(j), 8 * lat.scale) for j in rng.integers(0, 8, size=K)]
        bm = rng.integers(-B, B + 1, size=K)
        ms = [Fraction(2) ** int(e) * h**n for e in bm]
        mu = mu.merged(HalfSpaceMeasure(xs, ts, ms))
    if atoms:
        den = 2 ** (L + 3)
        span = 2**L0 * den
        xi = rng.integers(0, span, size=(atoms, n))
        ti = rng.integers(0, span, size=atoms)
        mi = rng.integers(-B, B + 1, size=atoms)
        xs = np.empty((atoms, n), dtype=object)
        for a in range(atoms):
            xs[a, :] = [Fraction(int(c), den) for c in xi[a]]
        ts = [Fraction(int(c), den) for c in ti]
        ms = [Fraction(2) ** int(e) for e in mi]
        mu = mu.merged(HalfSpaceMeasure(xs, ts, ms))
    meta = {"B": B, "atoms": atoms, "density": density}
    return Instance(lat, ex, weights, functions, mu, seed, meta)


def random_shape(rng: np.random.Generator, n_choices=(1, 2), m_choices=(1, 2, 3), max_size: dict | None = None):
    """Draw (n, m, L0, L) at desk scale; ``max_size`` caps ``L0 + L`` per dimension."""
    max_size = max_size or {1: 5, 2: 3, 3: 2}
    n = int(rng.choice(n_choices))
    m = int(rng.choice(m_choices))
    total = int(rng.integers(1, max_size[n] + 1))
    L = int(rng.integers(0, min(total, 2) + 1))
    return n, m, total - L, L


def random_instance(seed: int, n_choices=(1, 2), m_choices=(1, 2, 3), max_size: dict | None = None, **kw) -> Instance:
    rng = np.random.default_rng([seed, 7])
    n, m, L0, L = random_shape(rng, n_choices, m_choices, max_size)
    return generate(seed, n=n, m=m, L0=L0, L=L, **kw)
