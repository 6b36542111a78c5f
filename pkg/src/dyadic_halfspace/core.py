"""Shifted dyadic grids, cubes, Carleson boxes, step functions and atomic measures.

Geometry is exact. Every cube of level ``k >= -L`` in any of the one-third
shifted grids has corners on the *fine lattice* of spacing ``2**-L / 3``, so
cubes are addressed internally by integer fine coordinates and all box
integrals of step functions reduce to prefix-table lookups.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import NonAdmissibleExponent, NotCovered, SubResolutionCube
from .numeric import ceil_log2, is_exact, parse_number, pow2

FINE = 3


# --------------------------------------------------------------------------
# exponents


@dataclass(frozen=True)
class ExponentVector:
    p_i: tuple
    p: object
    p_conj: tuple
    p_bar: object

    @property
    def m(self) -> int:
        return len(self.p_i)

    @property
    def exact(self) -> bool:
        return all(is_exact(q) for q in self.p_i)

    def ratios(self):
        """The exponents ``p / p_i`` (they sum to one)."""
        return tuple(self.p / q for q in self.p_i)

    def sorted_order(self):
        """Permutation putting the smallest ``p_i`` first."""
        return tuple(sorted(range(self.m), key=lambda i: self.p_i[i]))


def derive_exponents(raw: Sequence) -> ExponentVector:
    vals = [parse_number(q) for q in raw]
    if not vals:
        raise NonAdmissibleExponent("need at least one exponent")
    for q in vals:
        if not (q > 1) or (not is_exact(q) and math.isinf(q)):
            raise NonAdmissibleExponent(f"exponent {q} is not in (1, inf)")
    if all(is_exact(q) for q in vals):
        inv = sum(Fraction(1) / q for q in vals)
        p = 1 / inv
        conj = tuple(q / (q - 1) for q in vals)
    else:
        vals = [float(q) for q in vals]
        p = 1.0 / math.fsum(1.0 / q for q in vals)
        conj = tuple(q / (q - 1.0) for q in vals)
    return ExponentVector(tuple(vals), p, conj, max(conj))


# --------------------------------------------------------------------------
# lattice, grids, cubes


@dataclass(frozen=True)
class Lattice:
    """Domain ``[0, 2**L0)**n`` at cell side ``2**-L / refine``."""

    n: int
    L0: int
    L: int
    refine: int = 1

    def __post_init__(self):
        if self.refine not in (1, FINE):
            raise ValueError("refine must be 1 or 3")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def N(self) -> int:
        """Resolution cells per axis."""
        return 2 ** (self.L0 + self.L)

    @property
    def cells(self) -> int:
        return self.N * self.refine

    @property
    def nfine(self) -> int:
        return self.N * FINE

    @property
    def scale(self) -> int:
        """Fine lattice units per unit length."""
        return FINE * 2**self.L

    @property
    def side(self):
        return pow2(self.L0)

    @property
    def base(self) -> "Lattice":
        return Lattice(self.n, self.L0, self.L, 1)

    @property
    def fine(self) -> "Lattice":
        return Lattice(self.n, self.L0, self.L, FINE)

    @property
    def fine_volume(self) -> Fraction:
        return Fraction(1, self.scale**self.n)

    def fine_side(self, level: int) -> int:
        if level < -self.L:
            raise SubResolutionCube(f"level {level} below resolution -{self.L}")
        return FINE * 2 ** (level + self.L)

    def fine_cell(self, x) -> tuple:
        return tuple(math.floor(Fraction(c) * self.scale) for c in x)


@dataclass(frozen=True)
class GridFamily:
    n: int
    level_min: int
    level_max: int
    shifts: tuple

    def __post_init__(self):
        if len(set(self.shifts)) != len(self.shifts):
            raise ValueError("duplicate shift vectors")
        if any(len(s) != self.n or any(b not in (0, 1) for b in s) for s in self.shifts):
            raise ValueError("shift bits must be 0 (no shift) or 1 (one third)")

    @classmethod
    def standard(cls, n: int, level_min: int, level_max: int) -> "GridFamily":
        return cls(n, level_min, level_max, ((0,) * n,))

    @classmethod
    def one_third(cls, n: int, level_min: int, level_max: int) -> "GridFamily":
        return cls(n, level_min, level_max, tuple(itertools.product((0, 1), repeat=n)))

    @classmethod
    def for_lattice(cls, lat: Lattice, shifted: bool = True, extra: int = 2) -> "GridFamily":
        """Grids with levels from the resolution up to two above the first covering level."""
        g = (cls.one_third if shifted else cls.standard)(lat.n, -lat.L, lat.L0 + 8)
        top = max(top_level(g, b, lat) for b in range(g.size))
        return cls(lat.n, -lat.L, top + extra, g.shifts)

    @property
    def size(self) -> int:
        return len(self.shifts)

    def with_levels(self, level_min: int, level_max: int) -> "GridFamily":
        return GridFamily(self.n, level_min, level_max, self.shifts)

    def shift(self, beta: int) -> tuple:
        return tuple(Fraction(b, 3) for b in self.shifts[beta])

    def offset_sign(self, level: int) -> int:
        return -1 if level % 2 else 1


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Cube ``2**k ([0,1)**n + j + (-1)**k s_beta)`` of grid ``grid``."""

    grid: int
    level: int
    index: tuple

    @property
    def side(self) -> Fraction:
        return pow2(self.level)

    def volume(self):
        return self.side ** len(self.index)

    def lo(self, grids: GridFamily) -> tuple:
        sgn = grids.offset_sign(self.level)
        return tuple(self.side * (j + sgn * s) for j, s in zip(self.index, grids.shift(self.grid)))

    def hi(self, grids: GridFamily) -> tuple:
        return tuple(a + self.side for a in self.lo(grids))

    def contains(self, x, grids: GridFamily) -> bool:
        return all(a <= Fraction(c) < a + self.side for a, c in zip(self.lo(grids), x))

    def fine_lo(self, grids: GridFamily, lat: Lattice) -> tuple:
        side = lat.fine_side(self.level)
        off = grids.offset_sign(self.level) * 2 ** (self.level + lat.L)
        return tuple(side * j + off * b for j, b in zip(self.index, grids.shifts[self.grid]))

    def as_dict(self) -> dict:
        return {"grid": self.grid, "level": self.level, "index": list(self.index)}


@dataclass(frozen=True)
class CarlesonBox:
    base: DyadicCube

    def contains(self, x, t, grids: GridFamily) -> bool:
        return 0 <= t < self.base.side and self.base.contains(x, grids)


def _fine_offset(grids: GridFamily, beta: int, level: int, lat: Lattice, d: int) -> int:
    return grids.offset_sign(level) * 2 ** (level + lat.L) * grids.shifts[beta][d]


def level_range(grids: GridFamily, beta: int, level: int, lat: Lattice):
    """Per-axis (j_min, count) of level cubes meeting the domain."""
    side = lat.fine_side(level)
    out = []
    for d in range(lat.n):
        off = _fine_offset(grids, beta, level, lat, d)
        jmin = (-off - side) // side + 1
        jmax = -((off - lat.nfine) // side) - 1
        out.append((jmin, jmax - jmin + 1))
    return out


def top_level(grids: GridFamily, beta: int, lat: Lattice) -> int:
    """First level at which one cube of grid ``beta`` covers the domain."""
    k = -lat.L
    while True:
        if all(c == 1 for _, c in level_range(grids, beta, k, lat)):
            return k
        k += 1


def enumerate_cubes(grids: GridFamily, lat: Lattice) -> list:
    """All cubes of every grid with level in range meeting the domain, canonical order."""
    out = []
    for beta in range(grids.size):
        for k in range(grids.level_min, grids.level_max + 1):
            ranges = level_range(grids, beta, k, lat) if k >= -lat.L else _coarse_range(grids, beta, k, lat)
            for idx in itertools.product(*[range(j0, j0 + c) for j0, c in ranges]):
                out.append(DyadicCube(beta, k, tuple(idx)))
    return out


def _coarse_range(grids, beta, k, lat):
    # exact rational version for sub-resolution levels
    side = pow2(k)
    sgn = grids.offset_sign(k)
    out = []
    for s in grids.shift(beta):
        jmin = math.floor(-1 - sgn * s) + 1
        jmax = math.ceil(lat.side / side - sgn * s) - 1
        out.append((jmin, jmax - jmin + 1))
    return out


def covering_cube(lo: Sequence, side, grids: GridFamily) -> DyadicCube:
    """Smallest-level grid cube containing the cube ``[lo, lo + side)``."""
    side = Fraction(side)
    if side <= 0:
        raise ValueError("side must be positive")
    lo = tuple(Fraction(c) for c in lo)
    for k in range(max(ceil_log2(side), grids.level_min), grids.level_max + 1):
        s2 = pow2(k)
        sgn = grids.offset_sign(k)
        for beta in range(grids.size):
            idx = tuple(math.floor(a / s2 - sgn * s) for a, s in zip(lo, grids.shift(beta)))
            cube = DyadicCube(beta, k, idx)
            if all(c + side <= h for c, h in zip(lo, cube.hi(grids))):
                return cube
    raise NotCovered(f"level_max {grids.level_max} too small to cover cube of side {side}")


# --------------------------------------------------------------------------
# step functions


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Nonnegative function constant on lattice cells, ``background`` outside the domain."""

    lattice: Lattice
    values: np.ndarray
    background: object = 0

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype != object:
            vals = vals.astype(float)
        expect = (self.lattice.cells,) * self.lattice.n
        if vals.shape != expect:
            raise ValueError(f"values shape {vals.shape} != {expect}")
        if (vals < 0).any() or self.background < 0:
            raise ValueError("step functions must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def exact(self) -> bool:
        return self.values.dtype == object and is_exact(self.background)

    @classmethod
    def constant(cls, lat: Lattice, c, background=0) -> "StepFunction":
        dtype = object if is_exact(c) else float
        vals = np.empty((lat.cells,) * lat.n, dtype=dtype)
        vals[...] = c
        return cls(lat, vals, background)

    @classmethod
    def from_cells(cls, lat: Lattice, flat: Sequence, background=0) -> "StepFunction":
        vals = [parse_number(v) for v in flat]
        exact = all(is_exact(v) for v in vals)
        arr = np.array(vals, dtype=object if exact else float).reshape((lat.cells,) * lat.n)
        return cls(lat, arr, parse_number(background) if isinstance(background, str) else background)

    def with_values(self, values, background=None) -> "StepFunction":
        return StepFunction(self.lattice, values, self.background if background is None else background)

    def scaled(self, c) -> "StepFunction":
        return StepFunction(self.lattice, self.values * c, self.background * c)

    def as_float(self) -> "StepFunction":
        return StepFunction(self.lattice, self.values.astype(float), float(self.background))

    @cached_property
    def fine_values(self) -> np.ndarray:
        rep = FINE // self.lattice.refine
        v = self.values
        if rep > 1:
            for ax in range(v.ndim):
                v = np.repeat(v, rep, axis=ax)
        return v

    @cached_property
    def prefix(self) -> np.ndarray:
        v = self.fine_values
        pad = np.zeros(tuple(s + 1 for s in v.shape), dtype=v.dtype)
        if v.dtype == object:
            pad[...] = Fraction(0)
        inner = v
        for ax in range(v.ndim):
            inner = np.cumsum(inner, axis=ax)
        pad[(slice(1, None),) * v.ndim] = inner
        return pad

    @cached_property
    def _padded(self) -> np.ndarray:
        return np.pad(self.fine_values, [(0, 1)] * self.lattice.n)

    def tensor_integrals(self, bounds: Sequence[np.ndarray]):
        """Integrals over the tensor boxes ``prod_d [b_d[i], b_d[i+1])`` (fine units).

        Returns an n-d array of shape ``(len(b_1)-1, ..., len(b_n)-1)``.
        """
        nf = self.lattice.nfine
        clipped = [np.clip(np.asarray(b, dtype=np.int64), 0, nf) for b in bounds]
        if self.values.dtype == object:
            block = self.prefix[np.ix_(*clipped)]
            for ax in range(len(bounds)):
                block = np.diff(block, axis=ax)
        else:
            # direct segment sums: prefix differences lose everything to
            # cancellation when weights span many orders of magnitude
            block = self._padded
            for ax, c in enumerate(clipped):
                block = np.add.reduceat(block, c, axis=ax)
                block = np.take(block, np.arange(len(c) - 1), axis=ax)
                empty = np.diff(c) == 0
                if empty.any():
                    shape = [1] * block.ndim
                    shape[ax] = len(c) - 1
                    block = np.where(empty.reshape(shape), 0.0, block)
        vol = self.lattice.fine_volume if self.exact else float(self.lattice.fine_volume)
        out = block * vol
        if self.background != 0:
            total = _outer([np.diff(np.asarray(b, dtype=np.int64)) for b in bounds])
            inside = _outer([np.diff(c) for c in clipped])
            extra = (total - inside).astype(object) if self.exact else (total - inside).astype(float)
            out = out + extra * (self.background * vol)
        return out

    def box_integral(self, lo_f: Sequence[int], hi_f: Sequence[int]):
        return self.tensor_integrals([np.array([a, b]) for a, b in zip(lo_f, hi_f)]).reshape(-1)[0]

    def integral(self):
        if self.background != 0:
            return math.inf
        return self.box_integral((0,) * self.lattice.n, (self.lattice.nfine,) * self.lattice.n)

    def cube_integral(self, cube: DyadicCube, grids: GridFamily):
        lat = self.lattice
        side = lat.fine_side(cube.level)
        lo = cube.fine_lo(grids, lat)
        return self.box_integral(lo, tuple(a + side for a in lo))


def _outer(vecs):
    out = np.asarray(vecs[0])
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def average(f: StepFunction, cube: DyadicCube, grids: GridFamily):
    """``(1/|Q|) int_Q f``."""
    return f.cube_integral(cube, grids) / (cube.volume() if f.exact else float(cube.volume()))


def check_same_lattice(fs: Sequence[StepFunction]):
    from .errors import MixedResolution

    lats = {(f.lattice.n, f.lattice.L0, f.lattice.L) for f in fs}
    if len(lats) > 1:
        raise MixedResolution(f"inputs disagree on lattice: {sorted(lats)}")


# --------------------------------------------------------------------------
# half-space measures


@dataclass(frozen=True, eq=False)
class HalfSpaceMeasure:
    """Finite atomic measure on the closed upper half-space."""

    xs: np.ndarray
    ts: np.ndarray
    masses: np.ndarray
    _cells: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=object)
        ts = np.asarray(self.ts, dtype=object).reshape(-1)
        ms = np.asarray(self.masses, dtype=object).reshape(-1)
        if xs.ndim == 1:
            xs = xs.reshape(len(ts), -1) if len(ts) else xs.reshape(0, 0)
        if not (len(xs) == len(ts) == len(ms)):
            raise ValueError("atom arrays disagree in length")
        if any(not (m > 0) for m in ms) or any(t < 0 for t in ts):
            raise ValueError("masses must be positive and heights nonnegative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "masses", ms)

    @classmethod
    def from_atoms(cls, atoms: Sequence) -> "HalfSpaceMeasure":
        """Build from ``[[x...], t, mass]`` records."""
        xs, ts, ms = [], [], []
        for x, t, mass in atoms:
            xs.append([parse_number(c) for c in x])
            ts.append(parse_number(t))
            ms.append(parse_number(mass))
        n = len(xs[0]) if xs else 0
        arr = np.empty((len(xs), n), dtype=object)
        for i, row in enumerate(xs):
            arr[i, :] = row
        return cls(arr, ts, ms)

    @classmethod
    def empty(cls, n: int) -> "HalfSpaceMeasure":
        return cls(np.empty((0, n), dtype=object), [], [])

    @classmethod
    def lattice_lift(cls, v: StepFunction, fine: bool = True, height=0) -> "HalfSpaceMeasure":
        """One atom per (fine) cell center at ``height`` carrying ``v`` times the cell volume."""
        lat = v.lattice.fine if fine else v.lattice.base
        vals = v.fine_values if fine else StepFunction(v.lattice.base, _coarsen(v)).values
        vol = Fraction(1, (lat.scale // (FINE // lat.refine)) ** lat.n)
        if not v.exact:
            vol = float(vol)
        h = Fraction(1, lat.scale // (FINE // lat.refine))
        xs, ms = [], []
        for idx in itertools.product(range(lat.cells), repeat=lat.n):
            mass = vals[idx] * vol
            if mass > 0:
                xs.append([h * i + h / 2 for i in idx])
                ms.append(mass)
        arr = np.empty((len(xs), lat.n), dtype=object)
        for i, row in enumerate(xs):
            arr[i, :] = row
        return cls(arr, [height] * len(xs), ms)

    def __len__(self):
        return len(self.ts)

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def exact(self) -> bool:
        return all(is_exact(v) for v in itertools.chain(self.xs.ravel(), self.ts, self.masses))

    def total(self):
        return sum(self.masses, Fraction(0) if self.exact else 0.0)

    def scaled(self, c) -> "HalfSpaceMeasure":
        return HalfSpaceMeasure(self.xs, self.ts, self.masses * c)

    def merged(self, other: "HalfSpaceMeasure") -> "HalfSpaceMeasure":
        if not len(other):
            return self
        if not len(self):
            return other
        return HalfSpaceMeasure(
            np.vstack([self.xs, other.xs]),
            np.concatenate([self.ts, other.ts]),
            np.concatenate([self.masses, other.masses]),
        )

    def atoms(self) -> list:
        return [[list(x), t, mass] for x, t, mass in zip(self.xs.tolist(), self.ts, self.masses)]

    def fine_cells(self, lat: Lattice) -> np.ndarray:
        """Fine-lattice cell index of every atom (exact floor)."""
        key = (lat.n, lat.L)
        if key not in self._cells:
            cells = np.array([lat.fine_cell(x) for x in self.xs], dtype=np.int64).reshape(len(self), lat.n)
            self._cells[key] = cells
        return self._cells[key]

    def masses_float(self) -> np.ndarray:
        return self.masses.astype(float)

    def inside(self, lat: Lattice) -> np.ndarray:
        c = self.fine_cells(lat)
        return np.all((c >= 0) & (c < lat.nfine), axis=1) if len(self) else np.zeros(0, bool)


def _coarsen(v: StepFunction) -> np.ndarray:
    if v.lattice.refine == 1:
        return v.values
    vals = v.values
    for ax in range(vals.ndim):
        shape = list(vals.shape)
        shape[ax : ax + 1] = [shape[ax] // FINE, FINE]
        vals = vals.reshape(shape).sum(axis=ax + 1) / FINE
    return vals


def box_measure(mu: HalfSpaceMeasure, box: CarlesonBox, grids: GridFamily):
    """``mu(Q~)`` with the half-open height convention ``0 <= t < l(Q)``."""
    zero = Fraction(0) if mu.exact else 0.0
    total = zero
    for x, t, mass in zip(mu.xs, mu.ts, mu.masses):
        if box.contains(x, t, grids):
            total = total + mass
    return total


# --------------------------------------------------------------------------
# vectorized per-grid level structure


@dataclass
class LevelData:
    level: int
    j0: tuple
    count: tuple
    bounds: list  # per axis fine boundaries, length count + 1
    cellmap: list  # per axis: fine cell -> local index


class LevelGrid:
    """Cubes of one grid meeting the domain, level by level, for vector work."""

    def __init__(self, grids: GridFamily, beta: int, lat: Lattice, kmax: int | None = None):
        self.grids = grids
        self.beta = beta
        self.lat = lat.base
        self.top = top_level(grids, beta, lat)
        self.kmin = -lat.L
        self.kmax = self.top + 2 if kmax is None else kmax
        self._data: dict = {}

    @property
    def levels(self):
        return range(self.kmin, self.kmax + 1)

    def data(self, k: int) -> LevelData:
        if k not in self._data:
            lat = self.lat
            side = lat.fine_side(k)
            ranges = level_range(self.grids, self.beta, k, lat)
            bounds, cmap = [], []
            cells = np.arange(lat.nfine, dtype=np.int64)
            for d, (j0, c) in enumerate(ranges):
                off = _fine_offset(self.grids, self.beta, k, lat, d)
                bounds.append(side * (j0 + np.arange(c + 1, dtype=np.int64)) + off)
                cmap.append((cells - off) // side - j0)
            self._data[k] = LevelData(k, tuple(j for j, _ in ranges), tuple(c for _, c in ranges), bounds, cmap)
        return self._data[k]

    def integrals(self, f: StepFunction, k: int):
        return f.tensor_integrals(self.data(k).bounds)

    def volume(self, k: int, exact: bool):
        v = pow2(k * self.lat.n)
        return v if exact else float(v)

    def local_index(self, k: int, cells: np.ndarray) -> tuple:
        """Local cube index (per axis arrays) of fine cells ``cells`` (shape (K, n))."""
        d = self.data(k)
        return tuple(d.cellmap[a][cells[:, a]] for a in range(self.lat.n))

    def expand(self, k: int, arr: np.ndarray) -> np.ndarray:
        """Broadcast per-cube values at level k onto the fine cells of the domain."""
        d = self.data(k)
        return arr[np.ix_(*d.cellmap)]

    def cube(self, k: int, local: tuple) -> DyadicCube:
        d = self.data(k)
        return DyadicCube(self.beta, k, tuple(int(j + l) for j, l in zip(d.j0, local)))

    def parent_local(self, k: int) -> list:
        """Per axis: local index at level k+1 of each local cube at level k."""
        d, up = self.data(k), self.data(k + 1)
        side_up = self.lat.fine_side(k + 1)
        out = []
        for a in range(self.lat.n):
            off_up = _fine_offset(self.grids, self.beta, k + 1, self.lat, a)
            out.append((d.bounds[a][:-1] - off_up) // side_up - up.j0[a])
        return out

    def fine_bounds_of(self, cube: DyadicCube):
        lo = cube.fine_lo(self.grids, self.lat)
        side = self.lat.fine_side(cube.level)
        return lo, tuple(a + side for a in lo)

    def local_of(self, cube: DyadicCube):
        return self.local_of_index(cube.level, cube.index)

    def local_of_index(self, k: int, index: tuple):
        d = self.data(k)
        loc = tuple(j - j0 for j, j0 in zip(index, d.j0))
        if any(not (0 <= l < c) for l, c in zip(loc, d.count)):
            return None
        return loc
