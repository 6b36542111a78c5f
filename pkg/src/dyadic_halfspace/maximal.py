"""Dyadic and brute-force maximal operators on the boundary and the upper half-space.

For one grid the multilinear dyadic maximal function is computed from the
per-level tables of products of averages ``P_k`` over the cubes that meet the
domain, and the running maxima ``R_k = max(P_k, R_{k+1}(parent))``.  Since
``R_k`` is constant on level-``k`` cubes, the half-space value at ``(x, t)`` is
``R_{k(t)}`` of the level-``k(t)`` cube containing ``x`` with
``k(t) = max(-L, ceil(log2 t))``.  Levels above the stored range only ever
contribute ``prod(mass_i) * 2**(-k n m)`` (the single cube containing the
domain), which is decreasing in ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import (
    FINE,
    GridFamily,
    HalfSpaceMeasure,
    Lattice,
    LevelGrid,
    StepFunction,
    _fine_offset,
    check_same_lattice,
    level_range,
)
from .errors import TooLarge
from .numeric import ceil_log2, exact_ge, exact_gt, exact_pow, power, pow2

ORACLE_GUARD = 10**7


def common_mode(fs: Sequence[StepFunction]) -> list:
    """Convert to float if any input is float; otherwise keep exact."""
    check_same_lattice(fs)
    if all(f.exact for f in fs):
        return list(fs)
    return [f.as_float() for f in fs]


def _require_compact(fs):
    for f in fs:
        if f.background != 0:
            raise ValueError("maximal operators take functions vanishing outside the domain")


def start_level(t, L: int) -> int:
    """Lowest admissible level for height ``t``: cubes with side strictly above ``t``.

    The strict side condition makes ``{M > lam}`` exactly a union of half-open
    Carleson boxes ``Q x [0, l(Q))``, also at heights that are powers of two.
    """
    if t == 0:
        return -L
    t = Fraction(t)
    k = ceil_log2(t)
    if pow2(k) == t:
        k += 1
    return max(-L, k)


def locate(lat: Lattice, grids: GridFamily, beta: int, k: int, cells: np.ndarray):
    """Global cube indices at level k of fine cells ``cells`` (K, n), any position."""
    side = lat.fine_side(k)
    cols = [(cells[:, d] - _fine_offset(grids, beta, k, lat, d)) // side for d in range(lat.n)]
    return np.stack(cols, axis=1) if len(cells) else np.zeros((0, lat.n), dtype=np.int64)


def cover_level(grids: GridFamily, beta: int, lat: Lattice, mu: HalfSpaceMeasure | None = None) -> int:
    """First level whose domain cube ``T`` contains the domain and ``T~`` every atom of ``mu``."""
    from .core import top_level

    k = top_level(grids, beta, lat)
    if mu is None or not len(mu):
        return k
    cells = mu.fine_cells(lat)
    tmax = max(Fraction(t) for t in mu.ts)
    while True:
        dom = _domain_cube(lat, grids, beta, k)
        if dom is not None and pow2(k) > tmax:
            idx = locate(lat, grids, beta, k, cells)
            if (idx == np.array(dom)).all():
                return k
        k += 1


def _domain_cube(lat, grids, beta, k):
    """Index of the level-k cube containing the domain, or None."""
    ranges = level_range(grids, beta, k, lat)
    if all(c == 1 for _, c in ranges):
        return tuple(j for j, _ in ranges)
    return None


class MaximalField:
    """Multilinear dyadic maximal function of one grid, all heights at once."""

    def __init__(self, fs: Sequence[StepFunction], grids: GridFamily, beta: int = 0, kmax: int | None = None):
        fs = common_mode(fs)
        _require_compact(fs)
        self.fs = fs
        self.m = len(fs)
        self.lat = fs[0].lattice.base
        self.grids = grids
        self.beta = beta
        self.exact = fs[0].exact
        self.lg = LevelGrid(grids, beta, self.lat, kmax)
        self.masses = [f.integral() for f in fs]
        self.mass_product = _prod(self.masses, self.exact)
        self.products: dict = {}
        for k in self.lg.levels:
            vol = self.lg.volume(k, self.exact)
            arr = None
            for f in fs:
                avg = self.lg.integrals(f, k) / vol
                arr = avg if arr is None else arr * avg
            self.products[k] = arr
        self.running: dict = {}
        top = self.lg.kmax
        self.running[top] = self.products[top]
        for k in range(top - 1, self.lg.kmin - 1, -1):
            par = self.lg.parent_local(k)
            up = self.running[k + 1][np.ix_(*par)]
            self.running[k] = np.maximum(self.products[k], up)

    # -- tail above the stored levels -------------------------------------
    def cover_value(self, k: int):
        """Product of averages over the level-k cube containing the domain (k >= top)."""
        v = self.mass_product / pow2(k * self.lat.n * self.m)
        return v if self.exact else float(v)

    def _zero(self):
        return Fraction(0) if self.exact else 0.0

    def _point_slow(self, cell: np.ndarray, k0: int):
        """Value at a fine cell for start level k0, for cells outside the stored tables."""
        lat = self.lat
        k = k0
        while True:
            idx = tuple(locate(lat, self.grids, self.beta, k, cell[None, :])[0])
            if k <= self.lg.kmax:
                loc = self.lg.local_of_index(k, idx)
                if loc is not None:
                    return self.running[k][loc]
            else:
                dom = _domain_cube(lat, self.grids, self.beta, k)
                if dom is not None and dom == idx:
                    return self.cover_value(k)
            k += 1

    def values_at_cells(self, cells: np.ndarray, start_levels: np.ndarray) -> np.ndarray:
        """Half-space maximal values at fine cells (K, n) with per-point start levels."""
        K = len(cells)
        out = np.empty(K, dtype=object if self.exact else float)
        if K == 0:
            return out
        cells = np.asarray(cells, dtype=np.int64)
        start_levels = np.asarray(start_levels, dtype=np.int64)
        done = np.zeros(K, dtype=bool)
        for k in np.unique(start_levels):
            sel = np.nonzero(start_levels == k)[0]
            if k > self.lg.kmax:
                continue
            d = self.lg.data(int(k))
            glob = locate(self.lat, self.grids, self.beta, int(k), cells[sel])
            loc = glob - np.array(d.j0)
            ok = np.all((loc >= 0) & (loc < np.array(d.count)), axis=1)
            if ok.any():
                good = sel[ok]
                out[good] = self.running[int(k)][tuple(loc[ok].T)]
                done[good] = True
        for i in np.nonzero(~done)[0]:
            out[i] = self._point_slow(cells[i], int(start_levels[i]))
        return out

    def values_at(self, mu: HalfSpaceMeasure) -> np.ndarray:
        """``M^D(f)(x, t)`` at every atom of ``mu``."""
        cells = mu.fine_cells(self.lat)
        ks = np.array([start_level(t, self.lat.L) for t in mu.ts], dtype=np.int64)
        return self.values_at_cells(cells, ks)

    def value(self, x: Sequence, t=0):
        cell = np.array([self.lat.fine_cell(x)], dtype=np.int64)
        return self.values_at_cells(cell, np.array([start_level(t, self.lat.L)]))[0]

    def level_table(self, k: int) -> np.ndarray:
        """Running max at level ``k`` broadcast to the fine cells of the domain."""
        return self.lg.expand(k, self.running[k])

    @property
    def boundary_values(self) -> StepFunction:
        """``M^D(f)`` on the fine lattice (``t = 0``)."""
        return StepFunction(self.lat.fine, self.level_table(self.lg.kmin))

    def boundary_integral(self, q, u: StepFunction):
        """``int_{R^n} (M^D f)^q u dx`` for a weight ``u`` (any background)."""
        return tree_integral(self.lg, self.running, q, u, self.cover_tail(q, u))

    def cover_tail(self, q, u: StepFunction):
        """Contribution of the shells ``Q_l minus Q_{l-1}`` above the stored levels."""
        if u.background == 0 or self.mass_product == 0:
            return 0 if u.exact and self.exact else 0.0
        n, m = self.lat.n, self.m
        k0 = self.lg.kmax + 1
        expo = n * (1 - m * q)
        r = exact_pow(Fraction(2), expo) if isinstance(q, Fraction) else 2.0**expo
        if not r < 1:
            return math.inf
        first = exact_pow(Fraction(2), expo * k0) if isinstance(q, Fraction) else 2.0 ** (expo * k0)
        series = first / (1 - r)
        coef = u.background * (1 - Fraction(1, 2**n)) * exact_pow(self.mass_product, q)
        return coef * series


def _prod(vals, exact):
    out = Fraction(1) if exact else 1.0
    for v in vals:
        out = out * v
    return out


def tree_integral(lg: LevelGrid, running: dict, q, u: StepFunction, tail=0):
    """``int (R)^q u`` where ``R`` is the piecewise value carried by the cube tree.

    A point in a level-k cube that meets the domain but whose level-(k-1)
    cube does not takes the value ``running[k]`` of that cube; points in
    level ``-L`` cubes take ``running[-L]``.  ``tail`` adds the part outside the
    top stored cube.
    """
    total = None
    for k in lg.levels:
        uk = lg.integrals(u, k)
        if k > lg.kmin:
            par = lg.parent_local(k - 1)
            child = lg.integrals(u, k - 1)
            own = uk - _scatter_sum(child, par, uk.shape)
        else:
            own = uk
        term = (power(running[k], q) * own).sum()
        total = term if total is None else total + term
    return total + tail


def _scatter_sum(child: np.ndarray, par: list, shape: tuple) -> np.ndarray:
    """Sum child values into their parents' slots."""
    out = np.zeros(shape, dtype=child.dtype)
    if child.dtype == object:
        out[...] = Fraction(0)
    idx = tuple(np.meshgrid(*par, indexing="ij"))
    np.add.at(out, idx, child)
    return out


# --------------------------------------------------------------------------
# public operations


def dyadic_maximal_boundary(fs: Sequence[StepFunction], grids: GridFamily, beta: int = 0) -> MaximalField:
    return MaximalField(fs, grids, beta)


def halfspace_dyadic_maximal(fs, grids: GridFamily, beta: int, x, t=0, field: MaximalField | None = None):
    field = field or MaximalField(fs, grids, beta)
    return field.value(x, t)


def level_set_measure(mu: HalfSpaceMeasure, fs, grids: GridFamily, beta: int, lam, strict: bool,
                      field: MaximalField | None = None):
    """Mass of atoms with ``M^D f > lam`` (strict) or ``>= lam``."""
    field = field or MaximalField(fs, grids, beta)
    vals = field.values_at(mu)
    if not len(mu):
        return 0
    hit = exact_gt(vals, lam) if strict else exact_ge(vals, lam)
    ms = mu.masses if (field.exact and mu.exact) else mu.masses_float()
    return ms[hit].sum() if hit.any() else (Fraction(0) if field.exact and mu.exact else 0.0)


# --------------------------------------------------------------------------
# brute-force operator over lattice-corner cubes


@dataclass
class OracleField:
    """Sup over all lattice-corner cubes inside the domain, tabulated per cell and side."""

    lat: Lattice
    exact: bool
    suffix: list  # suffix[s] : per base cell, max over cubes with side >= s (s = 1..N)
    mass_product: object
    m: int

    def value_cells(self, cells: np.ndarray, ts) -> np.ndarray:
        """Values at base-lattice cells (K, n) and heights ``ts``."""
        N, h = self.lat.N, Fraction(1, 2**self.lat.L)
        D = self.lat.side
        out = np.empty(len(cells), dtype=object if self.exact else float)
        for i, (c, t) in enumerate(zip(cells, ts)):
            t = Fraction(t)
            s = math.floor(t / h) + 1
            best = self.suffix[s][tuple(c)] if s <= N else 0
            side = max(D, t)
            cov = self.mass_product / side ** (self.lat.n * self.m)
            if not self.exact:
                cov = float(cov)
            out[i] = max(best, cov)
        return out

    def value(self, x, t=0):
        lat = self.lat
        cell = tuple(math.floor(Fraction(c) * 2**lat.L) for c in x)
        if any(not (0 <= c < lat.N) for c in cell):
            raise ValueError("oracle queries must lie in the domain")
        return self.value_cells(np.array([cell]), [t])[0]


def oracle_cube_count(lat: Lattice) -> int:
    N = lat.N
    return sum((N - s + 1) ** lat.n for s in range(1, N + 1))


def halfspace_maximal_oracle_field(fs: Sequence[StepFunction]) -> OracleField:
    fs = common_mode(fs)
    _require_compact(fs)
    lat = fs[0].lattice.base
    if oracle_cube_count(lat) > ORACLE_GUARD:
        raise TooLarge(f"{oracle_cube_count(lat)} lattice cubes exceed the guard {ORACLE_GUARD}")
    exact = fs[0].exact
    N, n = lat.N, lat.n
    best = {}
    for s in range(1, N + 1):
        starts = np.arange(N - s + 1) * FINE
        bounds_lo = [starts] * n
        prod = None
        vol = Fraction(s**n, 2 ** (lat.L * n))
        vol = vol if exact else float(vol)
        for f in fs:
            sums = _box_sums(f, bounds_lo, s * FINE)
            avg = sums / vol
            prod = avg if prod is None else prod * avg
        # cell c is covered by starts a with c - s + 1 <= a <= c: sliding max of width s
        cellmax = prod
        for ax in range(n):
            cellmax = _sliding_cover_max(cellmax, s, ax, N)
        best[s] = cellmax
    suffix = [None] * (N + 2)
    suffix[N + 1] = None
    run = None
    for s in range(N, 0, -1):
        run = best[s] if run is None else np.maximum(run, best[s])
        suffix[s] = run
    masses = [f.integral() for f in fs]
    return OracleField(lat, exact, suffix, _prod(masses, exact), len(fs))


def _box_sums(f: StepFunction, lows: list, width: int) -> np.ndarray:
    """Integrals over boxes ``prod [lo_d, lo_d + width)`` for all start combinations."""
    P = f.prefix
    n = len(lows)
    out = None
    for corner in range(2**n):
        idx, sign = [], 1
        for d in range(n):
            if corner >> d & 1:
                idx.append(lows[d] + width)
            else:
                idx.append(lows[d])
                sign = -sign
        term = P[np.ix_(*idx)]
        out = term * sign if out is None else out + term * sign
    vol = f.lattice.fine_volume if f.exact else float(f.lattice.fine_volume)
    return out * vol


def _sliding_cover_max(arr: np.ndarray, s: int, ax: int, N: int) -> np.ndarray:
    """Along ``ax``: cell c gets max of ``arr[a]`` over starts a in [c-s+1, c] (valid ones)."""
    nstart = arr.shape[ax]
    shape = list(arr.shape)
    shape[ax] = N
    out = np.empty(shape, dtype=arr.dtype)
    for c in range(N):
        lo, hi = max(0, c - s + 1), min(c, nstart - 1)
        sl = [slice(None)] * arr.ndim
        sl[ax] = slice(lo, hi + 1)
        tgt = [slice(None)] * arr.ndim
        tgt[ax] = c
        out[tuple(tgt)] = arr[tuple(sl)].max(axis=ax)
    return out


def halfspace_maximal_oracle(fs: Sequence[StepFunction], x, t=0):
    return halfspace_maximal_oracle_field(fs).value(x, t)


# --------------------------------------------------------------------------
# weighted dyadic and geometric maximal operators


def _running_max(lg: LevelGrid, node: dict) -> dict:
    run = {lg.kmax: node[lg.kmax]}
    for k in range(lg.kmax - 1, lg.kmin - 1, -1):
        run[k] = np.maximum(node[k], run[k + 1][np.ix_(*lg.parent_local(k))])
    return run


def weighted_dyadic_maximal(f: StepFunction, sigma: StepFunction, grids: GridFamily, beta: int = 0) -> StepFunction:
    """``sup_{x in Q} (1/sigma(Q)) int_Q f sigma`` on the fine lattice; ``sigma(Q) = 0`` skipped."""
    f, sigma = common_mode([f, sigma])
    _require_compact([f])
    lat = f.lattice.base
    lg = LevelGrid(grids, beta, lat)
    fs = StepFunction(lat.fine, f.fine_values * sigma.fine_values, 0)
    node = {}
    zero = Fraction(0) if f.exact else 0.0
    for k in lg.levels:
        num = lg.integrals(fs, k)
        den = lg.integrals(sigma, k)
        pos = den != 0
        ratio = np.empty(num.shape, dtype=num.dtype)
        ratio[...] = zero
        ratio[pos] = num[pos] / den[pos]
        node[k] = ratio
    run = _running_max(lg, node)
    return StepFunction(lat.fine, lg.expand(lg.kmin, run[lg.kmin]))


def geometric_means(f: StepFunction, lg: LevelGrid) -> dict:
    """``exp(avg_Q log f)`` per level and cube (0 when f vanishes on part of Q)."""
    lat = lg.lat
    fv = f.fine_values.astype(float)
    zero_ind = StepFunction(lat.fine, (fv == 0).astype(float), 1.0 if f.background == 0 else 0.0)
    with np.errstate(divide="ignore"):
        logs = np.where(fv > 0, np.log(np.where(fv > 0, fv, 1.0)), 0.0)
    bg = float(f.background)
    # step functions are nonnegative: integrate log f as log+ minus log-
    log_pos = StepFunction(lat.fine, np.maximum(logs, 0.0), 0.0)
    log_neg = StepFunction(lat.fine, np.maximum(-logs, 0.0), 0.0)
    out = {}
    for k in lg.levels:
        zeros = lg.integrals(zero_ind, k)
        s = lg.integrals(log_pos, k) - lg.integrals(log_neg, k)
        if bg > 0 and math.log(bg) != 0:
            # background log contributes log(b) times the outside volume
            ones = StepFunction(lat.fine, np.zeros_like(fv), 1.0)
            s = s + math.log(bg) * lg.integrals(ones, k)
        vol = float(pow2(k * lat.n))
        out[k] = np.where(zeros > 0, 0.0, np.exp(s / vol))
    return out


def geometric_maximal(f: StepFunction, grids: GridFamily, beta: int = 0) -> StepFunction:
    """Dyadic geometric maximal function ``sup_{x in Q} exp(avg_Q log f)`` (float)."""
    lat = f.lattice.base
    lg = LevelGrid(grids, beta, lat)
    node = geometric_means(f, lg)
    run = _running_max(lg, node)
    return StepFunction(lat.fine, lg.expand(lg.kmin, run[lg.kmin]))


def geometric_maximal_integral(f: StepFunction, grids: GridFamily, beta: int = 0):
    """``int_{R^n} G f`` for f vanishing outside the domain.

    Any grid cube leaving the domain contains a zero region, so ``G f``
    vanishes off the domain and the integral is a fine-cell sum.
    """
    _require_compact([f])
    g = geometric_maximal(f, grids, beta)
    return float(g.values.astype(float).sum()) * float(f.lattice.fine_volume)


def restrict(f: StepFunction, lo_f: Sequence[int], hi_f: Sequence[int]) -> StepFunction:
    """``f chi_R`` for the fine box ``R = [lo_f, hi_f)`` (fine lattice result)."""
    lat = f.lattice
    v = f.fine_values.copy()
    mask = np.zeros(v.shape, dtype=bool)
    sl = tuple(slice(max(0, a), max(0, min(b, lat.nfine))) for a, b in zip(lo_f, hi_f))
    mask[sl] = True
    zero = Fraction(0) if v.dtype == object else 0.0
    v[~mask] = zero
    return StepFunction(lat.fine, v, 0)
