"""Weight characteristics as finite maxima over the enumerated cube family.

Every characteristic is a supremum over cubes of an expression built from
cube integrals of step weights and Carleson-box masses of ``mu``.  The scan
walks grids and levels in canonical order (grid, level, lexicographic index)
and keeps the first maximizer as the witness.  Weights carry their background
value outside the domain, so cubes sticking out of the domain are evaluated
on the whole of R^n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import DyadicCube, ExponentVector, GridFamily, HalfSpaceMeasure, Lattice, LevelGrid, StepFunction
from .errors import ZeroWeightCell
from .maximal import (
    MaximalField,
    geometric_means,
    halfspace_maximal_oracle_field,
    locate,
    start_level,
)
from .numeric import format_number, power, pow2

KINDS = ("A_P", "A'_P", "C0", "Cinf", "S'_P", "B'_P", "RH_P", "Winf_P")


@dataclass
class ConstantReport:
    kind: str
    value: object
    witness: DyadicCube | None
    mode: str = "family"
    per_cube: dict | None = field(default=None, repr=False)

    @property
    def finite(self) -> bool:
        return not (isinstance(self.value, float) and math.isinf(self.value))

    def to_json(self) -> dict:
        wit = None
        if self.witness is not None:
            wit = {"grid": self.witness.grid, "level": self.witness.level, "index": list(self.witness.index)}
        return {"kind": self.kind, "value": format_number(self.value), "witness": wit, "mode": self.mode}


# --------------------------------------------------------------------------
# scanning machinery


def _mode_mul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype == object and b.dtype == object:
        out = a * b
        return _fix(out)
    return a.astype(float) * b.astype(float)


def _fix(arr):
    if arr.dtype != object:
        return arr
    if all(isinstance(v, Fraction) for v in arr.ravel()):
        return arr
    return arr.astype(float)


def _div(num, den):
    """``num / den`` with ``0/0 -> nan`` (skipped) and ``x/0 -> inf``."""
    num, den = np.asarray(num), np.asarray(den)
    exact = num.dtype == object and den.dtype == object
    out = np.empty(num.shape, dtype=object if exact else float)
    pos = den != 0
    if exact:
        out[...] = math.nan
        out[pos] = num[pos] / den[pos]
        out[(~pos) & (num != 0)] = math.inf
        return out
    num, den = num.astype(float), den.astype(float)
    out[...] = math.nan
    out[pos] = num[pos] / den[pos]
    out[(~pos) & (num != 0)] = math.inf
    return out


class Scan:
    """Running max with first maximizer in canonical order, skipping NaNs."""

    def __init__(self, keep_table: bool = False):
        self.best = None
        self.witness = None
        self.table = {} if keep_table else None

    def offer(self, arr: np.ndarray, lg: LevelGrid, k: int):
        flat = arr.reshape(-1)
        for pos, v in enumerate(flat):
            if isinstance(v, float) and math.isnan(v):
                continue
            if self.table is not None:
                self.table[lg.cube(k, np.unravel_index(pos, arr.shape))] = v
            if self.best is None or v > self.best:
                self.best = v
                self.witness = (lg, k, pos, arr.shape)

    def report(self, kind: str, mode: str = "family") -> ConstantReport:
        if self.best is None:
            return ConstantReport(kind, Fraction(0), None, mode, self.table)
        lg, k, pos, shape = self.witness
        cube = lg.cube(k, tuple(int(i) for i in np.unravel_index(pos, shape)))
        return ConstantReport(kind, self.best, cube, mode, self.table)


def level_grids(grids: GridFamily, lat: Lattice, betas: Sequence[int] | None = None) -> list:
    betas = range(grids.size) if betas is None else betas
    return [LevelGrid(grids, b, lat, grids.level_max) for b in betas]


def carleson_table(mu: HalfSpaceMeasure, lg: LevelGrid, k: int, exact: bool | None = None) -> np.ndarray:
    """``mu(Q~)`` for every level-k cube of the grid that meets the domain."""
    d = lg.data(k)
    exact = mu.exact if exact is None else exact
    out = np.zeros(d.count, dtype=object if exact else float)
    if exact:
        out[...] = Fraction(0)
    if not len(mu):
        return out
    key = ("levels", lg.lat.L)
    cells = mu.fine_cells(lg.lat)
    levels = mu._cells.get(key)
    if levels is None:
        levels = np.array([start_level(t, lg.lat.L) for t in mu.ts], dtype=np.int64)
        mu._cells[key] = levels
    loc = locate(lg.lat, lg.grids, lg.beta, k, cells) - np.array(d.j0)
    ok = (levels <= k) & np.all((loc >= 0) & (loc < np.array(d.count)), axis=1)
    if ok.any():
        masses = mu.masses[ok] if exact else mu.masses_float()[ok]
        np.add.at(out, tuple(loc[ok].T), masses)
    return out


def _avg(lg: LevelGrid, f: StepFunction, k: int):
    return lg.integrals(f, k) / lg.volume(k, f.exact)


def check_positive(ws: Sequence[StepFunction]):
    for i, w in enumerate(ws):
        if (w.values == 0).any() or w.background == 0:
            raise ZeroWeightCell(f"weight {i} vanishes on a cell or outside the domain")


def _check_sig(sigs: Sequence[StepFunction]) -> list:
    check_positive(sigs)
    return list(sigs)


def dual_weights(ws: Sequence[StepFunction], ex: ExponentVector) -> list:
    check_positive(ws)
    out = []
    for w, pc in zip(ws, ex.p_conj):
        e = 1 - pc
        bg = power(np.array([w.background], dtype=object if w.exact else float), e)[0]
        out.append(StepFunction(w.lattice, power(w.values, e), bg))
    return out


def product_power(fs: Sequence[StepFunction], exps: Sequence) -> StepFunction:
    vals, bg = None, None
    for f, e in zip(fs, exps):
        pv = power(f.values, e)
        pb = power(np.array([f.background], dtype=object if f.exact else float), e)[0]
        vals = pv if vals is None else _mode_mul(vals, pv)
        bg = pb if bg is None else bg * pb
    if vals.dtype != object:
        bg = float(bg)
    return StepFunction(fs[0].lattice, vals, bg)


def v_weight(ws: Sequence[StepFunction], ex: ExponentVector) -> StepFunction:
    return product_power(ws, ex.ratios())


def _scan(grids, lat, fn: Callable, kind: str, mode="family", betas=None, keep_table=False) -> ConstantReport:
    sc = Scan(keep_table)
    for lg in level_grids(grids, lat, betas):
        for k in lg.levels:
            sc.offer(fn(lg, k), lg, k)
    return sc.report(kind, mode)


# --------------------------------------------------------------------------
# the characteristics


def _grouped_power(bases: list, exps: list) -> np.ndarray:
    """``prod_j bases_j ** exps_j``, multiplying bases with equal exponents first.

    Grouping keeps exact rational results when only the combined base is a
    perfect power, e.g. ``(5/2)**(1/2) (5/8)**(1/2) = 5/4``.
    """
    groups: dict = {}
    for b, e in zip(bases, exps):
        groups[e] = b if e not in groups else _mode_mul(groups[e], b)
    out = None
    for e, b in groups.items():
        t = power(b, e)
        out = t if out is None else _mode_mul(out, t)
    return out




def a_p_constant(ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily, keep_table=False) -> ConstantReport:
    """``sup_Q (avg_Q v)^{1/p} prod_i (avg_Q sigma_i)^{1/p_i'}``."""
    sig = dual_weights(ws, ex)
    v = v_weight(ws, ex)
    lat = ws[0].lattice.base

    def fn(lg, k):
        return _grouped_power([_avg(lg, v, k)] + [_avg(lg, s, k) for s in sig],
                              [1 / ex.p] + [1 / pc for pc in ex.p_conj])

    return _scan(grids, lat, fn, "A_P", keep_table=keep_table)


def a_p_prime_constant(mu: HalfSpaceMeasure, ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily,
                       keep_table=False) -> ConstantReport:
    """``sup_Q (mu(Q~)/|Q|)^{1/p} prod_i (avg_Q sigma_i)^{1/p_i'}``."""
    sig = dual_weights(ws, ex)
    lat = ws[0].lattice.base

    def fn(lg, k):
        first = carleson_table(mu, lg, k) / lg.volume(k, mu.exact)
        return _grouped_power([first] + [_avg(lg, s, k) for s in sig], [1 / ex.p] + [1 / pc for pc in ex.p_conj])

    return _scan(grids, lat, fn, "A'_P", keep_table=keep_table)


def c0_constant(mu: HalfSpaceMeasure, v: StepFunction, grids: GridFamily, keep_table=False) -> ConstantReport:
    """``sup_Q v(Q) / mu(Q~)``."""
    lat = v.lattice.base
    return _scan(grids, lat, lambda lg, k: _div(lg.integrals(v, k), carleson_table(mu, lg, k)), "C0",
                 keep_table=keep_table)


def c_infty_constant(mu: HalfSpaceMeasure, v: StepFunction, grids: GridFamily, keep_table=False) -> ConstantReport:
    """``sup_Q mu(Q~) / v(Q)``."""
    lat = v.lattice.base
    return _scan(grids, lat, lambda lg, k: _div(carleson_table(mu, lg, k), lg.integrals(v, k)), "Cinf",
                 keep_table=keep_table)


def rh_constant(ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily, keep_table=False) -> ConstantReport:
    """``sup_Q prod_i sigma_i(Q)^{p/p_i} / int_Q prod_i sigma_i^{p/p_i}``."""
    sig = dual_weights(ws, ex)
    g = product_power(sig, ex.ratios())
    lat = ws[0].lattice.base

    def fn(lg, k):
        num = None
        for s, r in zip(sig, ex.ratios()):
            t = power(lg.integrals(s, k), r)
            num = t if num is None else _mode_mul(num, t)
        return _div(num, lg.integrals(g, k))

    return _scan(grids, lat, fn, "RH_P", keep_table=keep_table)


def b_prime_constant(mu: HalfSpaceMeasure, ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily,
                     keep_table=False) -> ConstantReport:
    """``sup_Q (mu(Q~)/|Q|)^{1/p} prod_i avg_Q w_i * exp(avg_Q log prod_i w_i^{-1/p_i})`` (float)."""
    check_positive(ws)
    lat = ws[0].lattice.base
    g = product_power([w.as_float() for w in ws], [-1 / float(q) for q in ex.p_i])

    def fn(lg, k):
        vol = float(pow2(k * lat.n))
        out = power(carleson_table(mu, lg, k, exact=False) / vol, 1 / float(ex.p))
        for w in ws:
            out = out * (lg.integrals(w.as_float(), k) / vol)
        return out * geometric_means(g, lg_for(lg, k))[k]

    return _scan(grids, lat, fn, "B'_P", keep_table=keep_table)


def lg_for(lg: LevelGrid, k: int) -> LevelGrid:
    """A view of ``lg`` restricted to the single level ``k`` (for per-level helpers)."""
    view = LevelGrid.__new__(LevelGrid)
    view.__dict__.update(lg.__dict__)
    view.kmin = k
    view.kmax = k
    return view


# -- S' : testing condition ------------------------------------------------


def s_prime_constant(mu: HalfSpaceMeasure, ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily,
                     beta: int = 0, mode: str = "grid", keep_table=False) -> ConstantReport:
    """``sup_Q (int_{Q~} M(sigma chi_Q)^p dmu)^{1/p} / prod_i sigma_i(Q)^{1/p_i}`` over cubes of grid ``beta``.

    ``mode="grid"`` uses the dyadic operator of the same grid; for ``(x,t)`` in
    ``Q~`` only subcubes of ``Q`` matter, so the integrand at an atom is the
    running max of the level products from the atom's start level up to
    ``Q``'s level.  ``mode="oracle"`` uses the brute-force operator and scans
    the standard-grid cubes inside the domain.
    """
    sig = dual_weights(ws, ex)
    lat = ws[0].lattice.base
    if mode == "oracle":
        return _s_prime_oracle(mu, sig, ex, grids, lat, keep_table)
    p = float(ex.p)
    lg = LevelGrid(grids, beta, lat, grids.level_max)
    sc = Scan(keep_table)
    K = len(mu)
    cells = mu.fine_cells(lat) if K else np.zeros((0, lat.n), dtype=np.int64)
    klo = np.array([start_level(t, lat.L) for t in mu.ts], dtype=np.int64)
    masses = mu.masses_float() if K else np.zeros(0)
    running = np.full(K, -np.inf)
    for k in lg.levels:
        d = lg.data(k)
        vol = float(pow2(k * lat.n))
        prod = None
        for s in sig:
            a = np.asarray(lg.integrals(s, k), dtype=float) / vol
            prod = a if prod is None else prod * a
        loc = locate(lat, grids, beta, k, cells) - np.array(d.j0)
        inside = np.all((loc >= 0) & (loc < np.array(d.count)), axis=1)
        val = np.zeros(K)
        if inside.any():
            val[inside] = prod[tuple(loc[inside].T)]
        active = klo <= k
        running = np.where(active, np.maximum(running, val), running)
        num = np.zeros(d.count)
        hit = active & inside
        if hit.any():
            np.add.at(num, tuple(loc[hit].T), running[hit] ** p * masses[hit])
        den = None
        for s, q in zip(sig, ex.p_i):
            t = np.asarray(lg.integrals(s, k), dtype=float) ** (1 / float(q))
            den = t if den is None else den * t
        sc.offer(_div(num ** (1 / p), den), lg, k)
    return sc.report("S'_P", f"grid{beta}")


def s_prime_ratio_oracle(mu: HalfSpaceMeasure, sig: Sequence[StepFunction], ex: ExponentVector, lat: Lattice,
                         cube: DyadicCube, grids: GridFamily):
    """The testing ratio of one cube inside the domain with the brute-force operator."""
    lo = cube.fine_lo(grids, lat)
    side = lat.fine_side(cube.level)
    if any(a < 0 or a + side > lat.nfine for a in lo):
        raise ValueError("oracle testing needs a cube inside the domain")
    from .maximal import restrict

    parts = [restrict(s.as_float(), lo, tuple(a + side for a in lo)) for s in sig]
    of = halfspace_maximal_oracle_field(parts)
    p = float(ex.p)
    num = 0.0
    box = lo, side
    for x, t, mass in zip(mu.xs, mu.ts, mu.masses):
        c = lat.fine_cell(x)
        if all(a <= ci < a + side for a, ci in zip(lo, c)) and 0 <= t < cube.side:
            num += float(of.value(x, t)) ** p * float(mass)
    del box
    den = 1.0
    for s, q in zip(sig, ex.p_i):
        den *= float(s.cube_integral(cube, grids)) ** (1 / float(q))
    return num ** (1 / p) / den if den > 0 else (math.inf if num > 0 else math.nan)


def _s_prime_oracle(mu, sig, ex, grids, lat, keep_table):
    sc = Scan(keep_table)
    lg = LevelGrid(grids, 0, lat, grids.level_max)
    for k in lg.levels:
        d = lg.data(k)
        arr = np.full(d.count, math.nan)
        for loc in np.ndindex(*d.count):
            cube = lg.cube(k, loc)
            lo = cube.fine_lo(grids, lat)
            side = lat.fine_side(k)
            if all(a >= 0 and a + side <= lat.nfine for a in lo):
                arr[loc] = s_prime_ratio_oracle(mu, sig, ex, lat, cube, grids)
        sc.offer(arr, lg, k)
    return sc.report("S'_P", "oracle")


# -- local maximal integrals (W_inf numerators, G integrals) ----------------


def subtree_integrals(lg: LevelGrid, node: list, backgrounds: list, exps: list) -> dict:
    """For every cube ``R`` of the grid: ``int_R prod_i (M_R^i)^{e_i} dx``.

    ``node[i][k]`` is the per-cube value whose running max over subcubes of
    ``R`` containing ``x`` defines ``M_R^i(x)``; cubes that miss the domain
    carry the constant ``backgrounds[i]`` (as do all their subcubes).  Levels
    below ``-L`` are not part of the family, so level ``-L`` cubes are leaves.
    """
    n = lg.lat.n
    out = {}
    kids = {}
    for j in lg.levels:
        if j > lg.kmin:
            par = lg.parent_local(j - 1)
            cnt = np.zeros(lg.data(j).count)
            np.add.at(cnt, tuple(np.meshgrid(*par, indexing="ij")), 1.0)
            kids[j] = cnt
    for top in lg.levels:
        acc = np.zeros(lg.data(top).count)
        rm = [np.asarray(nd[top], dtype=float) for nd in node]
        anc = tuple(np.meshgrid(*[np.arange(c) for c in lg.data(top).count], indexing="ij"))
        for j in range(top, lg.kmin - 1, -1):
            if j < top:
                par = lg.parent_local(j)
                pidx = tuple(np.meshgrid(*par, indexing="ij"))
                rm = [np.maximum(np.asarray(nd[j], dtype=float), r[pidx]) for nd, r in zip(node, rm)]
                anc = tuple(a[pidx] for a in anc)
            vol = float(pow2(j * n))
            if j == lg.kmin:
                term = vol * _prod_pow(rm, exps)
            else:
                free = vol - kids[j] * float(pow2((j - 1) * n))
                term = free * _prod_pow([np.maximum(r, b) for r, b in zip(rm, backgrounds)], exps)
            np.add.at(acc, anc, term)
        out[top] = acc
    return out


def _prod_pow(vals, exps):
    out = None
    for v, e in zip(vals, exps):
        t = v ** float(e)
        out = t if out is None else out * t
    return out


def w_infty_constant(ws: Sequence[StepFunction], ex: ExponentVector, grids: GridFamily, mode: str = "grid",
                     beta: int | None = None, keep_table=False) -> ConstantReport:
    """``sup_Q int_Q prod M(w_i chi_Q)^{p/p_i} / int_Q prod w_i^{p/p_i}``.

    ``grid``: dyadic ``M`` of grid ``beta`` and cubes of that grid (all grids
    when ``beta`` is None, each with its own operator); ``oracle``: brute-force
    ``M`` over lattice cubes, standard-grid cubes inside the domain;
    ``dyadic``: the upper proxy ``6^n sum_beta M^{D_beta}`` on the same cubes.
    """
    lat = ws[0].lattice.base
    r = [float(x) for x in ex.ratios()]
    if mode == "grid":
        g = product_power(ws, ex.ratios())
        sc = Scan(keep_table)
        betas = range(grids.size) if beta is None else [beta]
        for lg in level_grids(grids, lat, betas):
            node = [{k: np.asarray(_avg(lg, w, k), dtype=float) for k in lg.levels} for w in ws]
            nums = subtree_integrals(lg, node, [float(w.background) for w in ws], r)
            for k in lg.levels:
                sc.offer(_div(nums[k], np.asarray(lg.integrals(g, k), dtype=float)), lg, k)
        return sc.report("Winf_P", "grid" if beta is None else f"grid{beta}")
    if mode not in ("oracle", "dyadic"):
        raise ValueError(f"unknown mode {mode}")
    from .maximal import restrict

    sc = Scan(keep_table)
    lg = LevelGrid(grids, 0, lat, grids.level_max)
    g = product_power(ws, ex.ratios())
    for k in lg.levels:
        d = lg.data(k)
        arr = np.full(d.count, math.nan)
        for loc in np.ndindex(*d.count):
            cube = lg.cube(k, loc)
            lo = cube.fine_lo(grids, lat)
            side = lat.fine_side(k)
            hi = tuple(a + side for a in lo)
            if not all(a >= 0 and b <= lat.nfine for a, b in zip(lo, hi)):
                continue
            sl = tuple(slice(a, b) for a, b in zip(lo, hi))
            total = None
            for w, e in zip(ws, r):
                part = restrict(w.as_float(), lo, hi)
                if mode == "oracle":
                    of = halfspace_maximal_oracle_field([part])
                    # base cell values of M at t = 0, repeated onto fine cells
                    mv = of.suffix[1].astype(float)
                    for ax in range(lat.n):
                        mv = np.repeat(mv, 3, axis=ax)
                else:
                    mv = None
                    for b in range(grids.size):
                        fb = MaximalField([part], grids, b).level_table(-lat.L).astype(float)
                        mv = fb if mv is None else mv + fb
                    mv = mv * 6.0**lat.n
                t = mv[sl] ** e
                total = t if total is None else total * t
            num = float(total.sum()) * float(lat.fine_volume)
            arr[loc] = num / float(g.cube_integral(cube, grids))
        sc.offer(arr, lg, k)
    return sc.report("Winf_P", mode)


def geometric_local_integrals(g: StepFunction, grids: GridFamily, beta: int = 0) -> tuple:
    """Per level and cube ``R`` of grid ``beta``: ``int G(g chi_R)`` and ``int_R g``.

    For ``x`` in ``R`` only subcubes of ``R`` have a positive geometric mean of
    ``g chi_R``, and ``G(g chi_R)`` vanishes off ``R``.
    """
    lat = g.lattice.base
    lg = LevelGrid(grids, beta, lat, grids.level_max)
    node = geometric_means(g, lg)
    gint = subtree_integrals(lg, [node], [float(g.background)], [1.0])
    mass = {k: lg.integrals(g.as_float(), k) for k in lg.levels}
    return lg, gint, mass


def all_constants(mu, ws, ex, grids, w_mode: str = "grid") -> dict:
    """The eight characteristics of an instance (S' and W_inf per standard grid / all grids)."""
    v = v_weight(ws, ex)
    return {
        "A_P": a_p_constant(ws, ex, grids),
        "A'_P": a_p_prime_constant(mu, ws, ex, grids),
        "C0": c0_constant(mu, v, grids),
        "Cinf": c_infty_constant(mu, v, grids),
        "S'_P": max((s_prime_constant(mu, ws, ex, grids, b) for b in range(grids.size)), key=lambda r: r.value),
        "B'_P": b_prime_constant(mu, ws, ex, grids),
        "RH_P": rh_constant(ws, ex, grids),
        "Winf_P": w_infty_constant(ws, ex, grids, mode=w_mode),
    }
