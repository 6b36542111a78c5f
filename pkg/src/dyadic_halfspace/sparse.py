"""Stopping-time Calderón–Zygmund decomposition of the half-space maximal function.

For a threshold index ``k`` the selected cubes are the maximal cubes of one grid
with ``prod_i avg(f_i, Q) > a**k``, ``a = 2**(m (n+1))``.  Selection runs top-down
from the stored top level of the grid, carrying an owner table so each cube
knows which selected cube (if any) contains it.  The thresholds run from
``k_min`` (largest ``k`` with ``a**k`` below the product over the top cover cube
``T``) to ``k_max`` (largest ``k`` with ``a**k`` below the global maximum); below
``k_min`` the selection would only return ever larger cubes around ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import DyadicCube, GridFamily, HalfSpaceMeasure, LevelGrid, StepFunction
from .maximal import MaximalField, cover_level, locate, start_level
from .numeric import ceil_log2, exact_gt, is_exact, leq, pow2, power


def base_a(m: int, n: int) -> int:
    return 2 ** (m * (n + 1))


def largest_power_below(value, c: int) -> int | None:
    """Largest k with ``2**(c k) < value``; None for ``value == 0``."""
    if value <= 0:
        return None
    e = ceil_log2(Fraction(value))
    return (e - 1) // c


@dataclass
class SparseCube:
    k: int
    cube: DyadicCube
    value: object
    local: tuple
    children: list = field(default_factory=list)
    parent: int | None = None


class SparseFamily:
    """Selected cubes for all thresholds, with ``E_Q`` and ``Ê_Q`` kept symbolic."""

    def __init__(self, field_: MaximalField, cover: int):
        self.field = field_
        self.lg: LevelGrid = field_.lg
        self.lat = field_.lat
        self.grids = field_.grids
        self.beta = field_.beta
        self.m = field_.m
        self.exact = field_.exact
        self.a = base_a(self.m, self.lat.n)
        self.cover = cover
        self.cubes: list[SparseCube] = []
        self.levels: dict = {}
        self.owner: dict = {}
        c = self.m * (self.lat.n + 1)
        T = field_.products[cover].reshape(-1)
        self.kmin = largest_power_below(T[0], c) if T.size == 1 else None
        gmax = max((arr.max() for arr in field_.products.values() if arr.size), default=0)
        self.kmax = largest_power_below(gmax, c)
        if self.kmin is None or self.kmax is None:
            self.kmin, self.kmax = 0, -1
        for k in range(self.kmin, self.kmax + 1):
            self._select(k)
        self._link()

    # -- construction ------------------------------------------------------
    def threshold(self, k: int):
        return Fraction(self.a) ** k

    def _select(self, k: int):
        lg, P = self.lg, self.field.products
        thr = self.threshold(k)
        own_up = None
        owners = {}
        ids = []
        for lev in range(lg.kmax, lg.kmin - 1, -1):
            shape = P[lev].shape
            inherited = np.full(shape, -1, dtype=np.int64) if own_up is None else own_up[np.ix_(*lg.parent_local(lev))]
            hit = exact_gt(P[lev], thr) & (inherited < 0)
            if lev == lg.kmax and hit.any():
                raise AssertionError("threshold selected the top stored cube; cover level too low")
            own = inherited.copy()
            for loc in zip(*np.nonzero(hit)):
                loc = tuple(int(i) for i in loc)
                cid = len(self.cubes)
                self.cubes.append(SparseCube(k, lg.cube(lev, loc), P[lev][loc], loc))
                own[loc] = cid
                ids.append(cid)
            owners[lev] = own
            own_up = own
        self.levels[k] = ids
        self.owner[k] = owners

    def _link(self):
        for k in range(self.kmin, self.kmax):
            for cid in self.levels[k + 1]:
                sc = self.cubes[cid]
                pid = int(self.owner[k][sc.cube.level][sc.local])
                sc.parent = pid
                self.cubes[pid].children.append(cid)

    # -- measures ----------------------------------------------------------
    def __len__(self):
        return len(self.cubes)

    def volume(self, cid: int):
        return self.cubes[cid].cube.volume()

    def fine_volume(self, cid: int) -> int:
        return self.lat.fine_side(self.cubes[cid].cube.level) ** self.lat.n

    def e_measure(self, cid: int):
        """``|E_Q| = |Q| - sum of child cubes``."""
        return self.volume(cid) - sum((self.volume(c) for c in self.cubes[cid].children), Fraction(0))

    def omega_measure(self, k: int):
        return sum((self.volume(c) for c in self.levels.get(k, [])), Fraction(0))

    def sparsity_ratio(self, cid: int) -> Fraction:
        """``|Omega_{k+1} ∩ Q| / |Q|`` via integer fine counts."""
        inner = sum(self.fine_volume(c) for c in self.cubes[cid].children)
        return Fraction(inner, self.fine_volume(cid))

    def omega_cells(self, k: int) -> np.ndarray:
        """Fine cells of the domain lying in ``Omega_k``."""
        return self.lg.expand(self.lg.kmin, self.owner[k][self.lg.kmin]) >= 0

    def carleson_masses(self, mu: HalfSpaceMeasure) -> list:
        """``mu(Q~)`` for every family cube, in family order."""
        zero = Fraction(0) if mu.exact else 0.0
        out = [zero] * len(self.cubes)
        if not len(mu) or not self.cubes:
            return out
        cells = mu.fine_cells(self.lat)
        levels = np.array([start_level(t, self.lat.L) for t in mu.ts])
        by_level: dict = {}
        for cid, sc in enumerate(self.cubes):
            by_level.setdefault(sc.cube.level, []).append(cid)
        for lev, cids in by_level.items():
            idx = locate(self.lat, self.grids, self.beta, lev, cells)
            ok = levels <= lev
            table = {}
            for a in np.nonzero(ok)[0]:
                key = tuple(int(v) for v in idx[a])
                table[key] = table.get(key, zero) + mu.masses[a]
            for cid in cids:
                out[cid] = table.get(self.cubes[cid].cube.index, zero)
        return out

    def e_hat_masses(self, mu: HalfSpaceMeasure, box: list | None = None) -> list:
        """``mu(Ê_Q) = mu(Q~) - sum_children mu(Q~')``."""
        box = self.carleson_masses(mu) if box is None else box
        return [box[c] - sum((box[d] for d in sc.children), 0 * box[c]) for c, sc in enumerate(self.cubes)]

    def hat_owner(self, k: int, cells: np.ndarray, levels: np.ndarray) -> np.ndarray:
        """Id of the selected threshold-k cube whose Carleson box holds each point, or -1."""
        out = np.full(len(cells), -1, dtype=np.int64)
        if k not in self.owner:
            return out
        for lev in np.unique(levels):
            lev = int(lev)
            sel = np.nonzero(levels == lev)[0]
            if lev > self.lg.kmax:
                continue
            lev_c = max(lev, self.lg.kmin)
            d = self.lg.data(lev_c)
            loc = locate(self.lat, self.grids, self.beta, lev_c, cells[sel]) - np.array(d.j0)
            ok = np.all((loc >= 0) & (loc < np.array(d.count)), axis=1)
            if ok.any():
                out[sel[ok]] = self.owner[k][lev_c][tuple(loc[ok].T)]
        return out

    def e_hat_owner(self, cells: np.ndarray, levels: np.ndarray) -> np.ndarray:
        """Id of the family cube ``Q`` with the point in ``Ê_Q`` (the deepest threshold), or -1."""
        out = np.full(len(cells), -1, dtype=np.int64)
        for k in range(self.kmin, self.kmax + 1):
            o = self.hat_owner(k, cells, levels)
            out = np.where(o >= 0, o, out)
        return out

    def as_dict(self) -> dict:
        from .numeric import format_number

        cubes = []
        for cid, sc in enumerate(self.cubes):
            cubes.append(
                {
                    "k": sc.k,
                    "cube": sc.cube.as_dict(),
                    "product": format_number(sc.value),
                    "volume": format_number(self.volume(cid)),
                    "E_measure": format_number(self.e_measure(cid)),
                    "sparsity_ratio": format_number(self.sparsity_ratio(cid)),
                    "children": len(sc.children),
                }
            )
        return {
            "a": self.a,
            "grid": self.beta,
            "k_min": self.kmin if self.cubes else None,
            "k_max": self.kmax if self.cubes else None,
            "levels": {str(k): len(v) for k, v in self.levels.items()},
            "cubes": cubes,
        }


def decompose(fs: Sequence[StepFunction], grids: GridFamily, beta: int = 0,
              mu: HalfSpaceMeasure | None = None) -> SparseFamily:
    """Full decomposition; with ``mu`` the top cover cube is raised until ``T~`` holds every atom."""
    lat = fs[0].lattice.base
    cover = cover_level(grids, beta, lat, mu)
    field_ = MaximalField(fs, grids, beta, kmax=cover + 2)
    return SparseFamily(field_, cover)


def select_level_cubes(fs: Sequence[StepFunction], grids: GridFamily, beta: int, k: int) -> list:
    """Maximal cubes with ``prod avg > a**k`` (any integer k, selection from the top stored level)."""
    lat = fs[0].lattice.base
    cover = cover_level(grids, beta, lat)
    field_ = MaximalField(fs, grids, beta, kmax=cover + 2)
    fam = SparseFamily.__new__(SparseFamily)
    fam.field, fam.lg, fam.lat, fam.grids, fam.beta = field_, field_.lg, lat, grids, beta
    fam.m, fam.exact, fam.a = field_.m, field_.exact, base_a(field_.m, lat.n)
    fam.cubes, fam.levels, fam.owner = [], {}, {}
    top_val = field_.products[field_.lg.kmax].reshape(-1)[0]
    if not exact_gt(np.array([top_val], dtype=object), fam.threshold(k))[0]:
        fam._select(k)
        return [fam.cubes[c].cube for c in fam.levels[k]]
    raise ValueError(f"threshold index {k} is below the decomposition range of this domain")


# --------------------------------------------------------------------------
# checks


@dataclass
class CheckReport:
    name: str
    checked: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def invariant_report(fam: SparseFamily) -> CheckReport:
    """Window, disjointness, nesting, sparsity and E_Q accounting, all exact."""
    bad = []
    win = Fraction(2 ** (fam.m * fam.lat.n))
    for cid, sc in enumerate(fam.cubes):
        thr = fam.threshold(sc.k)
        v = sc.value
        if not (v > thr and v <= win * thr):
            if is_exact(v) or not (float(v) > float(thr) * (1 - 1e-12) and float(v) <= float(win * thr) * (1 + 1e-12)):
                bad.append(("window", cid))
        if fam.sparsity_ratio(cid) > Fraction(1, 2):
            bad.append(("sparsity", cid))
        if 2 * fam.e_measure(cid) < fam.volume(cid):
            bad.append(("E_Q", cid))
        # nested accounting: children are inside Q and at threshold k+1
        lo, hi = fam.lg.fine_bounds_of(sc.cube)
        for c in sc.children:
            clo, chi = fam.lg.fine_bounds_of(fam.cubes[c].cube)
            if fam.cubes[c].k != sc.k + 1 or any(a < b for a, b in zip(clo, lo)) or any(a > b for a, b in zip(chi, hi)):
                bad.append(("nesting", cid, c))
    for k in range(fam.kmin, fam.kmax + 1):
        ids = fam.levels[k]
        # disjointness at fixed k through the owner tables: every selected cube owns itself
        for cid in ids:
            sc = fam.cubes[cid]
            if fam.owner[k][sc.cube.level][sc.local] != cid:
                bad.append(("disjoint", cid))
        if k + 1 in fam.levels and not (fam.omega_cells(k + 1) <= fam.omega_cells(k)).all():
            bad.append(("omega_nesting", k))
    # E_Q pairwise disjoint across the family and sum |E_Q| = |Omega_kmin|
    if fam.cubes:
        total = sum((fam.e_measure(c) for c in range(len(fam))), Fraction(0))
        if total != fam.omega_measure(fam.kmin):
            bad.append(("E_total", total, fam.omega_measure(fam.kmin)))
    return CheckReport("invariants", len(fam.cubes), bad)


def sample_heights(fam: SparseFamily) -> list:
    """0, every stored dyadic side, and the midpoints between consecutive sides."""
    out = [Fraction(0)]
    for lev in fam.lg.levels:
        out.append(pow2(lev))
        out.append(pow2(lev) * Fraction(3, 2))
    return out


def level_set_identity_check(fam: SparseFamily, mu: HalfSpaceMeasure | None = None) -> CheckReport:
    """``{M > a^k} = U_j Q~_j^k`` at atoms and at every fine-cell center x sample height."""
    field_ = fam.field
    lat = fam.lat
    bad = []
    checked = 0
    ks = list(range(fam.kmin, fam.kmax + 2)) if fam.cubes else []
    # lattice samples: the value at (center, t) depends only on the level-k(t) cube of the center
    for t in sample_heights(fam):
        lev = start_level(t, lat.L)
        if lev > fam.lg.kmax:
            continue
        vals = field_.running[lev]
        ncells = lat.nfine**lat.n
        for k in ks:
            above = exact_gt(vals, fam.threshold(k))
            covered = fam.owner[k][lev] >= 0 if k in fam.owner else np.zeros(vals.shape, bool)
            mism = above != covered
            checked += ncells
            if mism.any():
                cells = fam.lg.expand(lev, mism)
                bad.append(("lattice", str(t), k, int(cells.sum())))
    if mu is not None and len(mu):
        cells = mu.fine_cells(lat)
        levels = np.array([start_level(t, lat.L) for t in mu.ts])
        vals = field_.values_at_cells(cells, levels)
        for k in ks:
            above = exact_gt(vals, fam.threshold(k))
            covered = fam.hat_owner(k, cells, levels) >= 0
            checked += len(mu)
            for i in np.nonzero(above != covered)[0]:
                bad.append(("atom", int(i), k))
    return CheckReport("level_set_identity", checked, bad)


def sparse_domination_check(fam: SparseFamily, q, cells: np.ndarray, ts: Sequence) -> CheckReport:
    """``M^q <= sum_Q (a avg_Q)^q chi_{Ê_Q} <= a^q sum_Q avg_Q^q chi_{Q~}`` at sample points.

    Points outside ``Omega^_{k_min}`` are outside the family's reach and skipped.
    """
    field_ = fam.field
    lat = fam.lat
    levels = np.array([start_level(t, lat.L) for t in ts], dtype=np.int64)
    vals = field_.values_at_cells(cells, levels)
    bad = []
    if not fam.cubes:
        return CheckReport("sparse_domination", 0, [("nonzero", i) for i, v in enumerate(vals) if v != 0])
    aq = Fraction(fam.a) ** q if is_exact(q) else float(fam.a) ** float(q)
    powv = [power(np.array([sc.value], dtype=object if fam.exact else float), q)[0] for sc in fam.cubes]
    ehat = fam.e_hat_owner(cells, levels)
    owners = {k: fam.hat_owner(k, cells, levels) for k in range(fam.kmin, fam.kmax + 1)}
    checked = 0
    for i in range(len(cells)):
        if ehat[i] < 0:
            continue
        checked += 1
        lhs = power(np.array([vals[i]], dtype=object if fam.exact else float), q)[0]
        cid = int(ehat[i])
        k = fam.cubes[cid].k
        middle = power(np.array([fam.threshold(k + 1)], dtype=object), q)[0]
        sharp = aq * powv[cid]
        full = sum(powv[int(owners[kk][i])] for kk in range(fam.kmin, fam.kmax + 1) if owners[kk][i] >= 0) * aq
        if not leq(lhs, middle):
            bad.append(("level", i))
        if not leq(middle, sharp):
            bad.append(("sharp", i))
        if not leq(lhs, sharp):
            bad.append(("e_hat", i))
        if not leq(sharp, full):
            bad.append(("carleson", i))
    return CheckReport("sparse_domination", checked, bad)
