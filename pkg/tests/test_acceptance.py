"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Every criterion also enforces its runtime budget.
"""

from __future__ import annotations

import itertools
import math
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np

from dyadic_halfspace import theorems as T
from dyadic_halfspace.core import GridFamily, StepFunction, covering_cube
from dyadic_halfspace.errors import InfiniteConstant
from dyadic_halfspace.instance import random_instance
from dyadic_halfspace.maximal import (
    MaximalField,
    geometric_maximal,
    halfspace_maximal_oracle_field,
    restrict,
    start_level,
    weighted_dyadic_maximal,
)
from dyadic_halfspace.sparse import decompose, invariant_report, level_set_identity_check

from conftest import ACCEPTANCE_LINES


@contextmanager
def criterion(number: int, title: str, budget: float, capsys):
    """Record ``CRITERION n PASS|FAIL`` with timing; a blown budget is a failure."""
    state = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield state
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        in_budget = elapsed <= budget
        verdict = "PASS" if ok and in_budget else "FAIL"
        why = "" if in_budget else f" (over budget {budget:.0f}s)"
        line = f"CRITERION {number} {verdict}: {title}; {state['detail']}; {elapsed:.1f}s{why}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    assert in_budget, line


def _problem(inst):
    return T.Problem(inst.mu, inst.weights, inst.functions, inst.exponents, None, inst.digest())


# --------------------------------------------------------------------------


def test_criterion_1_decomposition(capsys):
    with criterion(1, "decomposition invariants on 500 rational instances", 60, capsys) as st:
        families = cubes = samples = 0
        bad = []
        shapes = set()
        for seed in range(500):
            inst = random_instance(seed, n_choices=(1, 2), m_choices=(1, 2, 3), max_size={1: 6, 2: 4})
            assert inst.lattice.L0 + inst.lattice.L <= 6 and all(f.exact for f in inst.functions)
            shapes.add((inst.n, inst.m))
            grids = GridFamily.for_lattice(inst.lattice)
            for beta in range(grids.size):
                fam = decompose(inst.functions, grids, beta, inst.mu)
                inv = invariant_report(fam)
                ident = level_set_identity_check(fam, inst.mu)
                families += 1
                cubes += len(fam)
                samples += ident.checked
                if not (inv.ok and ident.ok):
                    bad.append((seed, beta, inv.violations[:3], ident.violations[:3]))
        st["detail"] = f"{families} families, {cubes} cubes, {samples} level-set samples, {len(bad)} violations"
        assert shapes == {(n, m) for n in (1, 2) for m in (1, 2, 3)}
        assert not bad, bad[:5]


def test_criterion_2_covering_and_domination(capsys):
    with criterion(2, "covering factor <= 6 and oracle <= 6^{mn} sum_beta dyadic", 60, capsys) as st:
        n_cov = 0
        worst = Fraction(0)
        for n, L0, L in ((1, 3, 2), (2, 2, 1)):
            g = GridFamily.one_third(n, -L, L0 + 4)
            h = Fraction(1, 2**L)
            N = 2 ** (L0 + L)
            for s in range(1, N + 1):
                for lo in itertools.product(range(N - s + 1), repeat=n):
                    lo_x = [i * h for i in lo]
                    c = covering_cube(lo_x, s * h, g)
                    assert all(a <= x and x + s * h <= b for a, x, b in zip(c.lo(g), lo_x, c.hi(g)))
                    worst = max(worst, c.side / (s * h))
                    n_cov += 1
        assert worst <= 6
        rng = np.random.default_rng(2024)
        points = bad = 0
        seed = 0
        while points < 10_000:
            inst = random_instance(seed, n_choices=(1, 2), max_size={1: 5, 2: 3})
            seed += 1
            lat, fs = inst.lattice, inst.functions
            m, n = len(fs), lat.n
            grids = GridFamily.for_lattice(lat)
            orc = halfspace_maximal_oracle_field(fs)
            fields = [MaximalField(fs, grids, b) for b in range(grids.size)]
            K = 500
            den = 8 * 2**lat.L
            xi = rng.integers(0, lat.N * 8, size=(K, n))
            ts = [Fraction(int(t), den) * int(z) for t, z in
                  zip(rng.integers(0, 4 * 2**lat.L0 * den, size=K), rng.integers(0, 2, size=K))]
            xs = [[Fraction(int(c), den) for c in row] for row in xi]
            fine = np.array([lat.fine_cell(x) for x in xs], dtype=np.int64)
            base = np.array([[math.floor(c * 2**lat.L) for c in x] for x in xs], dtype=np.int64)
            levels = np.array([start_level(t, lat.L) for t in ts], dtype=np.int64)
            o = orc.value_cells(base, ts)
            d = sum(f.values_at_cells(fine, levels) for f in fields)
            d0 = fields[0].values_at_cells(fine, levels)
            c6 = 6 ** (m * n)
            bad += sum(1 for a, b, z in zip(o, d, d0) if not (a <= c6 * b and z <= a))
            points += K
        st["detail"] = f"{n_cov} lattice cubes (worst factor {worst}), {points} points on {seed} instances, {bad} violations"
        assert bad == 0


def test_criterion_3_weak_type(capsys):
    with criterion(3, "weak type on 200 seeds and [A'] duality", 120, capsys) as st:
        lam_checks = 0
        worst = 0.0
        fails = []
        dual_fail = []
        for seed in range(200):
            inst = random_instance(seed, max_size={1: 5, 2: 3})
            P = _problem(inst)
            res = T.verify_instance("weak_type", inst, seed=seed, problem=P)
            lam_checks += res.details["checks"]
            worst = max(worst, float(res.ratio))
            if not res.passed:
                fails.append((seed, res.details["failed_checks"][:3]))
            dual = T.verify_ap_prime_duality(inst.mu, inst.weights, inst.exponents, problem=P)
            if not dual.passed:
                dual_fail.append(seed)
        st["detail"] = (f"{lam_checks} lambda checks, worst lhs/rhs {worst:.4f}, "
                        f"{len(fails)} failures, {len(dual_fail)} duality mismatches")
        assert not fails and not dual_fail


STRONG = ("strong_c0", "strong_cinf", "sawyer", "bprime", "aprime_winfty")


def test_criterion_4_strong_type(capsys):
    with criterion(4, "strong-type chains on 200 seeds and 500-step stress search", 600, capsys) as st:
        worst = {th: 0.0 for th in STRONG}
        fails, skipped = [], 0
        for seed in range(200):
            inst = random_instance(seed, max_size={1: 5, 2: 3})
            P = _problem(inst)
            for th in STRONG:
                try:
                    res = T.verify_instance(th, inst, seed=seed, problem=P)
                except InfiniteConstant:
                    skipped += 1
                    continue
                worst[th] = max(worst[th], float(res.ratio))
                if not res.passed:
                    fails.append((th, seed, res.details["failed_checks"][:3]))
        stress = {}
        for i, th in enumerate(T.THEOREMS):
            rep = T.stress_search(th, {"seed": 100 + i, "n": 1, "m": 1, "L0": 2, "L": 0, "iterations": 500})
            stress[th] = rep.best_ratio
        st["detail"] = ("worst ratio " + ", ".join(f"{k}={v:.3f}" for k, v in worst.items())
                        + f"; {skipped} infinite-constant skips; stress best "
                        + ", ".join(f"{k}={v:.3f}" for k, v in stress.items()))
        assert not fails, fails[:5]
        assert skipped <= 20
        assert all(v <= 1 for v in stress.values())


def _random_a_q(rng, P, beta=0):
    from dyadic_halfspace.weights import level_grids

    (lg,) = level_grids(P.grids, P.lat, [beta])
    cubes = [lg.cube(k, loc) for k in lg.levels for loc in np.ndindex(*lg.data(k).count)]
    pick = rng.choice(len(cubes), size=min(len(cubes), int(rng.integers(1, 12))), replace=False)
    return {cubes[i]: Fraction(int(rng.integers(0, 64)), int(rng.integers(1, 16))) for i in pick}


def test_criterion_5_carleson(capsys):
    with criterion(5, "Carleson embedding, random and decomposition a_Q, A/2 tightness", 60, capsys) as st:
        rng = np.random.default_rng(55)
        runs = 0
        fails, loose = [], []
        for seed in range(200):
            inst = random_instance(seed, max_size={1: 5, 2: 3})
            P = _problem(inst)
            inputs = [T.CarlesonInput(_random_a_q(rng, P), P.sig, P.fs, P.ex)]
            fam = P.family(int(rng.integers(0, P.grids.size)))
            if fam.cubes:
                ehat = fam.e_hat_masses(P.mu)
                sq = T._sigma_q(P, fam)
                inputs.append(T.CarlesonInput({sc.cube: T._mul(e, s) for sc, e, s in zip(fam.cubes, ehat, sq)},
                                              P.sig, P.fs, P.ex))
            for inp in inputs:
                res = T.verify_carleson(inp, P.grids, P.digest)
                runs += 1
                if res.lhs and not res.details["halved_hypothesis_fails"]:
                    loose.append(seed)
                if not res.passed:
                    fails.append(seed)
        st["detail"] = f"{runs} embeddings, {len(fails)} failures, {len(loose)} instances where A/2 still holds"
        assert not fails and not loose


def test_criterion_6_identities(capsys):
    with criterion(6, "t=0 boundary identity, homogeneity, substitution on 100 seeds", 30, capsys) as st:
        rng = np.random.default_rng(66)
        cells_checked = 0
        bad = []
        for seed in range(100):
            inst = random_instance(seed, max_size={1: 4, 2: 2})
            lat, fs = inst.lattice, inst.functions
            grids = GridFamily.for_lattice(lat)
            cs = [Fraction(int(rng.integers(1, 9)), int(rng.integers(1, 9))) for _ in fs]
            scale = math.prod(cs)
            scaled = [f.scaled(c) for f, c in zip(fs, cs)]
            cells = np.array(list(itertools.product(range(lat.nfine), repeat=lat.n)), dtype=np.int64)
            for beta in range(grids.size):
                fld = MaximalField(fs, grids, beta)
                at0 = fld.values_at_cells(cells, np.full(len(cells), start_level(0, lat.L)))
                if not (at0 == fld.boundary_values.values[tuple(cells.T)]).all():
                    bad.append(("boundary", seed, beta))
                cells_checked += len(cells)
                sfld = MaximalField(scaled, grids, beta)
                if not all((sfld.running[k] == fld.running[k] * scale).all() for k in fld.running):
                    bad.append(("homogeneity", seed, beta))
            if not T.substitution_identity(_problem(inst)):
                bad.append(("substitution", seed))
        st["detail"] = f"{cells_checked} boundary cells, {len(bad)} violations"
        assert not bad, bad[:5]


def test_criterion_7_auxiliary_operators(capsys):
    with criterion(7, "weighted maximal Doob bound and geometric maximal L1 bound on 200 seeds", 30, capsys) as st:
        rng = np.random.default_rng(77)
        worst_doob = worst_geo = 0.0
        bad = []
        for seed in range(200):
            inst = random_instance(seed, max_size={1: 5, 2: 3})
            lat = inst.lattice
            grids = GridFamily.for_lattice(lat)
            vol = float(lat.fine_volume)
            i = int(rng.integers(0, inst.m))
            p = float(inst.exponents.p_i[i])
            sig = inst.sigmas()[i].as_float()
            sigma = StepFunction(lat, sig.values, 0.0)
            f = inst.functions[i].as_float()
            beta = int(rng.integers(0, grids.size))
            M = weighted_dyadic_maximal(f, sigma, grids, beta)
            lhs = (np.sum(M.values**p * sigma.fine_values) * vol) ** (1 / p)
            rhs = p / (p - 1) * (np.sum(f.fine_values**p * sigma.fine_values) * vol) ** (1 / p)
            worst_doob = max(worst_doob, lhs / rhs if rhs else 0.0)
            if lhs > rhs * (1 + 1e-9):
                bad.append(("doob", seed))
            # G(f chi_R) for a random in-domain standard cube R and a positive f
            w = inst.weights[i].as_float()
            k = int(rng.integers(-lat.L, lat.L0 + 1))
            side = lat.fine_side(k)
            lo = [int(rng.integers(0, lat.nfine // side)) * side for _ in range(lat.n)]
            part = restrict(StepFunction(lat, w.values, 0.0), lo, [a + side for a in lo])
            G = geometric_maximal(part, grids, beta)
            lhs = float(np.sum(G.values)) * vol
            rhs = math.e * float(np.sum(part.values)) * float(lat.fine_volume)
            worst_geo = max(worst_geo, lhs / rhs)
            if lhs > rhs * (1 + 1e-9):
                bad.append(("geometric", seed))
        st["detail"] = f"worst Doob ratio {worst_doob:.4f}, worst G ratio {worst_geo:.4f}, {len(bad)} violations"
        assert not bad, bad[:5]
