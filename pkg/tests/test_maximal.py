from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from hypothesis import given, settings, strategies as st

from dyadic_halfspace.core import GridFamily, HalfSpaceMeasure, Lattice, StepFunction, average, enumerate_cubes
from dyadic_halfspace.maximal import (
    MaximalField,
    geometric_maximal,
    halfspace_dyadic_maximal,
    halfspace_maximal_oracle,
    halfspace_maximal_oracle_field,
    level_set_measure,
    weighted_dyadic_maximal,
)

from conftest import random_step, random_weight, step


def brute_dyadic(fs, grids, beta, x, t):
    """Max of the product of averages over grid-beta cubes containing x with side > t."""
    best = Fraction(0)
    for c in enumerate_cubes(grids, fs[0].lattice):
        if c.grid == beta and c.side > t and c.contains(x, grids):
            v = math.prod(average(f, c, grids) for f in fs)
            best = max(best, v)
    return best


def brute_oracle_1d(f: StepFunction, x, t):
    """Max over lattice intervals [a, b) in the domain with a <= x < b and b - a > t, plus covering intervals."""
    lat = f.lattice
    h = Fraction(1, 2**lat.L)
    N = lat.N
    vals = [f.values[i] for i in range(N)]
    best = Fraction(0)
    for i in range(N + 1):
        for j in range(i + 1, N + 1):
            a, b = i * h, j * h
            if a <= x < b and b - a > t:
                best = max(best, sum(vals[i:j]) * h / (b - a))
    mass = sum(vals) * h
    return max(best, mass / max(lat.side, t))


def sample_points(rng, lat, k):
    h = Fraction(1, 2**lat.L)
    pts = []
    for _ in range(k):
        x = tuple(Fraction(int(rng.integers(0, lat.N * 8)), 8) * h for _ in range(lat.n))
        t = Fraction(int(rng.integers(0, 4 * 2**lat.L0)), 4) * h * int(rng.integers(0, 2))
        pts.append((x, t))
    return pts


# -- examples ------------------------------------------------------------------


def test_spike_halfspace_values():
    lat = Lattice(1, 4, 0)
    f = step(lat, [16] + [0] * 15)
    g = GridFamily.standard(1, 0, 4)
    assert halfspace_dyadic_maximal([f], g, 0, [Fraction(1, 2)], Fraction(3, 2)) == 8
    assert halfspace_dyadic_maximal([f], g, 0, [Fraction(1, 2)], Fraction(5, 2)) == 4
    assert halfspace_dyadic_maximal([f], g, 0, [Fraction(1, 2)], 0) == 16


def test_constant_field():
    lat = Lattice(2, 1, 1)
    c = Fraction(3, 2)
    f = StepFunction.constant(lat, c)
    g = GridFamily.standard(2, -1, 1)
    fld = MaximalField([f, f], g, 0)
    assert set(fld.boundary_values.values.reshape(-1)) == {c * c}


def test_oracle_example_against_interval_scan():
    lat = Lattice(1, 1, 2)
    f = step(lat, [1, 1, 1, 1, 0, 0, 0, 0])
    got = halfspace_maximal_oracle([f], [Fraction(5, 4)], 0)
    assert got == brute_oracle_1d(f, Fraction(5, 4), 0)
    # [0, 5/4) misses the point itself; the best interval is [0, 3/2)
    assert got == Fraction(2, 3)


def test_level_set_examples():
    lat = Lattice(1, 4, 0)
    f = step(lat, [16] + [0] * 15)
    g = GridFamily.standard(1, 0, 4)
    mu = HalfSpaceMeasure.from_atoms([[["1/2"], "0", "1"]])
    assert level_set_measure(mu, [f], g, 0, 16, strict=False) == 1
    assert level_set_measure(mu, [f], g, 0, 16, strict=True) == 0
    assert level_set_measure(mu, [f], g, 0, 17, strict=False) == 0


# -- brute-force agreement -----------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([(1, 1), (1, 2), (2, 1), (2, 2)]))
def test_field_matches_brute_force(seed, nm):
    n, m = nm
    rng = np.random.default_rng(seed)
    lat = Lattice(n, 2 if n == 1 else 1, 1)
    fs = [random_step(rng, lat) for _ in range(m)]
    grids = GridFamily.for_lattice(lat)
    for beta in range(grids.size):
        fld = MaximalField(fs, grids, beta)
        for x, t in sample_points(rng, lat, 6):
            if t < 2**grids.level_max:
                assert fld.value(x, t) == brute_dyadic(fs, grids, beta, x, t)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_oracle_matches_interval_scan(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice(1, 2, 1)
    f = random_step(rng, lat)
    orc = halfspace_maximal_oracle_field([f])
    for x, t in sample_points(rng, lat, 10):
        assert orc.value(x, t) == brute_oracle_1d(f, x[0], t)


# -- operator-level properties -------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_boundary_consistency_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    lat = Lattice(n, 2, 1)
    fs = [random_step(rng, lat) for _ in range(int(rng.integers(1, 4)))]
    grids = GridFamily.for_lattice(lat)
    fld = MaximalField(fs, grids, int(rng.integers(0, grids.size)))
    cells = np.array(list(itertools.product(range(lat.nfine), repeat=n)))
    at0 = fld.values_at_cells(cells, np.full(len(cells), -lat.L))
    assert (at0 == fld.boundary_values.values[tuple(cells.T)]).all()
    prev = at0
    for lev in range(-lat.L, grids.level_max + 2):
        cur = fld.values_at_cells(cells, np.full(len(cells), lev))
        assert (cur <= prev).all()
        prev = cur


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_homogeneity(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice(1, 3, 1)
    fs = [random_step(rng, lat) for _ in range(2)]
    cs = [Fraction(int(rng.integers(1, 9)), int(rng.integers(1, 9))) for _ in fs]
    grids = GridFamily.for_lattice(lat)
    a = MaximalField(fs, grids, 1).running
    b = MaximalField([f.scaled(c) for f, c in zip(fs, cs)], grids, 1).running
    for k in a:
        assert (b[k] == a[k] * (cs[0] * cs[1])).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 2))
def test_grid_comparison(seed, n):
    rng = np.random.default_rng(seed)
    lat = Lattice(n, 2, 0 if n == 2 else 1)
    m = int(rng.integers(1, 3))
    fs = [random_step(rng, lat) for _ in range(m)]
    grids = GridFamily.for_lattice(lat)
    orc = halfspace_maximal_oracle_field(fs)
    flds = [MaximalField(fs, grids, b) for b in range(grids.size)]
    for x, t in sample_points(rng, lat, 20):
        o = orc.value(x, t)
        d = [f.value(x, t) for f in flds]
        assert d[0] <= o
        assert o <= 6 ** (m * n) * sum(d)


# -- weighted and geometric maximal operators ----------------------------------


def test_weighted_maximal_examples():
    rng = np.random.default_rng(5)
    lat = Lattice(1, 3, 1)
    g = GridFamily.for_lattice(lat)
    f = random_step(rng, lat)
    one = StepFunction.constant(lat, Fraction(1))
    assert (weighted_dyadic_maximal(f, one, g).values == MaximalField([f], g, 0).boundary_values.values).all()
    sigma = random_weight(rng, lat).with_values(random_weight(rng, lat).values, 0)
    assert set(weighted_dyadic_maximal(one, sigma, g).values.reshape(-1)) == {1}
    chi = step(lat, [int(v) for v in rng.integers(0, 2, size=lat.N)])
    assert (weighted_dyadic_maximal(chi, sigma, g).values <= 1).all()


def test_geometric_maximal_examples():
    lat = Lattice(1, 1, 0)
    g = GridFamily.standard(1, 0, 1)
    c = StepFunction.constant(lat, 2.5)
    assert np.allclose(geometric_maximal(c, g).values, 2.5)
    chi = step(lat, [1, 0])
    gm = geometric_maximal(chi, g).values
    assert np.allclose(gm[:3], 1.0) and np.allclose(gm[3:], 0.0)


def _norm_p(values, sigma_fine, p, vol):
    return (np.sum(np.asarray(values, float) ** p * np.asarray(sigma_fine, float)) * vol) ** (1 / p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([1.5, 2.0, 3.0, 4.0 / 3.0]))
def test_doob_bound(seed, p):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    lat = Lattice(n, 2, 1)
    g = GridFamily.for_lattice(lat)
    f = random_step(rng, lat).as_float()
    w = random_weight(rng, lat, B=4).as_float()
    sigma = StepFunction(lat, w.values, 0.0)
    vol = float(lat.fine_volume)
    for beta in range(g.size):
        M = weighted_dyadic_maximal(f, sigma, g, beta)
        lhs = _norm_p(M.values, sigma.fine_values, p, vol)
        rhs = p / (p - 1) * _norm_p(f.fine_values, sigma.fine_values, p, vol)
        assert lhs <= rhs * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_geometric_l1_bound(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    lat = Lattice(n, 2, 1)
    g = GridFamily.for_lattice(lat)
    f = random_weight(rng, lat, B=5).as_float()
    f = StepFunction(lat, f.values, 0.0)
    vol = float(lat.fine_volume)
    for beta in range(g.size):
        G = geometric_maximal(f, g, beta)
        assert np.sum(G.values) * vol <= math.e * float(np.sum(f.fine_values)) * vol * (1 + 1e-9)
