from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from dyadic_halfspace.core import DyadicCube, GridFamily, HalfSpaceMeasure, Lattice, StepFunction, derive_exponents
from dyadic_halfspace.errors import InfiniteConstant
from dyadic_halfspace.instance import Instance, generate, random_instance
from dyadic_halfspace import theorems as T
from dyadic_halfspace import weights as W

from conftest import spike_instance, step


def _run(th, inst, **kw):
    return T.verify_instance(th, inst, seed=0, **kw)


def _ones_instance(n=1, L0=2, L=0, p=("2",), f=None, lift=True):
    lat = Lattice(n, L0, L)
    ex = derive_exponents(list(p))
    ws = [StepFunction.constant(lat, Fraction(1), Fraction(1)) for _ in p]
    if f is None:
        chi = np.zeros((lat.N,) * n, dtype=object)
        chi[...] = Fraction(0)
        chi[(0,) * n] = Fraction(1)
        f = StepFunction(lat, chi, 0)
    mu = HalfSpaceMeasure.lattice_lift(ws[0], fine=True) if lift else HalfSpaceMeasure.empty(n)
    return Instance(lat, ex, ws, [f] * len(p), mu)


# -- weak type -------------------------------------------------------------------


@pytest.mark.parametrize("L0", [3, 4])
def test_weak_type_spike_margin_four(L0):
    inst = spike_instance(L0)
    res = T.verify_weak_type(inst.mu, inst.weights, inst.functions, inst.exponents, lam=16)
    assert res.passed
    assert res.lhs == 16 and res.rhs == 64 and res.margin == 4
    auto = _run("weak_type", inst)
    assert auto.passed and auto.margin == 4


def test_weak_type_above_max_is_vacuous():
    inst = spike_instance()
    res = T.verify_weak_type(inst.mu, inst.weights, inst.functions, inst.exponents, lam=17, aggregate=False)
    assert res.passed and res.lhs == 0


@pytest.mark.parametrize("seed", range(12))
def test_weak_type_random(seed):
    inst = random_instance(seed, max_size={1: 4, 2: 2})
    res = _run("weak_type", inst)
    assert res.passed, res.details["failed_checks"]
    assert res.details["strict_vs_nonstrict"]


def test_weak_type_homogeneity():
    inst = generate(4, n=1, m=2, L0=3, L=0, B=1)
    c = [Fraction(3), Fraction(1, 2)]
    scaled = [f.scaled(x) for f, x in zip(inst.functions, c)]
    # the level set of the scaled data at lambda * prod c is the original one at lambda
    r0 = T.verify_weak_type(inst.mu, inst.weights, inst.functions, inst.exponents, lam=Fraction(1), aggregate=False)
    r1 = T.verify_weak_type(inst.mu, inst.weights, scaled, inst.exponents, lam=Fraction(3, 2), aggregate=False)
    assert math.isclose(float(r1.rhs), 1.5 * float(r0.rhs), rel_tol=1e-12)
    assert math.isclose(float(r1.lhs), 1.5 * float(r0.lhs), rel_tol=1e-12)
    assert math.isclose(float(r1.margin), float(r0.margin), rel_tol=1e-12)


# -- duality -------------------------------------------------------------------


def test_duality_examples():
    ones = _ones_instance(n=1, L0=2)
    r = T.verify_ap_prime_duality(ones.mu, ones.weights, ones.exponents)
    assert r.passed and r.lhs == 1 and r.rhs == 1
    lat = Lattice(1, 1, 0)
    w = step(lat, [1, 4], 1)
    mu = HalfSpaceMeasure.lattice_lift(StepFunction.constant(lat, Fraction(1)), fine=True)
    r = T.verify_ap_prime_duality(mu, [w], derive_exponents(["2"]))
    assert r.passed and r.lhs == r.rhs
    r = T.verify_ap_prime_duality(HalfSpaceMeasure.empty(1), [w], derive_exponents(["2"]))
    assert r.passed and r.lhs == 0 and r.rhs == 0


@pytest.mark.parametrize("seed", range(8))
def test_duality_random(seed):
    inst = random_instance(seed, max_size={1: 4, 2: 2})
    assert T.verify_ap_prime_duality(inst.mu, inst.weights, inst.exponents).passed


# -- Carleson embedding ----------------------------------------------------------


@pytest.mark.parametrize("p", ["2", "3", "3/2"])
def test_carleson_one_term(p):
    lat = Lattice(1, 2, 0)
    ex = derive_exponents([p])
    sigma = StepFunction.constant(lat, Fraction(1), Fraction(1))
    r0 = DyadicCube(0, 1, (0,))
    f = step(lat, [1, 1, 0, 0])
    inp = T.CarlesonInput({r0: Fraction(2)}, [sigma], [f], ex)
    res = T.verify_carleson(inp, GridFamily.standard(1, 0, 2))
    assert res.details["A"] == 1 and res.lhs == 2
    assert res.passed and res.details["halved_hypothesis_fails"]
    assert math.isclose(float(res.margin), float(ex.p_conj[0]) ** float(ex.p), rel_tol=1e-12)


def test_carleson_zero():
    lat = Lattice(1, 2, 0)
    ex = derive_exponents(["2"])
    sigma = StepFunction.constant(lat, Fraction(1), Fraction(1))
    res = T.verify_carleson(T.CarlesonInput({}, [sigma], [step(lat, [1, 0, 0, 0])], ex))
    assert res.passed and res.lhs == 0


def test_carleson_rejects_negative():
    lat = Lattice(1, 1, 0)
    sigma = StepFunction.constant(lat, Fraction(1), Fraction(1))
    with pytest.raises(ValueError):
        T.CarlesonInput({DyadicCube(0, 0, (0,)): Fraction(-1)}, [sigma], [sigma], derive_exponents(["2"]))


# -- strong type chains -----------------------------------------------------------


STRONG = ["strong_c0", "strong_cinf", "sawyer", "bprime", "aprime_winfty"]


@pytest.mark.parametrize("th", STRONG)
def test_strong_smallest_pipeline(th):
    res = _run(th, _ones_instance(n=1, L0=2))
    assert res.passed and res.lhs > 0


@pytest.mark.parametrize("th", STRONG)
def test_strong_zero_functions(th):
    inst = _ones_instance(n=1, L0=2, f=StepFunction.constant(Lattice(1, 2, 0), Fraction(0)))
    res = _run(th, inst)
    assert res.passed and res.lhs == 0


@pytest.mark.parametrize("th", ["sawyer", "aprime_winfty"])
def test_strong_empty_measure(th):
    res = _run(th, _ones_instance(n=1, L0=2, lift=False))
    assert res.passed and res.lhs == 0


@pytest.mark.parametrize("th", STRONG)
@pytest.mark.parametrize("seed", range(6))
def test_strong_random(th, seed):
    inst = random_instance(seed, max_size={1: 4, 2: 2})
    try:
        res = _run(th, inst)
    except InfiniteConstant:
        pytest.skip("characteristic infinite on this instance")
    assert res.passed, res.details.get("failed_checks")


def test_c0_uncharged_box_is_infinite():
    with pytest.raises(InfiniteConstant):
        _run("strong_c0", spike_instance())


def test_cinf_lift_stage_one_is_tight():
    inst = generate(3, n=1, m=1, L0=2, L=1, B=1, density=False, atoms=0)
    v = W.v_weight(inst.weights, inst.exponents)
    mu = HalfSpaceMeasure.lattice_lift(v, fine=True)
    inst = Instance(inst.lattice, inst.exponents, inst.weights, inst.functions, mu, 3)
    g = GridFamily.standard(1, -1, 2)
    assert W.c_infty_constant(mu, v, g).value == 1
    assert _run("strong_cinf", inst).passed


def test_substitution_identity_exact():
    for seed in range(5):
        inst = random_instance(seed, max_size={1: 3, 2: 2})
        P = T.Problem(inst.mu, inst.weights, inst.functions, inst.exponents, None, inst.digest())
        assert T.substitution_identity(P)


def test_result_json_roundtrip():
    res = _run("weak_type", spike_instance())
    js = res.to_json()
    assert js["theorem_id"] == "weak_type" and js["pass"] is True
    assert js["margin"] == "4"


# -- stress search -----------------------------------------------------------------


def test_stress_zero_iterations_returns_seed_ratio():
    cfg = {"seed": 5, "n": 1, "m": 1, "L0": 2, "L": 0, "iterations": 0}
    rep = T.stress_search("weak_type", cfg)
    assert rep.iterations == 0 and rep.trajectory == [rep.best_ratio]
    seed_inst = generate(5, n=1, m=1, L0=2, L=0, B=1, atoms=4)
    assert rep.best_ratio == float(T.verify_instance("weak_type", seed_inst, seed=5).ratio)


def test_stress_trajectory_extends():
    base = {"seed": 2, "n": 1, "m": 1, "L0": 2, "L": 0}
    short = T.stress_search("bprime", {**base, "iterations": 6})
    long = T.stress_search("bprime", {**base, "iterations": 12})
    assert long.trajectory[:7] == short.trajectory
    assert long.best_ratio >= short.best_ratio
    assert max(long.trajectory) <= 1
