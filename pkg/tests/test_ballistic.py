import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.acceptance import random_qld_model
from rwre.ballistic import (KalikowObjective, PolyConditionReport, c0, decay_exponent,
                            kalikow_infimum, kalikow_lower_bound, local_e1_drift, poly_condition_sweep,
                            poly_condition_test, qld_constant, velocity_upper_bound_check,
                            write_sweep_csv)
from rwre.lattice import (ModelError, PerturbationModel, TransitionKernel, make_environment,
                          standard_test_model, symmetric_test_model, uniform_kernel, zero_model)

P0 = uniform_kernel(2)
STD = standard_test_model(2)


def test_kalikow_standard_model_against_grid():
    rep = kalikow_infimum(STD, P0, 0.1)
    assert rep.holds and rep.witness is None
    F = KalikowObjective.build(STD, P0, 0.1)
    axes = np.linspace(0, 1, 21)
    G = np.array([g for g in itertools.product(axes, repeat=4) if max(g) > 0])
    grid_min = F.many(G / G.max(axis=1, keepdims=True)).min()
    assert rep.inf_value <= grid_min + 1e-12
    assert rep.inf_value == pytest.approx(grid_min, abs=1e-3)
    assert rep.inf_value >= kalikow_lower_bound(STD, P0, 0.1)
    assert rep.to_dict()["holds"] is True


def test_kalikow_symmetric_model_fails_with_witness():
    rep = kalikow_infimum(symmetric_test_model(2), P0, 0.1)
    assert not rep.holds
    assert rep.inf_value == -math.inf
    F = KalikowObjective.build(symmetric_test_model(2), P0, 0.1)
    assert F(rep.witness) < 0
    assert "fails" in rep.message


@given(p=st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4))
def test_single_atom_infimum_is_the_drift(p):
    probs = np.array(p) / sum(p)
    drift = probs[0] - probs[1]
    if drift <= 1e-3:
        return
    rep = kalikow_infimum(zero_model(2), TransitionKernel(probs), 0.0, n_starts=1)
    assert rep.inf_value == pytest.approx(drift, rel=1e-9)


@given(g=st.lists(st.floats(1e-3, 1.0), min_size=4, max_size=4), c=st.floats(1e-3, 1e3))
def test_objective_homogeneous_of_degree_minus_one(g, c):
    F = KalikowObjective.build(STD, P0, 0.1)
    g = np.array(g)
    assert F(c * g) * c == pytest.approx(F(g), rel=1e-12, abs=1e-12)


def test_objective_gradient_matches_finite_differences():
    F = KalikowObjective.build(STD, P0, 0.1)
    g = np.array([0.3, 0.8, 0.5, 0.1])
    h = 1e-6
    fd = [(F(g + h * e) - F(g - h * e)) / (2 * h) for e in np.eye(4)]
    assert np.allclose(F.grad(g), fd, atol=1e-7)
    assert F.lam == pytest.approx(local_e1_drift(STD, P0, 0.1))


def test_objective_rejects_nonpositive_kernels():
    with pytest.raises(ModelError, match="kappa"):
        KalikowObjective.build(STD, P0, 0.3)


def test_lower_bound_on_random_qld_models():
    rng = np.random.default_rng(123)
    for _ in range(10):
        model, base, eps = random_qld_model(rng)
        rep = kalikow_infimum(model, base, eps, n_starts=2)
        assert rep.inf_value > 0
        assert rep.inf_value >= kalikow_lower_bound(model, base, eps) - 1e-12
        assert qld_constant(base) == pytest.approx(2 / base.probs.min() ** 2)


def test_c0_values():
    assert c0(2) == pytest.approx(16 / 3)
    assert c0(3) == pytest.approx(128 / 3)
    assert c0(6) == pytest.approx(2 ** 16 / 3)
    assert c0(7) == pytest.approx(math.exp(2 * (math.log(90) + sum(
        math.log(j) / 2 ** j for j in range(2, 200)))))


def test_polynomial_condition_simple_walk_fails():
    env = make_environment(P0, 0.0, STD, seed=2)
    r = poly_condition_test(env, (1, 0), 10, M=1, n_runs=1000, walk_seed=4)
    assert r.verdict == "fails"
    assert r.ci[0] < r.estimate < r.ci[1]
    assert sum(r.counts.values()) == 1000
    assert r.L_at_least_c0
    with pytest.raises(ModelError):
        poly_condition_test(env, (1, 0), 10, n_runs=50)


def test_polynomial_condition_censoring_is_inconclusive():
    env = make_environment(P0, 0.0, STD, seed=2)
    r = poly_condition_test(env, (1, 0), 30, M=1, n_runs=200, max_steps=50)
    assert r.censored == 200 and r.verdict == "inconclusive"


def test_sweep_decreases_with_box_size():
    env = make_environment(P0, 0.1, STD, seed=3)
    reps, fit = poly_condition_sweep(env, (1, 0), (5, 8, 12), M=2, n_runs=4000, walk_seed=1)
    est = [r.estimate for r in reps]
    assert est[0] > est[1] > est[2]
    assert fit.exponent > 0
    buf = io.StringIO()
    write_sweep_csv(buf, reps)
    assert len(buf.getvalue().splitlines()) == 4


def _report(L, p, n=10_000):
    k = int(round(p * n))
    return PolyConditionReport(2.0, L, np.array([1.0, 0.0]), n, k, 0, {}, k / n, (0, 1),
                               L ** -2.0, 16 / 3, "inconclusive", 10)


def test_decay_exponent_recovers_power_law():
    fit = decay_exponent([_report(L, 0.5 * L ** -2.0, 10 ** 7) for L in (5, 8, 12, 18)])
    assert fit.exponent == pytest.approx(2.0, abs=0.01)
    with pytest.raises(ModelError):
        decay_exponent([_report(5, 0.1)])


def test_velocity_upper_bound_check_planar():
    env = make_environment(P0, 0.1, STD, seed=1)
    chk = velocity_upper_bound_check(env, 32, 50_000, C=1.0, eta=0.1, walk_seed=1)
    assert chk.positive and chk.holds
    assert chk.mean_drift == pytest.approx(0.1)
    assert chk.bound == pytest.approx(0.1 + 0.1 ** 1.9)


def test_custom_model_kalikow_argmin_on_cube():
    model = PerturbationModel(np.array([[0.6, -0.2, -0.2, -0.2], [-0.2, 0.6, -0.2, -0.2]]),
                              [0.5, 0.5])
    rep = kalikow_infimum(model, P0, 0.2)
    assert np.all((rep.argmin >= 0) & (rep.argmin <= 1))
    assert rep.argmin.max() == pytest.approx(1.0)
