import io
import math

import numpy as np
import pytest
from scipy import stats

from rwre.estimators import (WindowMeasureEstimate, estimate_mu_delta, estimate_velocity,
                             estimate_window_measure, indicator_mask, mean_stderr, p_pmf,
                             pattern_list, power_iteration_stationary, torus_solve,
                             wilson_interval)
from rwre.lattice import (ModelError, TransitionKernel, make_environment, standard_test_model,
                          symmetric_test_model, uniform_kernel, zero_model)

P0 = uniform_kernel(2)
STD = standard_test_model(2)
B = [(0, 0), (1, 0)]


@pytest.mark.parametrize("L", [2, 3, 4])
def test_torus_solve_matches_power_iteration(L):
    env = make_environment(P0, 0.2, STD, seed=L, period=L)
    o = torus_solve(env)
    assert np.max(np.abs(o.pi - power_iteration_stationary(env))) < 1e-10
    assert o.pi.sum() == pytest.approx(1.0, abs=1e-13)
    assert o.residual < 1e-13


def test_sparse_and_dense_agree():
    env = make_environment(P0, 0.1, STD, seed=2, period=12)
    a = torus_solve(env, B)
    b = torus_solve(env, B, dense_cap=0)
    assert b.method == "sparse-direct" and a.method == "dense"
    assert np.max(np.abs(a.pi - b.pi)) < 1e-13
    with pytest.raises(ModelError, match="cap"):
        torus_solve(env, max_states=100)
    with pytest.raises(ModelError):
        torus_solve(make_environment(P0, 0.1, STD))


def test_martingale_identity_on_torus():
    env = make_environment(P0, 0.15, STD, seed=4, period=6)
    o = torus_solve(env, B)
    drift = env.atom_kernels @ np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    assert np.max(np.abs(o.velocity_from_patterns(drift) - o.velocity)) < 1e-12
    assert o.q_b.sum() == pytest.approx(1.0, abs=1e-13)
    assert o.p_b.sum() == pytest.approx(1.0, abs=1e-13)


def test_velocity_estimate_simple_walk_is_centred():
    env = make_environment(P0, 0.0, STD, seed=1)
    v = estimate_velocity(env, 64, 20_000, walk_seed=3)
    assert np.all(np.abs(v.mean) < 4.5 * v.stderr)


def test_velocity_estimate_homogeneous_drift():
    base = TransitionKernel(np.array([0.4, 0.1, 0.3, 0.2]))
    env = make_environment(base, 0.0, zero_model(2), seed=1)
    v = estimate_velocity(env, 64, 20_000, walk_seed=2)
    assert np.all(np.abs(v.mean - [0.3, 0.1]) < 4.5 * v.stderr)
    with pytest.raises(ModelError):
        estimate_velocity(env, 4, 100, burn_in=100)


def test_velocity_estimate_is_reproducible():
    env = make_environment(P0, 0.1, STD, seed=1)
    a = estimate_velocity(env, 16, 5_000, walk_seed=7)
    b = estimate_velocity(env, 16, 5_000, walk_seed=7)
    assert np.array_equal(a.mean, b.mean)


def test_mean_stderr():
    m, se = mean_stderr(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert m[0] == 2.5
    assert se[0] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_window_measure_without_perturbation_is_product_law():
    env = make_environment(P0, 0.0, STD, seed=5)
    w = estimate_window_measure(env, B, 32, 20_000, walk_seed=1)
    assert w.q_hat.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w.p_mass, p_pmf(env, 2))
    ci = w.ratio_ci()
    # loose: every pattern ratio within a widened interval around 1
    half = ci[:, 1] - ci[:, 0]
    assert np.all(np.abs(w.ratio - 1.0) < 1.5 * half)


def test_window_measure_torus_matches_oracle():
    env = make_environment(P0, 0.05, STD, seed=11, period=4)
    o = torus_solve(env, B)
    w = estimate_window_measure(env, B, 8, 200_000, walk_seed=2, fixed_environment=True)
    assert w.tv_distance(o.q_b) < 0.01
    buf = io.StringIO()
    w.write_csv(buf)
    assert buf.getvalue().splitlines()[0].startswith("pattern,")


def test_window_measure_warns_without_drift():
    env = make_environment(P0, 0.1, symmetric_test_model(2), seed=5)
    with pytest.warns(RuntimeWarning, match="drift"):
        estimate_window_measure(env, B, 4, 2_000)


def test_zero_count_rule_of_three():
    w = WindowMeasureEstimate(((0, 0),), [(0,), (1,)], np.array([0.5, 0.5]),
                              np.array([300, 0]), np.array([1.0, 0.0]), np.array([0.0, 0.0]),
                              np.array([[1.0, 0.0], [1.0, 0.0]]), 1, 400, 100)
    ci = w.ratio_ci()
    assert w.zero_count.tolist() == [False, True]
    assert ci[1, 0] == 0.0 and ci[1, 1] == pytest.approx(3.0 / 300 / 0.5)


def test_mu_delta_identities():
    env = make_environment(P0, 0.1, STD, seed=3)
    every = pattern_list(2, 2)
    m = estimate_mu_delta(env, 0.9, B, every, 2000, walk_seed=1)
    assert m.estimate == 1.0
    f = estimate_mu_delta(env, 0.9, B, [(1, 1)], 2000, walk_seed=1)
    assert f.estimate + f.complement().estimate == pytest.approx(1.0, abs=1e-12)
    # E[tau + 1] = 1 / (1 - delta)
    assert f.denominator == pytest.approx(10.0, rel=0.05)
    with pytest.raises(ModelError):
        estimate_mu_delta(env, 1.0, B, [(1, 1)], 10)


def test_mu_delta_without_perturbation_is_product_law():
    env = make_environment(P0, 0.0, STD, seed=3)
    m = estimate_mu_delta(env, 0.95, B, [(0, 0)], 20_000, walk_seed=2)
    assert abs(m.estimate - 0.75 ** 2) < 4.5 * m.stderr


def test_indicator_mask_forms():
    a = indicator_mask([(1, 0)], 2, 2)
    b = indicator_mask(lambda p: p == (1, 0), 2, 2)
    c = indicator_mask(a, 2, 2)
    assert a.tolist() == b.tolist() == c.tolist() == [False, False, True, False]


def test_wilson_interval_reference():
    lo, hi = wilson_interval(5, 10)
    # Wilson score interval, z = 1.959964
    z = stats.norm.ppf(0.975)
    centre = (0.5 + z * z / 20) / (1 + z * z / 10)
    half = z * math.sqrt(0.25 / 10 + z * z / 400) / (1 + z * z / 10)
    assert (lo, hi) == pytest.approx((centre - half, centre + half), abs=1e-12)
