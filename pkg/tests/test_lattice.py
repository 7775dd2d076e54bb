import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rwre.lattice import (DriftConditionSpec, ModelError, PerturbationModel, TransitionKernel,
                          alpha, annealed_kernel, check_drift_condition, direction_index,
                          directions, make_environment, mean_local_drift, site_kernel,
                          standard_test_model, symmetric_test_model, uniform_kernel)


def test_direction_order_and_reverse_pairing():
    dirs = directions(3)
    assert dirs.tolist()[:2] == [[1, 0, 0], [-1, 0, 0]]
    for i, e in enumerate(dirs):
        assert np.array_equal(dirs[i ^ 1], -e)
        assert direction_index(e) == i


def test_kernel_validation():
    with pytest.raises(ModelError):
        TransitionKernel(np.array([0.5, 0.5, 0.1, -0.1]))
    with pytest.raises(ModelError):
        TransitionKernel(np.array([0.3, 0.3, 0.3, 0.3]))
    k = TransitionKernel(np.array([0.4, 0.1, 0.3, 0.2]))
    assert np.allclose(k.reversed().probs, [0.1, 0.4, 0.2, 0.3])
    assert TransitionKernel.from_text(k.to_text()) == k


def test_model_validation():
    with pytest.raises(ModelError):
        PerturbationModel(np.array([[1.0, 0.0, 0.0, 0.0]]), [1.0])       # does not sum to 0
    with pytest.raises(ModelError):
        PerturbationModel(np.array([[2.0, -2.0, 0.0, 0.0]]), [1.0])      # |zeta| > 1
    with pytest.raises(ModelError):
        PerturbationModel(np.array([[1.0, -1.0, 0.0, 0.0]]), [0.7])      # weights


def test_kappa_must_be_positive():
    with pytest.raises(ModelError, match="kappa"):
        make_environment(uniform_kernel(2), 0.25, standard_test_model(2))
    with pytest.raises(ModelError):
        make_environment(uniform_kernel(2), -0.1, standard_test_model(2))


@given(eps=st.floats(0, 0.24), seed=st.integers(0, 2**40),
       x=st.lists(st.integers(-10**5, 10**5), min_size=2, max_size=2))
def test_site_kernels_are_elliptic_probability_vectors(eps, seed, x):
    env = make_environment(uniform_kernel(2), eps, standard_test_model(2), seed=seed)
    k = site_kernel(env, x).probs
    assert math.isclose(math.fsum(k), 1.0, abs_tol=1e-12)
    assert k.min() >= env.kappa - 1e-15
    assert k.min() > 0


def test_site_atoms_are_iid_with_model_weights():
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2), seed=3)
    sites = np.indices((200, 200)).reshape(2, -1).T
    a = env.site_atoms(sites)
    counts = np.bincount(a, minlength=2)
    assert stats.chisquare(counts, counts.sum() * env.model.weights).pvalue > 1e-3
    # nearest-neighbour independence: 2x2 contingency table
    grid = a.reshape(200, 200)
    table = np.zeros((2, 2))
    np.add.at(table, (grid[:-1].ravel(), grid[1:].ravel()), 1)
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_site_atom_agrees_with_vectorised():
    env = make_environment(uniform_kernel(3), 0.1, standard_test_model(3), seed=9)
    sites = np.random.default_rng(0).integers(-50, 50, size=(100, 3))
    assert [env.site_atom(x) for x in sites] == env.site_atoms(sites).tolist()


def test_torus_environment_is_periodic():
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2), seed=1, period=5)
    assert env.site_atom((1, 2)) == env.site_atom((6, -3))
    assert env.torus_atoms().shape == (5, 5)


def test_standard_model_moments():
    m = standard_test_model(2)
    assert np.allclose(m.mean, [0.5, -0.5, 0, 0])
    # variance of xi(e1) is 1 - 1/4
    assert math.isclose(m.cov[0, 0], 0.75)
    assert math.isclose(m.cov[0, 1], -0.75)
    assert np.allclose(symmetric_test_model(2).mean, 0)


def test_annealed_kernel_and_drift():
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2))
    assert np.allclose(annealed_kernel(env).probs, [0.3, 0.2, 0.25, 0.25])
    assert np.allclose(mean_local_drift(env), [0.1, 0.0])


def test_drift_conditions():
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2))
    assert check_drift_condition(env, DriftConditionSpec("LLD", 0.5)).holds
    assert not check_drift_condition(env, DriftConditionSpec("LLD", 2.0)).holds
    assert check_drift_condition(env, DriftConditionSpec("QLD", 9.0)).holds
    ld = check_drift_condition(env, DriftConditionSpec("LD", 1.0, eta=0.1))
    assert math.isclose(ld.rhs, 0.1 ** 1.9)
    sym = make_environment(uniform_kernel(2), 0.1, symmetric_test_model(2))
    assert not check_drift_condition(sym, DriftConditionSpec("QLD", 1.0)).holds
    with pytest.raises(ModelError):
        DriftConditionSpec("LD", 1.0)
    with pytest.raises(ModelError):
        non_uniform = make_environment(TransitionKernel(np.array([0.4, 0.2, 0.2, 0.2])), 0.1,
                                       standard_test_model(2))
        check_drift_condition(non_uniform, DriftConditionSpec("LD", 1.0, eta=0.1))


def test_alpha_values():
    assert (alpha(2), alpha(3), alpha(4), alpha(7)) == (2.0, 2.5, 3.0, 3.0)
