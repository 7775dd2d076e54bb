import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.estimators import torus_solve
from rwre.expansion import (DensityExpansion, explicit_2d_density, explicit_2d_formula,
                            first_order_density, required_points, torus_expansion_terms,
                            velocity_coefficients)
from rwre.green import j_kernel
from rwre.lattice import (ModelError, PerturbationModel, TransitionKernel, annealed_kernel_of,
                          directions, make_environment, standard_test_model, uniform_kernel)

P0 = uniform_kernel(2)
STD = standard_test_model(2)
UNITS = [tuple(s * e) for e in directions(2) for s in (1, -1)]
# asymmetric planar model: xibar(e1) + xibar(-e1) and xibar(e2) are both non-zero
SKEW = PerturbationModel(np.array([[0.5, 0.3, -0.4, -0.4], [-0.5, -0.3, 0.4, 0.4]]), [0.6, 0.4])


@pytest.fixture(scope="module")
def j0():
    pts = required_points([(0, 0), (1, 0), (0, 1)], 2) + UNITS
    return j_kernel(P0, pts, tol=1e-8)


def _pstar_table(eps, model=STD, extra=()):
    pstar = annealed_kernel_of(P0, eps, model).reversed()
    return j_kernel(pstar, list(UNITS) + list(extra), tol=1e-8)


def test_required_points_signs():
    pts = required_points([(0, 0)], 2)
    assert set(pts) == {(-1, 0), (1, 0), (0, -1), (0, 1)}
    lit = required_points([(1, 0)], 2, convention="literal")
    assert (2, 0) in lit and (0, 0) in lit


def atoms_strategy():
    row = st.lists(st.floats(-0.3, 0.3, allow_nan=False), min_size=3, max_size=3)
    return st.lists(row, min_size=1, max_size=3).map(
        lambda rows: np.array([r + [-sum(r)] for r in rows]))


@given(atoms=atoms_strategy(), eps=st.floats(0.0, 0.2))
def test_first_order_density_has_unit_mean(j0, atoms, eps):
    w = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
    model = PerturbationModel(atoms, w)
    de = first_order_density(P0, eps, model, [(0, 0), (1, 0)], j0)
    assert de.kernel_used in ("p*_0", "p*_eps")
    assert de.mean_under_p() == pytest.approx(1.0, abs=1e-12)
    assert isinstance(de, DensityExpansion)


def test_explicit_formula_matches_evaluator_for_vertical_neighbour(j0):
    eps = 0.07
    de = first_order_density(P0, eps, SKEW, [(0, 0), (0, 1)], j0)
    for pattern in de.patterns():
        assert explicit_2d_density(pattern, SKEW, eps, z1=(0, 1)) == pytest.approx(de(pattern),
                                                                                   abs=1e-9)


def test_explicit_formula_is_trivial_for_standard_model():
    for a in range(2):
        assert explicit_2d_density((0, a), STD, 0.1) == pytest.approx(1.0, abs=1e-15)
    assert explicit_2d_formula([0.1, 0.1, 0.0, -0.2], 0.1) == pytest.approx(1 - 0.08 / math.pi)
    with pytest.raises(ModelError):
        explicit_2d_formula([0.1, -0.1], 0.1)


def test_jtable_kernel_is_checked():
    wrong = j_kernel(annealed_kernel_of(P0, 0.1, STD), required_points([(0, 0)], 2), tol=1e-8)
    with pytest.raises(ModelError, match="neither"):
        first_order_density(P0, 0.1, STD, [(0, 0)], wrong)


def test_missing_points_are_reported(j0):
    with pytest.raises(ModelError, match="lacks"):
        first_order_density(P0, 0.1, STD, [(0, 0), (5, 5)], j0)


def test_density_evaluator_matches_pooled_tori():
    eps = 0.04
    B = [(0, 0), (1, 0)]
    J = _pstar_table(eps, extra=required_points(B, 2))
    de = first_order_density(P0, eps, STD, B, J)
    q = np.zeros(4)
    p = np.zeros(4)
    for s in range(24):
        o = torus_solve(make_environment(P0, eps, STD, seed=s, period=48), B)
        q += o.q_b
        p += o.p_b
    ratio = q / p
    for i, pattern in enumerate(de.patterns()):
        assert ratio[i] == pytest.approx(de(pattern), abs=10 * eps ** 2)
    # the density really moves at first order
    assert max(abs(de(pt) - 1) for pt in de.patterns()) > eps / 4


def test_velocity_coefficients_standard_model():
    ve = velocity_coefficients(P0, STD, 0.08, _pstar_table(0.08))
    assert np.allclose(ve.d0, 0) and np.allclose(ve.d1, [1.0, 0.0])
    assert ve.d2[1] == pytest.approx(0.0, abs=1e-12)
    assert ve.d2[0] < 0
    assert np.allclose(ve.at(0.08), ve.v_approx)


def test_second_order_velocity_matches_pooled_tori():
    eps = 0.08
    ve = velocity_coefficients(P0, STD, eps, _pstar_table(eps))
    v = np.array([torus_solve(make_environment(P0, eps, STD, seed=s, period=48)).velocity[0]
                  for s in range(24)])
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - ve.v_approx[0]) < 4 * se
    # and the eps^2 term is needed
    assert abs(v.mean() - eps) > 4 * se


def test_conventions_differ():
    J = _pstar_table(0.08)
    a = velocity_coefficients(P0, STD, 0.08, J, "oracle")
    b = velocity_coefficients(P0, STD, 0.08, J, "literal")
    assert not np.allclose(a.d2, b.d2)
    with pytest.raises(ModelError):
        velocity_coefficients(P0, STD, 0.08, J, "other")


def test_torus_terms_structure_and_order():
    res = {1: [], 2: []}
    for eps in (0.02, 0.04, 0.08):
        env = make_environment(P0, eps, STD, seed=5, period=8)
        te = torus_expansion_terms(env, 2)
        assert np.all(te.terms[0] == 1.0)
        for i in (1, 2):
            assert abs(te.terms[i].mean()) < 1e-12
        assert te.exact.mean() == pytest.approx(1.0, abs=1e-12)
        res[1].append(te.residual(1))
        res[2].append(te.residual(2))
    assert res[1][0] < res[1][1] < res[1][2]
    assert np.polyfit(np.log([0.02, 0.04, 0.08]), np.log(res[2]), 1)[0] > 2.6


def test_torus_terms_against_independent_exact():
    env = make_environment(P0, 0.01, STD, seed=1, period=6)
    te = torus_expansion_terms(env, 3)
    assert te.residual(3) < te.residual(2) < te.residual(1) < te.residual(0)
    with pytest.raises(ModelError):
        torus_expansion_terms(make_environment(P0, 0.01, STD), 1)


def test_nonuniform_base_kernel_is_supported():
    base = TransitionKernel(np.array([0.3, 0.2, 0.25, 0.25]))
    env = make_environment(base, 0.02, STD, seed=3, period=8)
    te = torus_expansion_terms(env, 2)
    assert te.residual(2) < te.residual(1)


def test_swapping_to_unperturbed_j_is_first_order(j0):
    B = [(0, 0), (1, 0)]
    gaps = []
    for eps in (0.02, 0.04):
        de_eps = first_order_density(P0, eps, STD, B, _pstar_table(eps, extra=required_points(B, 2)))
        de_0 = first_order_density(P0, eps, STD, B, j0)
        assert de_0.kernel_used == "p*_0" and de_eps.kernel_used == "p*_eps"
        # per unit eps * xibar: compare the first-order coefficients
        gap = max(abs(de_eps.first_order(p) - de_0.first_order(p)) for p in de_0.patterns())
        gaps.append(gap / (eps * math.log(1 / eps)))
    # the drifted planar J differs from the potential kernel by order eps log(1/eps)
    assert gaps[1] == pytest.approx(gaps[0], rel=0.15)


def test_velocity_expansion_tends_to_base_drift():
    ve = velocity_coefficients(P0, STD, 0.04, _pstar_table(0.04))
    for eps in (1e-2, 1e-4, 1e-6):
        assert abs(ve.at(eps)[0] - ve.d0[0]) <= 1.01 * eps
