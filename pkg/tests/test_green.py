import csv
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from rwre.green import (GreenTable, JTable, RecurrentKernelError, green, green_box_solve,
                        hitting_exponent, j_kernel, n_step_probs, richardson,
                        srw2d_potential_kernel, srw2d_potential_kernel_exact)
from rwre.lattice import (ModelError, TransitionKernel, annealed_kernel_of,
                          standard_test_model, uniform_kernel)

DATA = Path(__file__).parent / "data"
DRIFTED = TransitionKernel(np.array([0.3, 0.2, 0.25, 0.25]))      # p_eps of the standard model at 0.1
WATSON_3D = 1.5163860591519780                                     # G(0, 0) of the 3d simple walk


def _rows(name):
    with open(DATA / name) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def j_srw():
    pts = [(int(r["x1"]), int(r["x2"])) for r in _rows("srw2d_potential_kernel.csv")]
    return j_kernel(uniform_kernel(2), pts, tol=1e-8)


def test_exact_potential_kernel_matches_integral_oracle():
    for r in _rows("srw2d_potential_kernel.csv"):
        x = (int(r["x1"]), int(r["x2"]))
        assert srw2d_potential_kernel(x) == pytest.approx(float(r["a"]), abs=1e-12)


def test_exact_potential_kernel_closed_forms():
    assert srw2d_potential_kernel_exact((1, 0)) == (Fraction(1), Fraction(0))
    assert srw2d_potential_kernel_exact((1, 1)) == (Fraction(0), Fraction(4))
    assert srw2d_potential_kernel_exact((2, 0)) == (Fraction(4), Fraction(-8))
    assert srw2d_potential_kernel_exact((2, 1)) == (Fraction(-1), Fraction(8))
    # lattice symmetries
    assert srw2d_potential_kernel((3, -2)) == srw2d_potential_kernel((2, 3))


def test_recurrent_j_matches_potential_kernel(j_srw):
    assert j_srw((0, 0)) == 0.0
    assert j_srw.stable
    for r in _rows("srw2d_potential_kernel.csv"):
        x = (int(r["x1"]), int(r["x2"]))
        assert j_srw(x) == pytest.approx(-float(r["a"]), abs=1e-6)
        assert abs(j_srw(x) + float(r["a"])) <= max(j_srw.error_bound, 1e-9)


def test_j_table_csv_roundtrip(j_srw):
    back = JTable.from_csv(j_srw.to_csv())
    assert back.values == j_srw.values
    assert back.kernel == j_srw.kernel
    assert j_srw.to_csv().startswith("#")


def test_j_reversed_kernel_identity():
    pts = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)]
    J = j_kernel(DRIFTED, pts, tol=1e-10)
    Jr = j_kernel(DRIFTED.reversed(), pts, tol=1e-10)
    for x in pts:
        assert Jr(x) == pytest.approx(J.reversed()(x), abs=1e-9)
    with pytest.raises(ModelError):
        J((5, 5))


def test_drifted_green_matches_fourier_oracle():
    g = green(DRIFTED, [(2, 2)], tol=1e-10)
    assert g.certified
    for r in _rows("green_drifted_2d.csv"):
        x = (int(r["x1"]), int(r["x2"]))
        # oracle gives occupation of x starting from 0, i.e. the table at -x
        assert g((-x[0], -x[1])) == pytest.approx(float(r["G_from_origin"]),
                                                  abs=g.truncation_bound + 1e-11)


@pytest.mark.parametrize("method", ["series", "solve"])
def test_green_methods_agree_and_satisfy_resolvent(method):
    g = green(DRIFTED, [(3, 3)], tol=1e-10, method=method)
    ref = green(DRIFTED, [(3, 3)], tol=1e-10, method="solve" if method == "series" else "series")
    assert np.max(np.abs(g.values - ref.values)) <= g.truncation_bound + ref.truncation_bound
    assert g.resolvent_residual() <= g.truncation_bound
    assert g.method == method


def test_green_lower_bound_from_box_solve():
    g = green(DRIFTED, [(2, 2)], tol=1e-10)
    box = green_box_solve(DRIFTED, 25, r=2)
    assert not box.certified
    # killing outside a box can only lower the Green function
    for x in np.ndindex(5, 5):
        y = (x[0] - 2, x[1] - 2)
        assert box(y) <= g(y) + 1e-12
        assert box(y) == pytest.approx(g(y), abs=1e-3)


def test_green_3d_simple_walk_watson_constant():
    g = green(uniform_kernel(3), [(1, 1, 1)], tol=1e-6)
    assert g((0, 0, 0)) == pytest.approx(WATSON_3D, abs=max(g.truncation_bound, 1e-6) + 1e-6)
    assert g.resolvent_residual() <= g.truncation_bound
    # G(e1) = G(0) - 1 for the simple walk
    assert g((1, 0, 0)) == pytest.approx(g((0, 0, 0)) - 1.0, abs=2 * g.truncation_bound + 1e-9)


def test_green_refuses_recurrent_kernel():
    with pytest.raises(RecurrentKernelError, match="recurrent"):
        green(uniform_kernel(2), [(1, 0)])


def test_green_table_bounds_and_csv():
    g = green(DRIFTED, [(1, 1)])
    with pytest.raises(ModelError):
        g((5, 0))
    assert isinstance(g, GreenTable)
    text = g.to_csv()
    assert "green" in text.splitlines()[0]


def test_n_step_probs_conserve_mass_and_match_convolution():
    k = TransitionKernel(np.array([0.4, 0.1, 0.3, 0.2]))
    t = n_step_probs(k, 6)
    for n in range(7):
        assert t.mass(n) == pytest.approx(1.0, abs=1e-14)
    assert t.p(2, (2, 0)) == pytest.approx(0.16)
    assert t.p(2, (0, 0)) == pytest.approx(2 * 0.4 * 0.1 + 2 * 0.3 * 0.2)
    small = n_step_probs(k, 6, radius=2)
    assert small.leaked[6] > 0
    assert small.leaked[6] + small.mass(6) == pytest.approx(1.0, abs=1e-14)


def test_hitting_exponent_solves_mgf_equation():
    th = hitting_exponent(DRIFTED)
    u = np.array([1.0, 0.0])
    assert th > 0
    # E exp(-theta X.u) = 0.3 e^{-th} + 0.2 e^{th} + 0.5
    assert 0.3 * math.exp(-th) + 0.2 * math.exp(th) + 0.5 == pytest.approx(1.0, abs=1e-12)
    assert th == pytest.approx(math.log(1.5), abs=1e-10)
    assert hitting_exponent(uniform_kernel(2)) == 0.0
    del u


def test_richardson_removes_power_terms():
    S, n = 3.25, 8.0
    vals = [S + 1.5 / (n * 2 ** j) - 0.7 / (n * 2 ** j) ** 2 for j in range(4)]
    T = richardson(vals)
    assert T[2, 0] == pytest.approx(S, abs=1e-13)


def test_j_requires_planar_for_recurrent_case():
    with pytest.raises(ModelError):
        j_kernel(TransitionKernel(np.array([0.5, 0.5])), [(1,)])


def test_perturbed_kernel_j_near_simple_walk():
    pstar = annealed_kernel_of(uniform_kernel(2), 0.02, standard_test_model(2)).reversed()
    J = j_kernel(pstar, [(1, 1)], tol=1e-7)
    assert J((1, 1)) == pytest.approx(-4 / math.pi, abs=0.1)
