"""First-order invariant-density expansion and velocity coefficients.

Convention note.  The first-order density can be written with J of the
reversed annealed kernel p*_eps evaluated at z + e ("literal"), or, after the
reversal identity J_{p*}(x) = J_p(-x), as J_{p_eps}(z + e) ("oracle").  Only
the second agrees with the exact torus solve; it is the default and both are
exposed.  The same reversal applies to the velocity coefficient d2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .green import JTable
from .lattice import (EnvironmentField, ModelError, PerturbationModel, TransitionKernel,
                      annealed_kernel_of, directions, local_drift)
from .walk import canonical_window

CONVENTIONS = ("oracle", "literal")


def _jtable_kind(jt: JTable, base: TransitionKernel, epsilon: float,
                 model: PerturbationModel, atol: float = 1e-12) -> str:
    pe = annealed_kernel_of(base, epsilon, model).reversed().probs
    if np.allclose(jt.kernel.probs, pe, rtol=0, atol=atol):
        return "p*_eps"
    if np.allclose(jt.kernel.probs, base.reversed().probs, rtol=0, atol=atol):
        return "p*_0"
    raise ModelError("J table kernel is neither p*_eps nor p*_0 for this model")


def _j_at(jt: JTable, pts, convention: str) -> np.ndarray:
    if convention not in CONVENTIONS:
        raise ModelError(f"convention must be one of {CONVENTIONS}")
    sign = -1 if convention == "oracle" else 1
    need = [tuple(sign * int(c) for c in x) for x in pts]
    missing = jt.covers(need)
    if missing:
        raise ModelError(f"J table lacks required points: {sorted(set(missing))}")
    return np.array([jt(x) for x in need])


@dataclass
class DensityExpansion:
    """dQ_B/dP_B ~ 1 + eps * sum_{z in B} sum_e xibar(z, e) w(z, e)."""

    window: tuple
    epsilon: float
    model: PerturbationModel
    weights: np.ndarray          # (|B|, 2d): J value attached to (z, e)
    kernel_used: str             # "p*_eps" or "p*_0"
    convention: str = "oracle"

    def first_order(self, pattern: Sequence[int]) -> float:
        """h1 evaluated on a pattern (atom index per window site)."""
        pattern = np.asarray(pattern, dtype=np.int64)
        if pattern.size != len(self.window):
            raise ModelError(f"pattern has {pattern.size} sites, window has {len(self.window)}")
        xb = self.model.centered[pattern]
        return math.fsum((xb * self.weights).ravel())

    def __call__(self, pattern: Sequence[int]) -> float:
        return 1.0 + self.epsilon * self.first_order(pattern)

    def patterns(self) -> list[tuple]:
        return list(itertools.product(range(self.model.n_atoms), repeat=len(self.window)))

    def table(self) -> dict:
        return {p: self(p) for p in self.patterns()}

    def p_mass(self, pattern: Sequence[int]) -> float:
        return float(np.prod(self.model.weights[np.asarray(pattern, dtype=np.int64)]))

    def mean_under_p(self) -> float:
        """E_P[density]; equals 1 up to rounding because E[xibar] = 0."""
        return math.fsum(self.p_mass(p) * self(p) for p in self.patterns())

    def to_dict(self) -> dict:
        return {
            "window": [list(z) for z in self.window],
            "epsilon": self.epsilon,
            "kernel_used": self.kernel_used,
            "convention": self.convention,
            "weights": self.weights.tolist(),
            "densities": [{"pattern": list(p), "p_mass": self.p_mass(p), "density": self(p)}
                          for p in self.patterns()],
        }


def required_points(B, d: int, convention: str = "oracle") -> list[tuple]:
    sign = -1 if convention == "oracle" else 1
    dirs = directions(d)
    return sorted({tuple(sign * (np.asarray(z) + e)) for z in canonical_window(B) for e in dirs})


def first_order_density(base: TransitionKernel, epsilon: float, model: PerturbationModel,
                        B, jtable: JTable, convention: str = "oracle") -> DensityExpansion:
    B = canonical_window(B)
    d = base.dimension
    if len(B[0]) != d:
        raise ModelError("window dimension does not match the kernel")
    kind = _jtable_kind(jtable, base, epsilon, model)
    dirs = directions(d)
    pts = [tuple(np.asarray(z) + e) for z in B for e in dirs]
    w = _j_at(jtable, pts, convention).reshape(len(B), 2 * d)
    return DensityExpansion(B, float(epsilon), model, w, kind, convention)


def explicit_2d_formula(xibar_z1: Sequence[float], epsilon: float) -> float:
    """1 - (4/pi)(xibar(e1) + xibar(-e1)) eps + (8/pi - 4) xibar(e2) eps."""
    xb = np.asarray(xibar_z1, dtype=float)
    if xb.size != 4:
        raise ModelError("expected a planar perturbation vector (4 entries)")
    return 1.0 - (4 / math.pi) * (xb[0] + xb[1]) * epsilon + (8 / math.pi - 4) * xb[2] * epsilon


def explicit_2d_density(pattern: Sequence[int], model: PerturbationModel, epsilon: float,
                        z1: Sequence[int] = (1, 0)) -> float:
    """Closed-form planar density for a pattern on B = {(0,0), z1} (uniform p0).

    The formula only involves xibar at z1; the pattern follows the window's
    row-major order.
    """
    if model.dimension != 2:
        raise ModelError("explicit formula is planar")
    B = canonical_window([(0, 0), tuple(z1)])
    pattern = tuple(int(a) for a in pattern)
    if len(pattern) != 2:
        raise ModelError("pattern must assign an atom to both window sites")
    a1 = pattern[B.index(tuple(int(c) for c in z1))]
    return explicit_2d_formula(model.centered[a1], epsilon)


@dataclass
class VelocityExpansion:
    d0: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    epsilon: float
    eta: float = 0.0
    convention: str = "oracle"
    notes: dict = field(default_factory=dict)

    @property
    def v_approx(self) -> np.ndarray:
        return self.d0 + self.epsilon * self.d1 + self.epsilon ** 2 * self.d2

    def at(self, epsilon: float) -> np.ndarray:
        """d0 + eps d1 + eps^2 d2 with d2 frozen at the table's epsilon."""
        return self.d0 + epsilon * self.d1 + epsilon ** 2 * self.d2

    def to_dict(self) -> dict:
        return {"d0": self.d0.tolist(), "d1": self.d1.tolist(), "d2": self.d2.tolist(),
                "epsilon": self.epsilon, "eta": self.eta, "v_approx": self.v_approx.tolist(),
                "convention": self.convention, "d2_index_placement": "K applied to e'",
                **self.notes}


def velocity_coefficients(base: TransitionKernel, model: PerturbationModel, epsilon: float,
                          jtable: JTable, convention: str = "oracle") -> VelocityExpansion:
    """d0 = sum e p0(e), d1 = sum e E[xi(0,e)], d2 = sum_e e sum_e' C(e,e') K(e').

    K(e') is J_{p*_eps}(-e') under the oracle convention and J_{p*_eps}(e')
    under the literal one.
    """
    d = base.dimension
    dirs = directions(d).astype(float)
    _jtable_kind(jtable, base, epsilon, model)
    K = _j_at(jtable, [tuple(e) for e in directions(d)], convention)
    d0 = local_drift(base)
    d1 = dirs.T @ model.mean
    d2 = dirs.T @ (model.cov @ K)
    return VelocityExpansion(d0, d1, d2, float(epsilon), 0.0, convention)


# ---------------------------------------------------------------------------
# exact expansion terms on a torus

@dataclass
class TorusExpansion:
    period: int
    epsilon: float
    terms: np.ndarray          # (m + 1,) + (L,)*d; terms[0] == 1
    exact: np.ndarray          # L^d * pi, the exact stationary density

    @property
    def order(self) -> int:
        return self.terms.shape[0] - 1

    def reconstruction(self, m: int | None = None) -> np.ndarray:
        m = self.order if m is None else m
        return sum(self.epsilon ** i * self.terms[i] for i in range(m + 1))

    def residual(self, m: int | None = None) -> float:
        """max over sites of |exact - sum_{i<=m} eps^i h_i|."""
        return float(np.max(np.abs(self.exact - self.reconstruction(m))))


def _shift(f: np.ndarray, e: np.ndarray) -> np.ndarray:
    """g(y) = f(y - e) on the torus."""
    return np.roll(f, shift=tuple(int(c) for c in e), axis=tuple(range(f.ndim)))


def torus_expansion_terms(env: EnvironmentField, order: int, exact: np.ndarray | None = None,
                          gap_tol: float = 1e-12) -> TorusExpansion:
    """h_0 = 1 and (I - R0*) h_{i+1} = A* h_i on the torus, solved by FFT.

    (R0* f)(y) = sum_e p_eps(e) f(y - e) and (A* f)(y) = sum_e xibar(y - e, e) f(y - e);
    each h_{i>=1} is taken orthogonal to constants.
    """
    if not env.period:
        raise ModelError("torus expansion requires a periodic environment")
    if order < 0:
        raise ModelError("order must be >= 0")
    L, d = env.period, env.dimension
    dirs = directions(d)
    pe = annealed_kernel_of(env.base, env.epsilon, env.model).probs
    atoms = env.torus_atoms()
    xib = env.model.centered[atoms]               # (L,)*d + (2d,)
    k = np.indices((L,) * d).reshape(d, -1).T
    lam = 1.0 - sum(pe[i] * np.exp(-2j * np.pi * (k @ dirs[i]) / L) for i in range(2 * d))
    lam = lam.reshape((L,) * d)
    mask = np.ones_like(lam, dtype=bool)
    mask[(0,) * d] = False
    if np.any(np.abs(lam[mask]) < gap_tol):
        raise ModelError("I - R0* is singular beyond the constants on this torus")
    terms = np.zeros((order + 1,) + (L,) * d)
    terms[0] = 1.0
    for i in range(order):
        rhs = sum(_shift(xib[..., j] * terms[i], dirs[j]) for j in range(2 * d))
        F = np.fft.fftn(rhs)
        out = np.zeros_like(F)
        out[mask] = F[mask] / lam[mask]
        terms[i + 1] = np.real(np.fft.ifftn(out))
    if exact is None:
        from .estimators import torus_solve
        exact = torus_solve(env).pi * L ** d
    return TorusExpansion(L, float(env.epsilon), terms, np.asarray(exact))
