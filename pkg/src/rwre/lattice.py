"""Lattice geometry, transition kernels, perturbation laws and environments.

Directions are always enumerated as (+e1, -e1, +e2, -e2, ...), so the
reversal of direction ``i`` is ``i ^ 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import MAX_DIM, as_u64, site_uniform, site_uniforms

SUM_TOL = 1e-12


class ModelError(ValueError):
    """Invalid kernel, perturbation law or environment parameters."""


def directions(d: int) -> np.ndarray:
    """The 2d unit vectors of Z^d in canonical order, shape (2d, d)."""
    if d < 1:
        raise ModelError(f"dimension must be >= 1, got {d}")
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


def direction_index(e: Sequence[int]) -> int:
    e = tuple(int(c) for c in e)
    nz = [i for i, c in enumerate(e) if c != 0]
    if len(nz) != 1 or abs(e[nz[0]]) != 1:
        raise ModelError(f"{e} is not a unit lattice vector")
    i = nz[0]
    return 2 * i + (0 if e[i] > 0 else 1)


def direction_labels(d: int) -> list[str]:
    return [f"{s}e{i + 1}" for i in range(d) for s in ("+", "-")]


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Nearest-neighbour jump law, one probability per direction."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size < 2 or p.size % 2:
            raise ModelError(f"kernel needs an even number >= 2 of entries, got {p.size}")
        if np.any(p < 0):
            raise ModelError(f"kernel has negative entries: {p}")
        if abs(math.fsum(p) - 1.0) > SUM_TOL:
            raise ModelError(f"kernel entries sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def dimension(self) -> int:
        return self.probs.size // 2

    @property
    def uniformly_elliptic(self) -> bool:
        return bool(self.probs.min() > 0)

    def reversed(self) -> "TransitionKernel":
        """p*(e) := p(-e)."""
        idx = np.arange(self.probs.size) ^ 1
        return TransitionKernel(self.probs[idx])

    def drift(self) -> np.ndarray:
        return local_drift(self)

    def to_text(self) -> str:
        return " ".join(repr(float(v)) for v in self.probs)

    @classmethod
    def from_text(cls, text: str) -> "TransitionKernel":
        return cls(np.array([float(t) for t in text.split()]))

    def __eq__(self, other):
        return isinstance(other, TransitionKernel) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"TransitionKernel({self.to_text()})"


def uniform_kernel(d: int) -> TransitionKernel:
    return TransitionKernel(np.full(2 * d, 1.0 / (2 * d)))


def local_drift(kernel: TransitionKernel) -> np.ndarray:
    """d = sum_e e * p(e)."""
    return directions(kernel.dimension).T.astype(float) @ kernel.probs


@dataclass(frozen=True, eq=False)
class PerturbationModel:
    """Finite-support law of the perturbation vector xi(x, .)."""

    atoms: np.ndarray
    weights: np.ndarray
    mean: np.ndarray = field(init=False)
    cov: np.ndarray = field(init=False)
    centered: np.ndarray = field(init=False)

    def __post_init__(self):
        atoms = np.atleast_2d(np.array(self.atoms, dtype=float))
        w = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.shape[0] != w.size:
            raise ModelError(f"{atoms.shape[0]} atoms but {w.size} weights")
        if atoms.shape[1] < 2 or atoms.shape[1] % 2:
            raise ModelError("each atom needs one entry per direction (2d entries)")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > SUM_TOL:
            raise ModelError(f"atom weights must be >= 0 and sum to 1, got {w}")
        if np.any(np.abs(atoms) > 1.0):
            raise ModelError("atom entries must lie in [-1, 1]")
        for k, a in enumerate(atoms):
            if abs(math.fsum(a)) > SUM_TOL:
                raise ModelError(f"atom {k} sums to {math.fsum(a)!r}; perturbations must sum to 0")
        mean = w @ atoms
        centered = atoms - mean
        cov = (centered * w[:, None]).T @ centered
        cov = 0.5 * (cov + cov.T)
        for name, arr in (("atoms", atoms), ("weights", w), ("mean", mean),
                          ("cov", cov), ("centered", centered)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1] // 2

    def to_dict(self) -> dict:
        return {"atoms": [{"zeta": [float(v) for v in a], "weight": float(wt)}
                          for a, wt in zip(self.atoms, self.weights)]}


def zero_model(d: int) -> PerturbationModel:
    return PerturbationModel(np.zeros((1, 2 * d)), [1.0])


def standard_test_model(d: int = 2) -> PerturbationModel:
    """zeta+ = (+1, -1, 0, ...) w.p. 3/4 and zeta- = -zeta+ w.p. 1/4."""
    plus = np.zeros(2 * d)
    plus[0], plus[1] = 1.0, -1.0
    return PerturbationModel(np.vstack([plus, -plus]), [0.75, 0.25])


def symmetric_test_model(d: int = 2) -> PerturbationModel:
    """Same atoms as the standard model but with equal weights (mean zero)."""
    plus = np.zeros(2 * d)
    plus[0], plus[1] = 1.0, -1.0
    return PerturbationModel(np.vstack([plus, -plus]), [0.5, 0.5])


@dataclass(frozen=True, eq=False)
class EnvironmentField:
    """omega(x, e) = p0(e) + eps * xi(x, e), generated lazily from (seed, x).

    Use :func:`make_environment` to construct; it validates the parameters.
    """

    base: TransitionKernel
    epsilon: float
    model: PerturbationModel
    seed: int
    period: Optional[int] = None

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def kappa(self) -> float:
        return float(self.base.probs.min() - self.epsilon)

    @property
    def atom_kernels(self) -> np.ndarray:
        return self.base.probs[None, :] + self.epsilon * self.model.atoms

    def with_seed(self, seed: int) -> "EnvironmentField":
        return EnvironmentField(self.base, self.epsilon, self.model, int(seed), self.period)

    def with_epsilon(self, epsilon: float) -> "EnvironmentField":
        return make_environment(self.base, epsilon, self.model, self.seed, self.period)

    def site_atom(self, x) -> int:
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if x.size != self.dimension:
            raise ModelError(f"site {tuple(x)} has wrong dimension")
        u = site_uniform(as_u64(self.seed), x, self.period or 0)
        return atom_from_uniform(self.model.weights, u)

    def site_atoms(self, sites) -> np.ndarray:
        sites = np.ascontiguousarray(np.asarray(sites, dtype=np.int64).reshape(-1, self.dimension))
        u = site_uniforms(as_u64(self.seed), sites, self.period or 0)
        cdf = np.cumsum(self.model.weights)
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.model.n_atoms - 1)

    def torus_atoms(self) -> np.ndarray:
        """Atom index of every torus site, array of shape (L,)*d."""
        L = self._require_period()
        grid = np.indices((L,) * self.dimension).reshape(self.dimension, -1).T
        return self.site_atoms(grid).reshape((L,) * self.dimension)

    def _require_period(self) -> int:
        if not self.period:
            raise ModelError("operation requires a torus environment (period set)")
        return self.period


def atom_from_uniform(weights: np.ndarray, u: float) -> int:
    cdf = np.cumsum(weights)
    k = int(np.searchsorted(cdf, u, side="right"))
    return min(k, len(weights) - 1)


def make_environment(base: TransitionKernel, epsilon: float, model: PerturbationModel,
                     seed: int = 0, period: Optional[int] = None) -> EnvironmentField:
    if base.dimension > MAX_DIM:
        raise ModelError(f"dimension {base.dimension} exceeds the supported maximum {MAX_DIM}")
    if model.dimension != base.dimension:
        raise ModelError(
            f"model has dimension {model.dimension}, base kernel {base.dimension}")
    epsilon = float(epsilon)
    pmin = float(base.probs.min())
    if epsilon < 0:
        raise ModelError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon >= pmin:
        raise ModelError(
            f"epsilon={epsilon} >= min p0 = {pmin}: kappa = {pmin - epsilon:.6g} is not positive")
    if period is not None:
        period = int(period)
        if period < 1:
            raise ModelError(f"period must be a positive integer, got {period}")
    return EnvironmentField(base, epsilon, model, int(seed), period)


def site_kernel(env: EnvironmentField, x) -> TransitionKernel:
    return TransitionKernel(env.atom_kernels[env.site_atom(x)])


def annealed_kernel(env: EnvironmentField) -> TransitionKernel:
    """p_eps(e) = p0(e) + eps * E[xi(0, e)]."""
    return annealed_kernel_of(env.base, env.epsilon, env.model)


def annealed_kernel_of(base: TransitionKernel, epsilon: float,
                       model: PerturbationModel) -> TransitionKernel:
    p = base.probs + epsilon * model.mean
    # renormalise away rounding so the kernel validates
    return TransitionKernel(p / math.fsum(p))


def mean_local_drift(env: EnvironmentField) -> np.ndarray:
    """E[d(0, omega)] in closed form from the model moments."""
    return local_drift(env.base) + env.epsilon * (directions(env.dimension).T @ env.model.mean)


@dataclass(frozen=True)
class DriftConditionSpec:
    kind: str
    C: float
    eta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("LLD", "QLD", "LD"):
            raise ModelError(f"unknown drift condition {self.kind!r}")
        if not self.C > 0:
            raise ModelError("C must be positive")
        if self.kind == "LD" and (self.eta is None or not 0 < self.eta < 1):
            raise ModelError("LD requires eta in (0, 1)")


def alpha(d: int) -> float:
    if d < 2:
        raise ModelError("alpha(d) is defined for d >= 2")
    return {2: 2.0, 3: 2.5}.get(d, 3.0)


@dataclass(frozen=True)
class DriftCheck:
    kind: str
    holds: bool
    lhs: float
    rhs: float
    exponent: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


def check_drift_condition(env: EnvironmentField, spec: DriftConditionSpec) -> DriftCheck:
    """Compare E[d(0, omega) . e1] with C eps^k for the requested condition."""
    lam = float(mean_local_drift(env)[0])
    if spec.kind == "LLD":
        k = 1.0
    elif spec.kind == "QLD":
        k = 2.0
    else:
        if not np.allclose(env.base.probs, 1.0 / env.base.probs.size, rtol=0, atol=1e-15):
            raise ModelError("LD requires the uniform base kernel p0 = 1/(2d)")
        k = alpha(env.dimension) - spec.eta
    rhs = spec.C * env.epsilon ** k
    return DriftCheck(spec.kind, lam > rhs, lam, rhs, k)
