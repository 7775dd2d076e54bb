"""Ballisticity certificates: Kalikow's criterion and the polynomial condition."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .estimators import estimate_velocity, wilson_interval
from .lattice import (EnvironmentField, ModelError, PerturbationModel, TransitionKernel,
                      alpha, directions, mean_local_drift)
from .walk import BACK, CENSORED, FRONT, SIDE, SlabBox, exit_batch

GRID_POINTS = 9
FULL_GRID_MAX = 60_000


# ---------------------------------------------------------------------------
# Kalikow

@dataclass
class KalikowObjective:
    """F(g) = sum_a w_a (d_a . e1) / sum_e omega_a(e) g(e) over the model's atoms."""

    kernels: np.ndarray      # (n_atoms, 2d)
    weights: np.ndarray
    drifts: np.ndarray       # d_a . e1

    @classmethod
    def build(cls, model: PerturbationModel, p0: TransitionKernel, epsilon: float):
        if model.dimension != p0.dimension:
            raise ModelError("model and base kernel dimensions differ")
        kern = p0.probs[None, :] + epsilon * model.atoms
        if kern.min() <= 0:
            raise ModelError("kappa must be positive (epsilon too large)")
        drifts = kern @ directions(p0.dimension)[:, 0].astype(float)
        return cls(kern, model.weights.copy(), drifts)

    def __call__(self, g) -> float:
        g = np.asarray(g, dtype=float)
        return float(np.dot(self.weights * self.drifts, 1.0 / (self.kernels @ g)))

    def many(self, G: np.ndarray) -> np.ndarray:
        """F on each row of G."""
        return (1.0 / (G @ self.kernels.T)) @ (self.weights * self.drifts)

    def grad(self, g) -> np.ndarray:
        den = self.kernels @ np.asarray(g, dtype=float)
        return -((self.weights * self.drifts / den ** 2) @ self.kernels)

    @property
    def lam(self) -> float:
        return float(np.dot(self.weights, self.drifts))


@dataclass
class KalikowReport:
    inf_value: float
    argmin: np.ndarray
    lam: float
    holds: bool
    witness: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def message(self) -> str:
        if self.witness is not None:
            return "criterion fails (inf = -inf by scaling)"
        return "criterion holds" if self.holds else "criterion fails (inf <= 0)"

    def to_dict(self) -> dict:
        return {"inf_value": self.inf_value if math.isfinite(self.inf_value) else "-inf",
                "argmin": self.argmin.tolist(), "lambda": self.lam, "holds": self.holds,
                "witness": None if self.witness is None else self.witness.tolist(),
                "message": self.message, **self.diagnostics}


def _face_min(F: KalikowObjective, face: int, rng: np.random.Generator, n_starts: int,
              gtol: float) -> tuple[float, np.ndarray, float]:
    """Minimise F on {g(face) = 1, g in [0,1]^{2d}}; returns (value, g, min probe)."""
    m = F.kernels.shape[1]
    free = [i for i in range(m) if i != face]

    def embed(h):
        g = np.ones(m)
        g[free] = h
        return g

    def f(h):
        return F(embed(h))

    def jac(h):
        return F.grad(embed(h))[free]

    best_v, best_g = math.inf, None
    lowest = math.inf
    starts = [np.ones(m - 1), np.zeros(m - 1)] + [rng.random(m - 1) for _ in range(n_starts)]
    for h0 in starts:
        res = optimize.minimize(f, h0, jac=jac, method="L-BFGS-B", bounds=[(0.0, 1.0)] * (m - 1),
                                options={"ftol": 1e-15, "gtol": gtol, "maxiter": 500})
        v = float(res.fun)
        lowest = min(lowest, v, f(h0))
        if v < best_v:
            best_v, best_g = v, embed(np.clip(res.x, 0, 1))
    # grid polish
    if GRID_POINTS ** (m - 1) <= FULL_GRID_MAX:
        axes = np.linspace(0.0, 1.0, GRID_POINTS)
        H = np.array(list(itertools.product(axes, repeat=m - 1)))
        G = np.ones((H.shape[0], m))
        G[:, free] = H
        vals = F.many(G)
        k = int(np.argmin(vals))
        lowest = min(lowest, float(vals[k]))
        if vals[k] < best_v:
            best_v, best_g = float(vals[k]), G[k]
    g = best_g.copy()
    step = 0.25
    while step > gtol:
        improved = False
        for i in free:
            cand = np.clip(g[i] + step * np.linspace(-1, 1, GRID_POINTS), 0.0, 1.0)
            G = np.repeat(g[None, :], GRID_POINTS, axis=0)
            G[:, i] = cand
            vals = F.many(G)
            k = int(np.argmin(vals))
            lowest = min(lowest, float(vals[k]))
            if vals[k] < best_v - 1e-16:
                best_v, g = float(vals[k]), G[k].copy()
                improved = True
        if not improved:
            step /= 4
    return best_v, g, lowest


def kalikow_infimum(model: PerturbationModel, p0: TransitionKernel, epsilon: float,
                    n_starts: int = 5, seed: int = 0, gtol: float = 1e-8) -> KalikowReport:
    """inf over g in [0,1]^{2d} \\ {0} of F(g), searched face by face.

    F is homogeneous of degree -1, so the infimum over the whole cube is the
    face minimum if that is positive and -inf as soon as any F(g) < 0.
    """
    F = KalikowObjective.build(model, p0, epsilon)
    rng = np.random.default_rng(seed)
    m = F.kernels.shape[1]
    best_v, best_g, lowest = math.inf, None, math.inf
    per_face = []
    for face in range(m):
        v, g, lo = _face_min(F, face, rng, n_starts, gtol)
        per_face.append(v)
        if v < best_v:
            best_v, best_g = v, g
        lowest = min(lowest, lo)
    diag = {"faces": m, "n_starts": n_starts, "grid_points": GRID_POINTS, "gtol": gtol,
            "face_minima": per_face, "face_min": best_v, "lowest_probe": lowest}
    if best_v < 0:
        return KalikowReport(-math.inf, best_g, F.lam, False, best_g, diag)
    return KalikowReport(best_v, best_g, F.lam, best_v > 0, None, diag)


def kalikow_lower_bound(model: PerturbationModel, p0: TransitionKernel, epsilon: float) -> float:
    """(1/(2d)) (lambda - 2 eps^2 / min_e p0(e)^2)."""
    d = p0.dimension
    lam = float(local_e1_drift(model, p0, epsilon))
    return (lam - 2.0 * epsilon ** 2 / float(p0.probs.min()) ** 2) / (2 * d)


def local_e1_drift(model: PerturbationModel, p0: TransitionKernel, epsilon: float) -> float:
    dirs = directions(p0.dimension)[:, 0].astype(float)
    return float(dirs @ (p0.probs + epsilon * model.mean))


def qld_constant(p0: TransitionKernel) -> float:
    return 2.0 / float(p0.probs.min()) ** 2


# ---------------------------------------------------------------------------
# polynomial condition

def c0(d: int, tol: float = 1e-17) -> float:
    """min((2/3) 2^{3(d-1)}, exp{2 (ln 90 + sum_j ln j / 2^j)})."""
    s, j = 0.0, 2
    while True:
        t = math.log(j) / 2.0 ** j
        s += t
        if t < tol:
            break
        j += 1
    return min((2.0 / 3.0) * 2.0 ** (3 * (d - 1)), math.exp(2 * (math.log(90) + s)))


@dataclass
class PolyConditionReport:
    M: float
    L: float
    direction: np.ndarray
    n_runs: int
    failures: int
    censored: int
    counts: dict
    estimate: float
    ci: tuple
    threshold: float
    c0: float
    verdict: str
    max_steps: int

    @property
    def L_at_least_c0(self) -> bool:
        return self.L >= self.c0

    def to_dict(self) -> dict:
        return {"M": self.M, "L": self.L, "direction": self.direction.tolist(),
                "n_runs": self.n_runs, "failures": self.failures, "censored": self.censored,
                "exit_counts": self.counts, "estimate": self.estimate,
                "ci": list(self.ci), "threshold": self.threshold, "c0": self.c0,
                "L_at_least_c0": self.L_at_least_c0, "verdict": self.verdict,
                "max_steps": self.max_steps}


def poly_condition_test(env: EnvironmentField, l: Sequence[float], L: float, M: float = 2.0,
                        n_runs: int = 1000, walk_seed: int = 0, max_steps: int = 10_000_000,
                        confidence: float = 0.95) -> PolyConditionReport:
    """Estimate P_0(X_{T_B} . l < L) over fresh environments, with a Wilson interval."""
    if L < 2:
        raise ModelError("L must be >= 2")
    if n_runs < 100:
        raise ModelError("n_runs must be >= 100")
    box = SlabBox(np.asarray(l, dtype=float), float(L))
    batch = exit_batch(env, box, int(n_runs), walk_seed, max_steps, fresh_environments=True)
    counts = {name: batch.count(k) for k, name in
              ((FRONT, "front"), (BACK, "back"), (SIDE, "side"), (CENSORED, "censored"))}
    fails = counts["back"] + counts["side"]
    cens = counts["censored"]
    n_eff = n_runs - cens
    est = fails / n_eff if n_eff else float("nan")
    lo, hi = wilson_interval(fails, n_eff, confidence) if n_eff else (0.0, 1.0)
    thr = float(L) ** (-M)
    if cens > 0.01 * n_runs:
        verdict = "inconclusive"
    elif hi < thr:
        verdict = "holds empirically"
    elif lo > thr:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    return PolyConditionReport(float(M), float(L), box.direction, int(n_runs), fails, cens,
                               counts, est, (lo, hi), thr, c0(env.dimension), verdict,
                               int(max_steps))


@dataclass
class DecayFit:
    exponent: float
    stderr: float
    Ls: list
    estimates: list

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr, "Ls": self.Ls,
                "estimates": self.estimates}


def decay_exponent(reports: Sequence[PolyConditionReport]) -> DecayFit:
    """Weighted fit of log p_fail = a - k log L; returns k with its standard error.

    Points with no failures are dropped; weights are the inverse delta-method
    variances (1 - p) / (n p) of log p.
    """
    pts = [(r.L, r.estimate, r.n_runs - r.censored) for r in reports if r.failures > 0]
    if len(pts) < 2:
        raise ModelError("need at least two box sizes with observed failures")
    L = np.array([p[0] for p in pts])
    p = np.array([p[1] for p in pts])
    n = np.array([p[2] for p in pts], dtype=float)
    var = (1 - p) / (n * p)
    w = 1.0 / np.maximum(var, 1e-300)
    X = np.column_stack([np.ones_like(L), np.log(L)])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ np.log(p)
    resid = np.log(p) - X @ beta
    dof = max(len(pts) - 2, 1)
    scale = max(1.0, float(resid @ W @ resid) / dof)
    return DecayFit(float(-beta[1]), float(math.sqrt(cov[1, 1] * scale)),
                    [float(x) for x in L], [float(x) for x in p])


def poly_condition_sweep(env: EnvironmentField, l, Ls=(5, 8, 12, 18), M: float = 2.0,
                         n_runs: int = 20_000, walk_seed: int = 0, max_steps: int = 10_000_000
                         ) -> tuple[list[PolyConditionReport], Optional[DecayFit]]:
    reports = [poly_condition_test(env, l, L, M, n_runs, walk_seed + 7919 * i, max_steps)
               for i, L in enumerate(Ls)]
    try:
        fit = decay_exponent(reports)
    except ModelError:
        fit = None
    return reports, fit


def write_sweep_csv(fh, reports: Sequence[PolyConditionReport]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["L", "M", "estimate", "ci_low", "ci_high", "threshold", "verdict"])
    for r in reports:
        w.writerow([repr(r.L), repr(r.M), repr(r.estimate), repr(r.ci[0]), repr(r.ci[1]),
                    repr(r.threshold), r.verdict])


# ---------------------------------------------------------------------------
# velocity upper bound

@dataclass
class UpperBoundCheck:
    epsilon: float
    velocity: float
    stderr: float
    mean_drift: float
    bound: float
    holds: bool
    positive: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def velocity_upper_bound_check(env: EnvironmentField, n_walks: int, n_steps: int,
                               C: float = 1.0, eta: float = 0.1, walk_seed: int = 0,
                               z: float = 2.0) -> UpperBoundCheck:
    """0 < v.e1 <= E[d(0, omega)].e1 + C eps^{alpha(d) - eta}, CI-adjusted by z stderr."""
    est = estimate_velocity(env, n_walks, n_steps, walk_seed=walk_seed)
    v, se = float(est.mean[0]), float(est.stderr[0])
    lam = float(mean_local_drift(env)[0])
    bound = lam + C * env.epsilon ** (alpha(env.dimension) - eta)
    return UpperBoundCheck(env.epsilon, v, se, lam, bound, v - z * se <= bound, v + z * se > 0)
