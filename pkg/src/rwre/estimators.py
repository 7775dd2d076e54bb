"""Monte Carlo estimators and the exact torus oracle.

Monte Carlo quantities are annealed: the outer level draws environments,
the inner level walks in them, and standard errors are taken across the
outer replicas.  All reductions use compensated summation so results do not
depend on replica order.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse, stats
from scipy.sparse import linalg as sla

from .lattice import EnvironmentField, ModelError, directions, mean_local_drift
from .walk import (_displacements, _killed_counts, _window_counts, canonical_window,
                   decode_pattern, pack, replica_env_seeds, replica_keys)

DENSE_CAP = 2500
SPARSE_CAP = 1_000_000


def fsum_rows(a: np.ndarray) -> np.ndarray:
    """Compensated column sums of a 2-D array."""
    a = np.asarray(a, dtype=float)
    return np.array([math.fsum(a[:, j]) for j in range(a.shape[1])])


def mean_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and CLT standard errors, compensated."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    m = fsum_rows(x) / n
    if n < 2:
        return m, np.full_like(m, np.nan)
    var = fsum_rows((x - m) ** 2) / (n - 1)
    return m, np.sqrt(var / n)


# ---------------------------------------------------------------------------
# velocity

@dataclass
class VelocityEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_walks: int
    n_steps: int
    burn_in: int
    env_seed: int
    walk_seed: int
    fixed_environment: bool = False

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "stderr": self.stderr.tolist(),
                "n_walks": self.n_walks, "n_steps": self.n_steps, "burn_in": self.burn_in,
                "env_seed": self.env_seed, "walk_seed": self.walk_seed,
                "fixed_environment": self.fixed_environment}


def estimate_velocity(env: EnvironmentField, n_walks: int, n_steps: int,
                      burn_in: Optional[int] = None, walk_seed: int = 0,
                      fixed_environment: bool = False) -> VelocityEstimate:
    """Mean of (X_n - X_b)/(n - b) over independent (environment, walk) replicas."""
    burn_in = n_steps // 10 if burn_in is None else int(burn_in)
    if not 0 <= burn_in < n_steps:
        raise ModelError("need 0 <= burn_in < n_steps")
    if n_walks < 1:
        raise ModelError("n_walks must be >= 1")
    pk = pack(env)
    X = _displacements(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period,
                       replica_env_seeds(env, n_walks, fixed_environment),
                       replica_keys(walk_seed, n_walks), int(n_steps), burn_in)
    m, se = mean_stderr(X / float(n_steps - burn_in))
    return VelocityEstimate(m, se, int(n_walks), int(n_steps), burn_in, env.seed,
                            int(walk_seed), fixed_environment)


# ---------------------------------------------------------------------------
# window measure

def pattern_list(n_atoms: int, size: int) -> list[tuple]:
    return list(itertools.product(range(n_atoms), repeat=size))


def p_pmf(env: EnvironmentField, size: int) -> np.ndarray:
    """Product pmf of atom patterns, indexed by pattern code."""
    w = env.model.weights
    return np.array([math.prod(w[a] for a in p) for p in pattern_list(env.model.n_atoms, size)])


@dataclass
class WindowMeasureEstimate:
    window: tuple
    patterns: list
    p_mass: np.ndarray
    counts: np.ndarray            # pooled, per pattern
    q_hat: np.ndarray
    q_stderr: np.ndarray          # across replicas
    half_q: np.ndarray            # (2, n_patterns): first / second half of the window
    n_walks: int
    n_steps: int
    burn_in: int
    z: float = 1.96
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> np.ndarray:
        return self.q_hat / self.p_mass

    @property
    def zero_count(self) -> np.ndarray:
        return self.counts == 0

    def ratio_ci(self) -> np.ndarray:
        """(n_patterns, 2) intervals; zero-count patterns get [0, upper]."""
        total = self.counts.sum()
        lo = np.maximum(self.q_hat - self.z * self.q_stderr, 0.0)
        hi = self.q_hat + self.z * self.q_stderr
        # rule of three for never-seen patterns
        hi = np.where(self.zero_count, 3.0 / max(total, 1), hi)
        return np.column_stack([lo, hi]) / self.p_mass[:, None]

    def tv_distance(self, other: np.ndarray) -> float:
        return 0.5 * math.fsum(np.abs(self.q_hat - np.asarray(other)))

    def split_half(self) -> dict:
        """First-half vs second-half agreement: max |difference| in units of its stderr."""
        a, b = self.half_q
        se = self.q_stderr * math.sqrt(2.0) * 2.0 + 1e-300
        diff = np.abs(a - b)
        return {"max_abs_diff": float(diff.max()), "max_z": float(np.max(diff / se))}

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern", "p_mass", "q_estimate", "ratio", "ci_low", "ci_high", "zero_count"])
        ci = self.ratio_ci()
        for i, p in enumerate(self.patterns):
            w.writerow([" ".join(str(a) for a in p), repr(float(self.p_mass[i])),
                        repr(float(self.q_hat[i])), repr(float(self.ratio[i])),
                        repr(float(ci[i, 0])), repr(float(ci[i, 1])), int(self.zero_count[i])])

    def to_dict(self) -> dict:
        ci = self.ratio_ci()
        return {
            "window": [list(z) for z in self.window],
            "n_walks": self.n_walks, "n_steps": self.n_steps, "burn_in": self.burn_in,
            "split_half": self.split_half(),
            "patterns": [{"pattern": list(p), "p_mass": float(self.p_mass[i]),
                          "q_estimate": float(self.q_hat[i]), "ratio": float(self.ratio[i]),
                          "ci": [float(ci[i, 0]), float(ci[i, 1])],
                          "zero_count": bool(self.zero_count[i])}
                         for i, p in enumerate(self.patterns)],
            **self.meta,
        }


def estimate_window_measure(env: EnvironmentField, B, n_walks: int, n_steps: int,
                            burn_in: Optional[int] = None, walk_seed: int = 0,
                            fixed_environment: bool = False, z: float = 1.96
                            ) -> WindowMeasureEstimate:
    """Time-averaged pattern frequencies of the environment seen from the walker."""
    B = canonical_window(B)
    if len(B[0]) != env.dimension:
        raise ModelError("window dimension does not match the environment")
    burn_in = n_steps // 10 if burn_in is None else int(burn_in)
    if not 0 <= burn_in < n_steps:
        raise ModelError("need 0 <= burn_in < n_steps")
    if env.epsilon > 0 and mean_local_drift(env)[0] <= 0:
        warnings.warn("no drift condition holds in direction e1; the walk may not be "
                      "ballistic and the window measure may not converge", RuntimeWarning)
    pk = pack(env)
    n_pat = pk.n_atoms ** len(B)
    split = burn_in + (n_steps - burn_in) // 2
    counts = _window_counts(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period,
                            replica_env_seeds(env, n_walks, fixed_environment),
                            replica_keys(walk_seed, n_walks), np.array(B, dtype=np.int64),
                            pk.n_atoms, n_pat, int(n_steps), burn_in, split)
    pooled = counts.sum(axis=(0, 1))
    total = pooled.sum()
    per_rep = counts.sum(axis=1) / float(n_steps - burn_in)
    q_mean, q_se = mean_stderr(per_rep)
    halves = counts.sum(axis=0).astype(float)
    halves /= halves.sum(axis=1, keepdims=True)
    return WindowMeasureEstimate(B, pattern_list(pk.n_atoms, len(B)), p_pmf(env, len(B)),
                                 pooled, pooled / float(total), q_se, halves, int(n_walks),
                                 int(n_steps), burn_in, z,
                                 {"env_seed": env.seed, "walk_seed": int(walk_seed),
                                  "fixed_environment": fixed_environment,
                                  "pooled_mean_check": float(np.max(np.abs(q_mean - pooled / total)))})


# ---------------------------------------------------------------------------
# mu_delta

@dataclass
class MuDeltaEstimate:
    delta: float
    numerator: float          # mean over replicas of #{n <= tau : f(t_{X_n} omega) = 1}
    denominator: float        # mean of tau + 1
    estimate: float
    stderr: float
    n_replicas: int
    hits: np.ndarray = field(repr=False)
    taus: np.ndarray = field(repr=False)

    def complement(self) -> "MuDeltaEstimate":
        """Same replicas, indicator 1 - f."""
        hits = self.taus + 1 - self.hits
        return _mu_from(self.delta, hits, self.taus)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "numerator": self.numerator,
                "denominator": self.denominator, "estimate": self.estimate,
                "stderr": self.stderr, "n_replicas": self.n_replicas,
                "expected_denominator": 1.0 / (1.0 - self.delta),
                "label": "empirical convergence only"}


def _mu_from(delta, hits, taus) -> MuDeltaEstimate:
    n = hits.size
    num = math.fsum(hits) / n
    den = math.fsum(taus + 1) / n
    est = num / den
    # delta method for a ratio of means
    resid = hits - est * (taus + 1)
    se = math.sqrt(math.fsum(resid.astype(float) ** 2) / max(n - 1, 1) / n) / den
    return MuDeltaEstimate(float(delta), num, den, est, se, n, hits, taus)


def indicator_mask(f, n_atoms: int, size: int) -> np.ndarray:
    """Boolean mask over pattern codes from a callable, a set of patterns or a mask."""
    pats = pattern_list(n_atoms, size)
    if callable(f):
        return np.array([bool(f(p)) for p in pats])
    arr = np.asarray(f)
    if arr.dtype == bool and arr.shape == (len(pats),):
        return arr.copy()
    chosen = {tuple(int(a) for a in p) for p in f}
    return np.array([p in chosen for p in pats])


def estimate_mu_delta(env: EnvironmentField, delta: float, B, f, n_replicas: int,
                      walk_seed: int = 0, fixed_environment: bool = False) -> MuDeltaEstimate:
    """Path-sum estimator of int f dmu_delta (fresh environment per replica)."""
    if not 0 < delta < 1:
        raise ModelError("delta must lie in (0, 1)")
    B = canonical_window(B)
    pk = pack(env)
    mask = indicator_mask(f, pk.n_atoms, len(B))
    taus, hits = _killed_counts(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period,
                                replica_env_seeds(env, n_replicas, fixed_environment),
                                replica_keys(walk_seed, n_replicas), float(delta),
                                np.array(B, dtype=np.int64), pk.n_atoms, mask)
    return _mu_from(delta, hits, taus)


# ---------------------------------------------------------------------------
# torus oracle

@dataclass
class TorusOracle:
    period: int
    pi: np.ndarray                 # (L,)*d
    window: Optional[tuple]
    q_b: Optional[np.ndarray]      # per pattern code
    p_b: Optional[np.ndarray]      # empirical site frequencies on this torus
    velocity: np.ndarray
    residual: float
    atoms: np.ndarray = field(repr=False)
    method: str = "dense"

    def velocity_from_patterns(self, drift_of_atom: np.ndarray) -> np.ndarray:
        """sum over patterns of Q(pattern) times the drift of the atom at the origin."""
        if self.window is None or (0,) * self.pi.ndim not in self.window:
            raise ModelError("window must contain the origin")
        j = self.window.index((0,) * self.pi.ndim)
        n_atoms = drift_of_atom.shape[0]
        out = np.zeros(drift_of_atom.shape[1])
        for code, q in enumerate(self.q_b):
            a = decode_pattern(code, n_atoms, len(self.window))[j]
            out += q * drift_of_atom[a]
        return out

    def to_dict(self) -> dict:
        d = {"period": self.period, "velocity": self.velocity.tolist(),
             "residual": self.residual, "method": self.method}
        if self.window is not None:
            d["window"] = [list(z) for z in self.window]
            d["q_b"] = self.q_b.tolist()
            d["p_b"] = self.p_b.tolist()
        return d


def torus_transition(env: EnvironmentField):
    """Sparse P on the L^d torus sites (row-major) and the per-site kernels."""
    L, d = env.period, env.dimension
    atoms = env.torus_atoms()
    kern = env.atom_kernels[atoms]                  # (L,)*d + (2d,)
    N = L ** d
    idx = np.arange(N).reshape((L,) * d)
    rows, cols, vals = [], [], []
    for k, e in enumerate(directions(d)):
        rows.append(idx.ravel())
        cols.append(np.roll(idx, shift=tuple(-int(c) for c in e), axis=tuple(range(d))).ravel())
        vals.append(kern[..., k].ravel())
    P = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N, N))
    return P, atoms, kern


def torus_solve(env: EnvironmentField, B=None, dense_cap: int = DENSE_CAP,
                max_states: int = SPARSE_CAP) -> TorusOracle:
    """Exact stationary law of the walk on the torus and the induced window pmf."""
    if not env.period:
        raise ModelError("torus_solve requires a periodic environment")
    L, d = env.period, env.dimension
    N = L ** d
    if N > max_states:
        raise ModelError(f"torus has {N} states, above the cap {max_states}; use a smaller L")
    P, atoms, kern = torus_transition(env)
    A = (P.T - sparse.identity(N, format="csr")).tolil()
    A[N - 1, :] = np.ones(N)
    b = np.zeros(N)
    b[-1] = 1.0
    if N <= dense_cap:
        pi = np.linalg.solve(A.toarray(), b)
        method = "dense"
    else:
        pi = sla.spsolve(A.tocsc(), b)
        method = "sparse-direct"
    residual = float(np.max(np.abs(P.T @ pi - pi)))
    pi = pi.reshape((L,) * d)
    drift = kern @ directions(d).astype(float)        # (L,)*d + (d,)
    vel = np.array([math.fsum((pi * drift[..., i]).ravel()) for i in range(d)])
    q_b = p_b = win = None
    if B is not None:
        win = canonical_window(B)
        codes = pattern_codes(atoms, win, env.model.n_atoms)
        n_pat = env.model.n_atoms ** len(win)
        q_b = np.array([math.fsum(pi[codes == c]) for c in range(n_pat)])
        p_b = np.bincount(codes.ravel(), minlength=n_pat) / float(N)
    return TorusOracle(L, pi, win, q_b, p_b, vel, residual, atoms, method)


def pattern_codes(atoms: np.ndarray, B, n_atoms: int) -> np.ndarray:
    """Pattern code of t_x omega on B for every torus site x."""
    d = atoms.ndim
    code = np.zeros(atoms.shape, dtype=np.int64)
    for z in canonical_window(B):
        code = code * n_atoms + np.roll(atoms, shift=tuple(-int(c) for c in z), axis=tuple(range(d)))
    return code


def power_iteration_stationary(env: EnvironmentField, tol: float = 1e-13,
                               max_iter: int = 1_000_000) -> np.ndarray:
    """Independent oracle: iterate the lazy chain (I + P)/2 to its fixed point."""
    P, _, _ = torus_transition(env)
    N = P.shape[0]
    pi = np.full(N, 1.0 / N)
    PT = P.T.tocsr()
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        if np.max(np.abs(nxt - pi)) < tol:
            return (nxt / nxt.sum()).reshape((env.period,) * env.dimension)
        pi = nxt
    raise ModelError("power iteration did not converge")


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence,
                                                       method="wilson")
    return float(ci.low), float(ci.high)
