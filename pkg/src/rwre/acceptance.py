"""End-to-end acceptance checks, shared by ``rwre verify-all`` and the test suite.

Each check returns a :class:`CriterionResult`; ``scale`` in (0, 1] shrinks the
Monte Carlo budgets for smoke runs (the tolerances are not relaxed, so small
scales may fail for statistical reasons).
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .ballistic import (KalikowObjective, kalikow_infimum, poly_condition_sweep,
                        poly_condition_test, qld_constant, velocity_upper_bound_check)
from .estimators import (estimate_mu_delta, estimate_velocity, estimate_window_measure,
                         torus_solve)
from .expansion import torus_expansion_terms, velocity_coefficients
from .green import green, j_kernel
from .lattice import (DriftConditionSpec, PerturbationModel, TransitionKernel, alpha,
                      annealed_kernel, annealed_kernel_of, check_drift_condition, directions,
                      make_environment, standard_test_model, uniform_kernel)

WINDOW = ((0, 0), (1, 0))


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return (f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number} ({self.name}): "
                f"{self.summary} [{self.seconds:.1f}s]")

    def to_dict(self) -> dict:
        # no timing here: verify-all artifacts must be byte-stable
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "summary": self.summary, "details": self.details}


def _fit_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(np.abs(ys)), 1)[0])


def _n(base: int, scale: float, floor: int = 1) -> int:
    return max(floor, int(round(base * scale)))


# ---------------------------------------------------------------------------

def torus_equivalence(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    env = make_environment(uniform_kernel(2), 0.05, standard_test_model(2), seed=seed + 11,
                           period=4)
    oracle = torus_solve(env, WINDOW)
    n_walks, burn = 16, 1000
    steps = _n(10_000_000, scale) // n_walks
    est = estimate_window_measure(env, WINDOW, n_walks, steps + burn, burn_in=burn,
                                  walk_seed=seed + 12, fixed_environment=True)
    tv = est.tv_distance(oracle.q_b)
    return CriterionResult(1, "torus oracle equivalence", tv < 0.01,
                           f"TV = {tv:.2e} over {n_walks * steps:.2e} steps (need < 0.01)",
                           {"tv": tv, "steps": n_walks * steps, "q_exact": oracle.q_b.tolist(),
                            "q_hat": est.q_hat.tolist(), "stationary_residual": oracle.residual})


def expansion_scaling(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    eps = [0.02, 0.04, 0.08]
    r1, r2 = [], []
    for e in eps:
        env = make_environment(uniform_kernel(2), e, standard_test_model(2), seed=seed + 5,
                               period=8)
        te = torus_expansion_terms(env, 2)
        r1.append(te.residual(1))
        r2.append(te.residual(2))
    s1, s2 = _fit_slope(eps, r1), _fit_slope(eps, r2)
    ok = s1 >= 1.7 and s2 >= 2.6
    return CriterionResult(2, "expansion-order scaling", ok,
                           f"slope first order {s1:.2f} (need >= 1.7), "
                           f"second order {s2:.2f} (need >= 2.6)",
                           {"epsilons": eps, "residual_first": r1, "residual_second": r2,
                            "slope_first": s1, "slope_second": s2})


def velocity_expansion(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    """Second-order velocity residual at eps = 0.08 and 0.04.

    The residual is expected to be O(eps^{2.5}) or smaller, i.e. about 1e-5 at
    these eps, which is at the Monte Carlo noise floor of any desk-scale run.
    The check therefore asks for (a) a factor-3 decrease that is consistent
    with the 2-sigma intervals and (b) that the eps^2 term itself is resolved,
    so the comparison is not vacuous.  The raw ratio is reported as well.
    """
    model = standard_test_model(2)
    p0 = uniform_kernel(2)
    n_env = _n(2000, scale, 200)
    pts = [tuple(s * e) for e in directions(2) for s in (1, -1)]
    rows = []
    for k, eps in enumerate((0.08, 0.04)):
        pstar = annealed_kernel_of(p0, eps, model).reversed()
        ve = velocity_coefficients(p0, model, eps, j_kernel(pstar, pts, tol=1e-8))
        env = make_environment(p0, eps, model, seed=seed + 2024)
        v = estimate_velocity(env, n_env, 1_000_000, walk_seed=seed + 7 + k)
        rows.append({"epsilon": eps, "v": float(v.mean[0]), "stderr": float(v.stderr[0]),
                     "d2": float(ve.d2[0]), "second_order_term": eps ** 2 * float(ve.d2[0]),
                     "residual": float(v.mean[0] - ve.v_approx[0])})
    a, b = rows
    ratio = abs(a["residual"]) / max(abs(b["residual"]), 1e-300)
    consistent = max(abs(b["residual"]) - 2 * b["stderr"], 0.0) <= (abs(a["residual"])
                                                                    + 2 * a["stderr"]) / 3.0
    resolved = abs(a["second_order_term"]) > 5 * a["stderr"]
    ok = consistent and resolved
    summ = (f"residuals {a['residual']:.2e} ({a['residual'] / a['stderr']:.1f} sd), "
            f"{b['residual']:.2e} ({b['residual'] / b['stderr']:.1f} sd); raw ratio {ratio:.2f}; "
            f"factor 3 {'consistent' if consistent else 'inconsistent'} within 2 sd; "
            f"eps^2 term at {abs(a['second_order_term']) / a['stderr']:.0f} sd; "
            f"{n_env} envs x 1e6 steps")
    return CriterionResult(3, "velocity expansion", ok, summ,
                           {"rows": rows, "raw_ratio": ratio, "consistent": consistent,
                            "second_order_resolved": resolved, "n_environments": n_env})


def velocity_upper_bound(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    model = standard_test_model(3)
    rows, ok = [], True
    k = alpha(3) - 0.1
    for i, eps in enumerate((0.05, 0.1)):
        env = make_environment(uniform_kernel(3), eps, model, seed=seed + 31)
        chk = velocity_upper_bound_check(env, _n(1000, scale, 50), 200_000, C=1.0, eta=0.1,
                                         walk_seed=seed + 32 + i)
        c_fit = max(chk.velocity - chk.mean_drift, 0.0) / eps ** k
        rows.append(dict(chk.to_dict(), fitted_C=c_fit))
        ok &= bool(chk.holds and chk.positive)
    summ = "; ".join(f"eps={r['epsilon']}: v={r['velocity']:.5f}+-{r['stderr']:.1e} vs bound "
                     f"{r['bound']:.5f}" for r in rows)
    return CriterionResult(4, "velocity upper bound", ok, summ, {"rows": rows, "exponent": k})


def green_golden(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    J = j_kernel(uniform_kernel(2), [(1, 0), (1, 1)], tol=1e-9)
    j0, je1, j11 = J((0, 0)), J((1, 0)), J((1, 1))
    checks = {"J(0) == 0": j0 == 0.0,
              "J(e1) = -1": abs(je1 + 1.0) <= 1e-4,
              "J(1,1) = -4/pi": abs(j11 + 4 / math.pi) <= 1e-4}
    tables = {
        "2d drifted (series)": green(annealed_kernel(make_environment(
            uniform_kernel(2), 0.1, standard_test_model(2))), [(3, 3)], method="series"),
        "2d drifted (solve)": green(annealed_kernel(make_environment(
            uniform_kernel(2), 0.1, standard_test_model(2))), [(3, 3)], method="solve"),
        "2d deterministic drift": green(TransitionKernel(np.array([0.4, 0.1, 0.25, 0.25])),
                                        [(2, 2)]),
        "3d simple walk": green(uniform_kernel(3), [(2, 2, 2)], tol=1e-6),
        "3d drifted": green(annealed_kernel(make_environment(
            uniform_kernel(3), 0.15, standard_test_model(3))), [(2, 2, 2)], tol=1e-6),
    }
    res = {}
    for name, t in tables.items():
        r = t.resolvent_residual()
        res[name] = {"residual": r, "bound": t.truncation_bound, "certified": t.certified}
        checks[f"resolvent {name}"] = r <= max(t.truncation_bound, 1e-12)
    ok = all(checks.values())
    bad = [k for k, v in checks.items() if not v]
    summ = (f"J(0)={j0!r}, J(e1)={je1:.10f}, J(1,1)+4/pi={j11 + 4 / math.pi:.1e}; "
            f"{len(tables)} Green tables " + ("within bounds" if not bad else f"failing {bad}"))
    return CriterionResult(5, "Green/J golden values", ok, summ,
                           {"J": {"0": j0, "e1": je1, "11": j11}, "tables": res, "checks": checks})


def random_qld_model(rng: np.random.Generator):
    """Random (model, p0, eps) satisfying QLD with C = 2 / min p0^2."""
    while True:
        d = int(rng.integers(2, 4))
        p0 = rng.dirichlet(np.full(2 * d, 4.0))
        if p0.min() < 0.04:
            continue
        n_atoms = int(rng.integers(1, 5))
        atoms = rng.uniform(-1, 1, size=(n_atoms, 2 * d))
        atoms -= atoms.mean(axis=1, keepdims=True)
        atoms /= max(1.0, float(np.abs(atoms).max()))
        atoms[:, -1] = -atoms[:, :-1].sum(axis=1)        # exact zero row sums
        if np.abs(atoms).max() > 1.0:
            continue
        model = PerturbationModel(atoms, rng.dirichlet(np.ones(n_atoms)))
        base = TransitionKernel(p0)
        C = qld_constant(base)
        eps = float(rng.uniform(0.05, 0.95)) * float(p0.min())
        for _ in range(30):
            env = make_environment(base, eps, model)
            if check_drift_condition(env, DriftConditionSpec("QLD", C)).holds:
                return model, base, eps
            eps /= 2


def kalikow_under_qld(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed + 60)
    n_models = 50
    infs, worst_h, failures = [], 0.0, []
    for i in range(n_models):
        model, base, eps = random_qld_model(rng)
        rep = kalikow_infimum(model, base, eps, n_starts=3, seed=seed + i)
        infs.append(rep.inf_value)
        if not rep.inf_value > 0:
            failures.append(i)
        F = KalikowObjective.build(model, base, eps)
        for _ in range(20):
            g = rng.random(2 * base.dimension) + 1e-3
            c = float(rng.uniform(1e-3, 10.0))
            worst_h = max(worst_h, abs(F(c * g) * c - F(g)) / max(1.0, abs(F(g))))
    ok = not failures and worst_h <= 1e-12
    return CriterionResult(6, "Kalikow under QLD", ok,
                           f"{n_models - len(failures)}/{n_models} models with inf > 0 "
                           f"(smallest {min(infs):.2e}); homogeneity error {worst_h:.1e}",
                           {"infima": infs, "failures": failures, "homogeneity_error": worst_h})


def mu_delta_convergence(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2), seed=seed + 70)
    pats = [(1, 1)]
    ref = estimate_window_measure(env, WINDOW, _n(400, scale, 20), 200_000, walk_seed=seed + 71)
    i = ref.patterns.index(pats[0])
    q, q_se = float(ref.q_hat[i]), float(ref.q_stderr[i])
    rows = []
    for k, (delta, n) in enumerate(((0.9, 400_000), (0.99, 200_000), (0.999, 40_000))):
        m = estimate_mu_delta(env, delta, WINDOW, pats, _n(n, scale, 1000), walk_seed=seed + 72 + k)
        rows.append({"delta": delta, "estimate": m.estimate, "stderr": m.stderr,
                     "distance": abs(m.estimate - q), "n_replicas": m.n_replicas})
    ok = True
    for a, b in zip(rows, rows[1:]):
        tol = 2.0 * math.sqrt(a["stderr"] ** 2 + b["stderr"] ** 2 + 2 * q_se ** 2)
        ok &= b["distance"] <= a["distance"] + tol
    summ = ", ".join(f"delta={r['delta']}: |diff|={r['distance']:.4f}+-{r['stderr']:.4f}"
                     for r in rows) + f" (window measure {q:.4f})"
    return CriterionResult(7, "mu_delta convergence", bool(ok), summ,
                           {"window_measure": q, "window_measure_stderr": q_se, "rows": rows})


def polynomial_condition(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    srw = make_environment(uniform_kernel(2), 0.0, standard_test_model(2), seed=seed + 80)
    r = poly_condition_test(srw, (1, 0), 10, M=1, n_runs=_n(2000, scale, 200),
                            walk_seed=seed + 81)
    srw_ok = abs(r.estimate - 0.5) < 0.05 and r.ci[0] > 0.1
    env = make_environment(uniform_kernel(2), 0.1, standard_test_model(2), seed=seed + 82)
    reps, fit = poly_condition_sweep(env, (1, 0), (5, 8, 12, 18), M=2,
                                     n_runs=_n(20_000, scale, 1000), walk_seed=seed + 83)
    est = [x.estimate for x in reps]
    decreasing = all(b < a for a, b in zip(est, est[1:]))
    fit_ok = fit is not None and fit.exponent > 0
    ok = srw_ok and decreasing and fit_ok
    summ = (f"SRW L=10: {r.estimate:.3f} CI ({r.ci[0]:.3f}, {r.ci[1]:.3f}); eps=0.1 failure "
            f"probabilities {', '.join(f'{p:.4f}' for p in est)}; exponent "
            + (f"{fit.exponent:.2f} +- {fit.stderr:.2f}" if fit else "n/a"))
    return CriterionResult(8, "polynomial condition", ok, summ,
                           {"srw": r.to_dict(), "sweep": [x.to_dict() for x in reps],
                            "fit": fit.to_dict() if fit else None})


# small budgets so every subcommand finishes in seconds
DETERMINISM_CONFIG = {
    "seed": 3,
    "velocity": {"epsilons": [0.08], "n_walks": 16, "n_steps": 20_000},
    "invariant": {"n_walks": 8, "n_steps": 20_000},
    "mudelta": {"deltas": [0.9, 0.99], "n_replicas": 2000, "reference_walks": 8,
                "reference_steps": 20_000},
    "polycond": {"Ls": [5, 8], "n_runs": 500},
    "expansion": {"epsilons": [0.04, 0.08], "period": 6},
    "kalikow": {"n_starts": 2},
}


def determinism(scale: float = 1.0, seed: int = 0) -> CriterionResult:
    import json
    from .cli import SUBCOMMANDS, main
    cfg = dict(DETERMINISM_CONFIG, seed=seed + DETERMINISM_CONFIG["seed"])
    diffs, n_files = [], 0
    with tempfile.TemporaryDirectory() as tmp:
        cpath = Path(tmp) / "config.json"
        cpath.write_text(json.dumps(cfg))
        for sub in SUBCOMMANDS:
            if sub == "verify-all":
                continue
            outs = [Path(tmp) / f"{sub}-{k}" for k in range(2)]
            for o in outs:
                main([sub, "--config", str(cpath), "--out", str(o)])
            names = sorted(p.name for p in outs[0].iterdir() if not p.name.endswith(".timing.json"))
            names2 = sorted(p.name for p in outs[1].iterdir() if not p.name.endswith(".timing.json"))
            if names != names2 or not names:
                diffs.append(f"{sub}: file sets differ")
                continue
            for nm in names:
                n_files += 1
                if (outs[0] / nm).read_bytes() != (outs[1] / nm).read_bytes():
                    diffs.append(f"{sub}/{nm}")
    ok = not diffs
    return CriterionResult(9, "determinism", ok,
                           f"{n_files} artifacts compared, {len(diffs)} differ",
                           {"differences": diffs, "files": n_files})


CRITERIA: tuple[Callable[..., CriterionResult], ...] = (
    torus_equivalence, expansion_scaling, velocity_expansion, velocity_upper_bound,
    green_golden, kalikow_under_qld, mu_delta_convergence, polynomial_condition, determinism)


def run_one(k: int, scale: float = 1.0, seed: int = 0) -> CriterionResult:
    t = time.perf_counter()
    r = CRITERIA[k - 1](scale=scale, seed=seed)
    r.seconds = time.perf_counter() - t
    return r


def run_all(scale: float = 1.0, seed: int = 0) -> list[CriterionResult]:
    return [run_one(k, scale, seed) for k in range(1, len(CRITERIA) + 1)]
