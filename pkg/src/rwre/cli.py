"""Command-line entry point: ``rwre <subcommand> [--config PATH] [--seed N] ...``."""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, build_environment, config_hash, load_config, resolve, seeds
from .lattice import ModelError, annealed_kernel, directions, TransitionKernel

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2

SUBCOMMANDS = ("velocity", "invariant", "mudelta", "green", "jkernel", "expansion", "kalikow",
               "polycond", "torus-oracle", "verify-all")


def _kernel_from(spec, env) -> TransitionKernel:
    if spec == "annealed":
        return annealed_kernel(env)
    if spec == "annealed_reversed":
        return annealed_kernel(env).reversed()
    if spec == "base":
        return env.base
    return TransitionKernel(np.asarray(spec, dtype=float))


def _unit_points(d: int) -> list[tuple]:
    return [tuple(int(c) for c in s * e) for e in directions(d) for s in (1, -1)]


def _slope(xs, ys) -> dict:
    """Least-squares log-log slope with its standard error."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.abs(np.asarray(ys, dtype=float)))
    if len(x) < 2 or not np.all(np.isfinite(y)):
        return {"slope": float("nan"), "stderr": float("nan")}
    X = np.column_stack([np.ones_like(x), x])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    if len(x) > 2:
        resid = y - X @ beta
        s2 = float(resid @ resid) / (len(x) - 2)
        se = math.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
    else:
        se = float("nan")
    return {"slope": float(beta[1]), "stderr": se}


def _csv(header, rows) -> str:
    import csv
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands; each fills ``art`` and returns nothing

def cmd_velocity(cfg, art):
    from .estimators import estimate_velocity
    from .expansion import velocity_coefficients
    from .green import j_kernel
    c = cfg["velocity"]
    env0 = build_environment(cfg)
    eps_grid = c.get("epsilons") or [env0.epsilon]
    rows, out = [], []
    for eps in eps_grid:
        env = env0.with_epsilon(eps)
        est = estimate_velocity(env, c["n_walks"], c["n_steps"], c.get("burn_in"),
                                walk_seed=art.seeds["walk"])
        rec = {"epsilon": eps, "estimate": est.to_dict()}
        row = [float(eps)] + [float(v) for v in est.mean] + [float(s) for s in est.stderr]
        if c.get("compare_expansion") and eps > 0 and env.dimension == 2:
            pstar = annealed_kernel(env).reversed()
            J = j_kernel(pstar, _unit_points(env.dimension))
            ve = velocity_coefficients(env.base, env.model, eps, J)
            resid = float(est.mean[0] - ve.v_approx[0])
            rec["expansion"] = ve.to_dict()
            rec["residual_e1"] = resid
            row += [float(ve.v_approx[0]), resid]
        rows.append(row)
        out.append(rec)
    d = env0.dimension
    header = (["epsilon"] + [f"v{i + 1}" for i in range(d)] + [f"stderr{i + 1}" for i in range(d)])
    if all(len(r) > len(header) for r in rows):
        header += ["v_approx1", "residual1"]
        nz = [(r[0], r[-1]) for r in rows if r[0] > 0]
        if len(nz) >= 2:
            art.result["residual_slope"] = _slope(*zip(*nz))
    art.result["grid"] = out
    art.csv_files["velocity.csv"] = _csv(header, rows)
    art.checks["finite_estimates"] = all(np.all(np.isfinite(r[1:])) for r in rows)


def cmd_invariant(cfg, art):
    from .estimators import estimate_window_measure
    c = cfg["invariant"]
    env = build_environment(cfg)
    w = estimate_window_measure(env, c["window"], c["n_walks"], c["n_steps"], c.get("burn_in"),
                                walk_seed=art.seeds["walk"],
                                fixed_environment=c["fixed_environment"])
    art.result.update(w.to_dict())
    buf = io.StringIO()
    w.write_csv(buf)
    art.csv_files["invariant_window.csv"] = buf.getvalue()
    art.checks["pmf_sums_to_one"] = abs(math.fsum(w.q_hat) - 1.0) < 1e-12
    art.checks["split_half_agreement"] = w.split_half()["max_z"] < 4.0


def cmd_mudelta(cfg, art):
    from .estimators import estimate_mu_delta, estimate_window_measure
    c = cfg["mudelta"]
    env = build_environment(cfg)
    pats = [tuple(p) for p in c["patterns"]]
    ref = estimate_window_measure(env, c["window"], c["reference_walks"], c["reference_steps"],
                                  walk_seed=art.seeds["walk"] + 1)
    idx = [ref.patterns.index(p) for p in pats]
    q_ref = math.fsum(ref.q_hat[i] for i in idx)
    rows, ests = [], []
    for k, delta in enumerate(c["deltas"]):
        m = estimate_mu_delta(env, delta, c["window"], pats, c["n_replicas"],
                              walk_seed=art.seeds["walk"] + 100 + k)
        comp = m.complement()
        ests.append(dict(m.to_dict(), distance_to_window_measure=abs(m.estimate - q_ref),
                         complement_estimate=comp.estimate))
        rows.append([float(delta), m.estimate, m.stderr, abs(m.estimate - q_ref)])
        art.checks[f"complement_sums_to_one_{delta}"] = abs(m.estimate + comp.estimate - 1) < 1e-12
    art.result.update({"patterns": [list(p) for p in pats], "window_measure": q_ref,
                       "estimates": ests, "label": "empirical convergence only"})
    art.csv_files["mudelta.csv"] = _csv(["delta", "estimate", "stderr", "distance"], rows)


def cmd_green(cfg, art):
    from .green import green
    c = cfg["green"]
    env = build_environment(cfg)
    k = _kernel_from(c["kernel"], env)
    g = green(k, [tuple(p) for p in c["points"]], tol=c["tol"], method=c["method"])
    art.result.update({"kernel": k.to_text(), "method": g.method, "certified": g.certified,
                       "truncation_bound": g.truncation_bound, "n_terms": g.n_terms,
                       "box_radius": g.box_radius,
                       "values": {tuple(p): g(p) for p in c["points"]},
                       "resolvent_residual": g.resolvent_residual()})
    art.csv_files["green_table.csv"] = g.to_csv()
    art.checks["resolvent_within_bound"] = g.resolvent_residual() <= max(g.truncation_bound, 1e-12)


def cmd_jkernel(cfg, art):
    from .green import j_kernel
    c = cfg["jkernel"]
    env = build_environment(cfg)
    k = _kernel_from(c["kernel"], env)
    J = j_kernel(k, [tuple(p) for p in c["points"]], tol=c["tol"], n_max=c["n_max"])
    diag = {key: v for key, v in J.diagnostics.items() if key != "partial_sums"}
    art.result.update({"kernel": k.to_text(), "values": J.values, "error_bound": J.error_bound,
                       "stable": J.stable, "diagnostics": diag})
    art.csv_files["jkernel_table.csv"] = J.to_csv()
    art.checks["stable"] = J.stable
    art.checks["J0_is_zero"] = J((0,) * k.dimension) == 0.0


def cmd_expansion(cfg, art):
    from .expansion import (first_order_density, required_points, torus_expansion_terms,
                            velocity_coefficients)
    from .green import j_kernel
    c = cfg["expansion"]
    eps_grid = [e for e in c["epsilons"] if e > 0]
    order = c["order"]
    rows, res = [], {m: [] for m in range(1, order + 1)}
    dens = []
    for eps in eps_grid:
        env = build_environment(cfg, epsilon=eps, period=c["period"])
        te = torus_expansion_terms(env, order)
        row = [float(eps)]
        for m in range(1, order + 1):
            r = te.residual(m)
            res[m].append(r)
            row.append(r)
        rows.append(row)
        base_env = build_environment(cfg, epsilon=eps, period=None)
        if base_env.dimension == 2:
            pstar = annealed_kernel(base_env).reversed()
            J = j_kernel(pstar, required_points(c["window"], 2, c["convention"])
                         + _unit_points(2), tol=c["tol"])
            de = first_order_density(base_env.base, eps, base_env.model, c["window"], J,
                                     c["convention"])
            ve = velocity_coefficients(base_env.base, base_env.model, eps, J, c["convention"])
            dens.append({"epsilon": eps, "density": de.to_dict(), "velocity": ve.to_dict()})
    slopes = {f"order_{m}": _slope(eps_grid, res[m]) for m in res}
    art.result.update({"torus_period": c["period"], "residuals": res, "slopes": slopes,
                       "first_order": dens})
    art.csv_files["expansion_residuals.csv"] = _csv(
        ["epsilon"] + [f"residual_order_{m}" for m in range(1, order + 1)], rows)
    if len(eps_grid) >= 2:
        for m in res:
            art.checks[f"order_{m}_slope_at_least_{m + 0.6:.1f}"] = slopes[f"order_{m}"]["slope"] >= m + 0.6


def cmd_kalikow(cfg, art):
    from .ballistic import KalikowObjective, kalikow_infimum, kalikow_lower_bound, qld_constant
    from .lattice import check_drift_condition, DriftConditionSpec
    env = build_environment(cfg)
    rep = kalikow_infimum(env.model, env.base, env.epsilon, cfg["kalikow"]["n_starts"],
                          seed=art.seeds["walk"] % (2 ** 32))
    C = qld_constant(env.base)
    qld = check_drift_condition(env, DriftConditionSpec("QLD", C))
    F = KalikowObjective.build(env.model, env.base, env.epsilon)
    rng = np.random.default_rng(art.seeds["walk"] % (2 ** 32))
    worst = 0.0
    for _ in range(100):
        g = rng.random(F.kernels.shape[1]) + 1e-3
        c = rng.uniform(1e-3, 1.0)
        worst = max(worst, abs(F(c * g) * c - F(g)) / max(1.0, abs(F(g))))
    art.result.update({"report": rep.to_dict(), "kalikow_lower_bound": kalikow_lower_bound(env.model, env.base,
                                                                               env.epsilon),
                       "qld_constant": C, "qld_holds": qld.holds, "homogeneity_error": worst})
    art.checks["homogeneity"] = worst <= 1e-12
    art.csv_files["kalikow_faces.csv"] = _csv(
        ["face", "minimum"], [[k, float(v)] for k, v in enumerate(rep.diagnostics["face_minima"])])


def cmd_polycond(cfg, art):
    from .ballistic import poly_condition_sweep, write_sweep_csv
    c = cfg["polycond"]
    env = build_environment(cfg)
    reps, fit = poly_condition_sweep(env, c["direction"], c["Ls"], c["M"], c["n_runs"],
                                     art.seeds["walk"], c["max_steps"])
    art.result.update({"reports": [r.to_dict() for r in reps],
                       "decay_fit": None if fit is None else fit.to_dict()})
    buf = io.StringIO()
    write_sweep_csv(buf, reps)
    art.csv_files["polycond_sweep.csv"] = buf.getvalue()
    art.checks["exit_fractions_sum_to_one"] = all(
        sum(r.counts.values()) == r.n_runs for r in reps)


def cmd_torus_oracle(cfg, art):
    from .estimators import pattern_list, torus_solve
    c = cfg["torus_oracle"]
    env = build_environment(cfg, period=c["period"])
    o = torus_solve(env, c["window"])
    drift_atoms = env.atom_kernels @ directions(env.dimension).astype(float)
    vp = o.velocity_from_patterns(drift_atoms)
    art.result.update(o.to_dict())
    art.result["velocity_from_patterns"] = vp
    rows = [[" ".join(str(a) for a in p), float(o.p_b[i]), float(o.q_b[i])]
            for i, p in enumerate(pattern_list(env.model.n_atoms, len(o.window)))]
    art.csv_files["torus_window.csv"] = _csv(["pattern", "p_torus", "q_exact"], rows)
    art.checks["stationary_residual"] = o.residual <= 1e-10
    art.checks["martingale_identity"] = bool(np.max(np.abs(vp - o.velocity)) <= 1e-12)


def cmd_verify_all(cfg, art):
    from .acceptance import run_all
    results = run_all(scale=cfg["verify_all"]["scale"], seed=art.seeds["root"])
    for r in results:
        print(r.line())
        art.checks[f"criterion_{r.number}"] = r.passed
    art.result["criteria"] = [r.to_dict() for r in results]
    art.csv_files["verify_all.csv"] = _csv(
        ["criterion", "name", "passed", "summary"],
        [[r.number, r.name, int(r.passed), r.summary] for r in results])


HANDLERS: dict[str, Callable] = {
    "velocity": cmd_velocity, "invariant": cmd_invariant, "mudelta": cmd_mudelta,
    "green": cmd_green, "jkernel": cmd_jkernel, "expansion": cmd_expansion,
    "kalikow": cmd_kalikow, "polycond": cmd_polycond, "torus-oracle": cmd_torus_oracle,
    "verify-all": cmd_verify_all,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwre", description=__doc__)
    ap.add_argument("--version", action="version", version=f"rwre {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or TOML experiment config")
        p.add_argument("--seed", type=int, help="root seed (overrides config and RWRE_SEED)")
        p.add_argument("--workers", type=int, help="worker threads (or RWRE_WORKERS)")
        p.add_argument("--out", default="results", help="output directory")
    return ap


def _set_workers(n: Optional[int]) -> None:
    if n is None and os.environ.get("RWRE_WORKERS"):
        try:
            n = int(os.environ["RWRE_WORKERS"])
        except ValueError:
            raise ConfigError("RWRE_WORKERS must be an integer") from None
    if n is None:
        return
    if n < 1:
        raise ConfigError("workers must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .report import Artifact
    args = build_parser().parse_args(argv)
    try:
        _set_workers(args.workers)
        cfg = resolve(load_config(args.config), args.seed)
        art = Artifact(args.subcommand, cfg, config_hash(cfg), seeds(cfg))
        HANDLERS[args.subcommand](cfg, art)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = art.save(Path(args.out))
    for name, ok in sorted(art.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK if art.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
