"""Command-line experiment runner.

    hmmlab <command> --config <file> [--seed S]... [--out DIR] [--jobs K]

Each seed runs as an independent job and writes ``<command>_<seed>.csv``;
``summary.json`` collects per-seed results and named checks. Exit status is
0 when every check passes, 2 when a check fails and 1 on bad input.
"""
import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .convergence import (
    check_lemma_a1,
    chain_rule_gap,
    diff_series,
    empirical_bconv_exponent,
    laplace_stabilization_report,
    lemma34_segment,
    proof_constants,
    verify_ineq_system,
)
from .divergence import DivergenceModel, closed_form_map, track_jstar
from .errors import ConvergenceError, HmmLabError, InputError, ModelError
from .experiments import chain_rule_instance, lemma34_instance, lemma_a1_instance
from .io import _jsonable, write_csv, write_json
from .models import (
    ContinuousHmmModel,
    DiscreteHmmModel,
    estimate_growth_constant,
    load_model,
    sample_trajectory,
    validate_assumptions,
)
from .newton import SolverConfig, prefix_series, solve_map
from .viterbi import horizon_summaries, path_log_likelihood, viterbi

COMMANDS = ("simulate", "map", "viterbi", "converge", "diverge", "verify")
CHECKS = ("lemma_a1", "lemma34", "chain_rule", "laplace_freezing", "assumptions")

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}},
        "n": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grad_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "line_search_shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "stabilization": {"type": "number", "exclusiveMinimum": 0},
                "inequality_rel": {"type": "number", "exclusiveMinimum": 0},
                "chain_rule_factor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "checks": {"type": "array", "minItems": 1, "items": {"enum": list(CHECKS)}},
        "theta": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 1}},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "jstar_level": {"type": "integer", "minimum": 1},
        "jstar_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "calibration_runs": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
}

SUMMARY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "version", "seeds", "passed", "checks", "per_seed", "files", "config"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "version": {"type": "string"},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "passed": {"type": "boolean"},
        "config": {"type": "object"},
        "files": {"type": "array", "items": {"type": "string"}},
        "per_seed": {"type": "object"},
        "metadata": {"type": "object"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "pass", "margin", "parameters"],
                "properties": {
                    "name": {"type": "string"},
                    "pass": {"type": "boolean"},
                    "margin": {"type": ["number", "null"]},
                    "parameters": {"type": "object"},
                },
            },
        },
    },
}

DEFAULTS = {
    "simulate": {"n": 100},
    "map": {"n": 100},
    "viterbi": {"n": 100},
    "converge": {"N": 60, "m": 1, "beta": 2.0},
    "diverge": {"N": 20000, "jstar_level": 3, "jstar_fraction": 0.9, "calibration_runs": 20},
    "verify": {"checks": ["lemma_a1"], "theta": [1.0, 2.0, 5.0], "N": 2000},
}


def _check(name, passed, margin=None, **parameters):
    if margin is not None and not math.isfinite(float(margin)):
        margin = None
    return {"name": name, "pass": bool(passed), "margin": None if margin is None else float(margin),
            "parameters": parameters}


def _solver(cfg):
    return SolverConfig(**cfg.get("solver", {}))


def _tol(cfg, key, default):
    return float(cfg.get("tolerances", {}).get(key, default))


def _model(cfg, kinds=None):
    if "model" not in cfg:
        raise InputError("config needs a 'model' section")
    model = load_model(cfg["model"])
    if kinds is not None and not isinstance(model, kinds):
        raise InputError(f"model kind {cfg['model']['kind']!r} is not valid for this command")
    return model


# -- per-seed jobs ------------------------------------------------------------------


def _job_simulate(cfg, seed):
    model = _model(cfg)
    n = cfg["n"]
    if isinstance(model, DivergenceModel):
        u, v, y = model.sample_uvy(n, seed)
        rows = [(m, u[m], v[m], y[m]) for m in range(n)]
        return ["m", "u", "v", "y"], rows, {"n": n}, []
    tr = sample_trajectory(model, n, seed)
    rows = [(m, tr.states[m], tr.observations[m]) for m in range(n)]
    return ["m", "state", "observation"], rows, {"n": n}, []


def _job_map(cfg, seed):
    model = _model(cfg, ContinuousHmmModel)
    tr = sample_trajectory(model, cfg["n"], seed)
    sol = solve_map(model, tr.observations, _solver(cfg))
    rows = [(m, tr.observations[m], tr.states[m], sol.path[m]) for m in range(cfg["n"])]
    info = {"objective": sol.objective, "grad_inf_norm": sol.grad_inf_norm,
            "iterations": sol.iterations, "converged": sol.converged}
    return ["m", "observation", "state", "map"], rows, info, [
        _check("map_converged", sol.converged, _solver(cfg).grad_tol - sol.grad_inf_norm, seed=seed)]


def _job_viterbi(cfg, seed):
    model = _model(cfg, DiscreteHmmModel)
    tr = sample_trajectory(model, cfg["n"], seed)
    y = tr.observations
    res = viterbi(model, y)
    recomputed = path_log_likelihood(model, res.path, y)
    gap = abs(recomputed - res.log_score)
    rows = [(m, res.path[m], y[m], tr.states[m]) for m in range(y.shape[0])]
    info = {"log_score": res.log_score, "stabilized_prefix": res.stabilized_prefix,
            "accuracy": float(np.mean(res.path == tr.states)),
            "sidecar": (["n", "log_score", "stabilized_prefix"], horizon_summaries(model, y))}
    tol = 1e-9 * (1 + abs(res.log_score))
    return ["m", "state", "observation", "true_state"], rows, info, [
        _check("score_recomputation", gap <= tol, tol - gap, seed=seed)]


def _job_converge(cfg, seed):
    model = _model(cfg, ContinuousHmmModel)
    N, m = cfg["N"], cfg["m"]
    if m > N:
        raise InputError("m must not exceed N")
    tr = sample_trajectory(model, N, seed)
    ps = prefix_series(model, tr.observations, m, _solver(cfg))
    rows = []
    for n in ps.horizons():
        obj, gn, its = ps.stats[n]
        for i in range(m):
            rows.append((n, i, ps.rows[n][i], obj, gn, its))
    info = {"failed_horizons": list(ps.failed)}
    checks = [_check("all_horizons_converged", not ps.failed, -len(ps.failed), seed=seed)]
    if len(ps.rows) >= 10:
        rep = diff_series(ps, stab_tol=_tol(cfg, "stabilization", 1e-8))
        bc = empirical_bconv_exponent(rep, cfg["beta"])
        info.update(exp_rate=rep.exp_rate, r2_exp=rep.r2_exp, poly_exponent=rep.poly_exponent,
                    r2_poly=rep.r2_poly, window=list(rep.window), exact_stabilization=rep.exact_stabilization,
                    stabilized_at=rep.stabilized_at, bconv_passed=bc.passed, bconv_inconclusive=bc.inconclusive,
                    bconv_constant=bc.constant)
    return ["n", "index", "value", "objective", "grad_inf_norm", "iterations"], rows, info, checks


def _job_diverge(cfg, seed):
    model = _model(cfg, DivergenceModel)
    N = cfg["N"]
    _, v, y = model.sample_uvy(N, seed)
    js = track_jstar(y)
    vhat1 = np.where(js > 1, js, 2)
    rows = [(n + 1, js[n], vhat1[n], v[0]) for n in range(N)]
    marks = [k for k in (100, 1000, N) if k <= N]
    info = {"jstar_final": int(js[-1]), "jstar_at": {str(k): int(js[k - 1]) for k in sorted(set(marks))},
            "nondecreasing": bool(np.all(np.diff(js) >= 0))}
    _, vh, _ = closed_form_map(model, y)
    return ["n", "jstar", "vhat_1", "v_true_1"], rows, info, [
        _check("jstar_nondecreasing", info["nondecreasing"], None, seed=seed),
        _check("closed_form_level_matches", int(vh[0]) == int(vhat1[-1]), None, seed=seed)]


def _job_verify(cfg, seed):
    rows, checks, info = [], [], {}
    rel = _tol(cfg, "inequality_rel", 1e-4)
    for name in cfg["checks"]:
        if name == "lemma_a1":
            for theta in cfg["theta"]:
                seq = lemma_a1_instance(seed, theta)
                sound = verify_ineq_system(seq.b, seq.c)[0]
                res = check_lemma_a1(seq, theta)
                ok = sound and res.passed is True
                rows.append((name, theta, seq.n, res.b1, res.bound, ok))
                checks.append(_check(name, ok, res.bound - res.b1, seed=seed, theta=theta, n=seq.n, kind=seq.kind))
        elif name == "lemma34":
            model, y, u0, u1 = lemma34_instance(seed)
            seg = lemma34_segment(model, y, u0, u1, config=_solver(cfg), rel_tol=rel)
            worst = min(r.worst for r in seg.reports)
            rows.append((name, model.name, y.shape[0], worst, seg.integrated_bound - seg.integrated_influence, seg.passed))
            checks.append(_check(name, seg.passed, worst, seed=seed, model=model.name, n=int(y.shape[0])))
        elif name == "chain_rule":
            model, y, m, n = chain_rule_instance(seed)
            sc = _solver(cfg)
            gap = chain_rule_gap(model, y, m, n, sc)
            tol = _tol(cfg, "chain_rule_factor", 10.0) * sc.grad_tol
            rows.append((name, model.name, n, gap, tol, gap <= tol))
            checks.append(_check(name, gap <= tol, tol - gap, seed=seed, model=model.name, m=m, n=n))
        elif name == "laplace_freezing":
            from .models import laplace_gaussian

            tr = sample_trajectory(laplace_gaussian(), cfg["N"], seed)
            rep = laplace_stabilization_report(tr.observations, tol=_tol(cfg, "stabilization", 1e-8))
            worst = max(rep.max_value_error, rep.max_prefix_error)
            rows.append((name, "laplace_gaussian", cfg["N"], worst, rep.tol, rep.passed))
            checks.append(_check(name, rep.passed, rep.tol - worst, seed=seed, events=int(rep.events.size)))
        elif name == "assumptions":
            rep = validate_assumptions(_model(cfg, ContinuousHmmModel))
            for key, chk in rep.checks.items():
                rows.append((name, key, 0, chk.margin, 0.0, chk.passed))
            checks.append(_check(name, rep.passed, min(c.margin for c in rep.checks.values()),
                                 seed=seed, failed=list(rep.failed())))
    info["checks_run"] = len(checks)
    return ["check", "case", "n", "value", "bound", "passed"], rows, info, checks


JOBS = {"simulate": _job_simulate, "map": _job_map, "viterbi": _job_viterbi,
        "converge": _job_converge, "diverge": _job_diverge, "verify": _job_verify}


def _run_job(args):
    command, cfg, seed = args
    try:
        return seed, JOBS[command](cfg, seed), None
    except (InputError, ModelError) as exc:
        return seed, None, ("input", str(exc))
    except (ConvergenceError, HmmLabError) as exc:
        return seed, None, ("run", str(exc))


# -- orchestration ----------------------------------------------------------------


def _aggregate(command, cfg, per_seed):
    checks, meta = [], {}
    if command == "diverge":
        seeds = sorted(per_seed)
        finals = np.array([per_seed[s]["jstar_final"] for s in seeds])
        level, frac = cfg["jstar_level"], cfg["jstar_fraction"]
        hit = float(np.mean(finals >= level))
        medians = {}
        for key in per_seed[seeds[0]]["jstar_at"]:
            medians[key] = float(np.median([per_seed[s]["jstar_at"][key] for s in seeds]))
        order = sorted(medians, key=int)
        mono = all(medians[a] <= medians[b] for a, b in zip(order, order[1:]))
        meta.update(median_jstar_final=float(np.median(finals)), fraction_at_level=hit,
                    median_jstar_at=medians, threshold={"level": level, "fraction": frac})
        runs = cfg["calibration_runs"]
        if runs:
            from .rng import MONTE_CARLO, make_rng

            model = _model(cfg, DivergenceModel)
            rng = make_rng(min(seeds), MONTE_CARLO)
            cal_seeds = [int(s) for s in rng.integers(2 ** 32, 2 ** 40, size=runs)]
            cal = [int(track_jstar(model.sample_uvy(cfg["N"], s)[2])[-1]) for s in cal_seeds]
            p = float(np.mean(np.array(cal) >= level))
            # one-sided 95% Wilson lower bound
            z = 1.6448536269514722
            lower = (p + z * z / (2 * runs) - z * math.sqrt(p * (1 - p) / runs + z * z / (4 * runs * runs))) / (1 + z * z / runs)
            meta["calibration"] = {"runs": runs, "probability_estimate": p, "wilson_lower_95": lower}
        checks.append(_check("jstar_fraction", hit >= frac, hit - frac, level=level, fraction=frac))
        checks.append(_check("median_jstar_nondecreasing", mono, None, horizons=[int(k) for k in order]))
    if command == "converge" and isinstance(load_model(cfg["model"]), ContinuousHmmModel):
        model = load_model(cfg["model"])
        if model.sampler is not None:
            c = estimate_growth_constant(model, max(cfg["N"], 100), range(10))
            meta["proof_constants"] = proof_constants(c) if c > 0 else None
    return checks, meta


def _resolve_config(ns):
    try:
        raw = json.loads(Path(ns.config).read_text(encoding="utf-8")) if ns.config else {}
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"config violates schema at {where}: {exc.message}") from None
    if raw.get("command", ns.command) != ns.command:
        raise InputError(f"config is for command {raw['command']!r}, not {ns.command!r}")
    cfg = dict(DEFAULTS[ns.command])
    cfg.update(raw)
    cfg["command"] = ns.command
    if ns.seed:
        cfg["seeds"] = list(ns.seed)
    if ns.out is not None:
        cfg["out"] = ns.out
    cfg.setdefault("seeds", [0])
    cfg.setdefault("out", ".")
    cfg["seeds"] = sorted(set(int(s) for s in cfg["seeds"]))
    if any(s < 0 for s in cfg["seeds"]):
        raise InputError("seeds must be nonnegative")
    if ns.command != "verify" and "model" not in cfg:
        raise InputError("config needs a 'model' section")
    if "model" in cfg:
        load_model(cfg["model"])  # fail fast on unknown kinds or parameters
    if ns.command == "verify" and "assumptions" in cfg["checks"] and "model" not in cfg:
        raise InputError("the 'assumptions' check needs a 'model' section")
    return cfg


def _jobs(ns):
    if ns.jobs is not None:
        return ns.jobs
    env = os.environ.get("HMMLAB_JOBS", "").strip()
    if not env:
        return 1
    try:
        k = int(env)
    except ValueError:
        raise InputError(f"HMMLAB_JOBS must be a positive integer, got {env!r}") from None
    if k < 1:
        raise InputError("HMMLAB_JOBS must be a positive integer")
    return k


def run(command, cfg, jobs=1):
    """Run ``command`` for every seed in ``cfg``; returns ``(exit_code, summary)``."""
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".hmmlab_write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {out} is not writable: {exc}") from None
    tasks = [(command, cfg, s) for s in cfg["seeds"]]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    for seed, _, err in results:
        if err is not None and err[0] == "input":
            raise InputError(f"seed {seed}: {err[1]}")
    files, per_seed, checks = [], {}, []
    for seed, res, err in results:
        if err is not None:
            per_seed[str(seed)] = {"error": err[1]}
            checks.append(_check("run_completed", False, None, seed=seed, error=err[1]))
            continue
        header, rows, info, seed_checks = res
        name = f"{command}_{seed}.csv"
        write_csv(out / name, header, rows)
        files.append(name)
        sidecar = info.pop("sidecar", None)
        if sidecar is not None:
            side = f"{command}_{seed}.sidecar.csv"
            write_csv(out / side, *sidecar)
            files.append(side)
        per_seed[str(seed)] = info
        checks.extend(seed_checks)
    meta = {}
    if not any(err for _, _, err in results):
        agg, meta = _aggregate(command, cfg, {int(k): v for k, v in per_seed.items()})
        checks.extend(agg)
    passed = all(c["pass"] for c in checks)
    summary = {
        "command": command, "version": __version__, "seeds": cfg["seeds"], "passed": passed,
        "config": {k: v for k, v in cfg.items() if k != "out"}, "files": files,
        "per_seed": per_seed, "checks": checks, "metadata": meta,
    }
    jsonschema.validate(_jsonable(summary), SUMMARY_SCHEMA)
    write_json(out / "summary.json", summary)
    return (0 if passed else 2), summary


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors: exit 1, keeping 2 for failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="hmmlab", description="MAP path experiments for hidden Markov models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, action="append", help="seed to run; repeat for several (overrides config)")
    p.add_argument("--out", help="output directory (default: config 'out' or the current directory)")
    p.add_argument("--jobs", type=int, help="parallel seed jobs (default: $HMMLAB_JOBS or 1)")
    return p


def main(argv=None):
    ns = build_parser().parse_args(argv)
    try:
        if ns.jobs is not None and ns.jobs < 1:
            raise InputError("--jobs must be at least 1")
        cfg = _resolve_config(ns)
        code, summary = run(ns.command, cfg, _jobs(ns))
    except InputError as exc:
        print(f"hmmlab: error: {exc}", file=sys.stderr)
        return 1
    status = "passed" if code == 0 else "FAILED"
    failed = [c["name"] for c in summary["checks"] if not c["pass"]]
    print(f"hmmlab {ns.command}: {len(summary['seeds'])} seed(s), checks {status}"
          + (f" ({', '.join(sorted(set(failed)))})" if failed else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
