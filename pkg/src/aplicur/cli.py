"""Benchmark command line: generate problems, run solvers, dump spectra and oracles."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import statistics
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from .cur import grow, init_state
from .driver import SolverConfig, _jsonable, plain_lsqr, solve
from .errors import AplicurError, ProblemTooLargeError
from .matrix import AugmentedOperator
from .preconditioner import (
    IdentityPreconditioner,
    build_svd_precond,
    build_svdfree_precond,
    optimal_precond,
    preconditioned_singular_values,
)
from .problemgen import DENSE_ORACLE_LIMIT, PROFILES, ProblemInstance, make_problem

logger = logging.getLogger("aplicur")

METHODS = ("aplicur", "aplicur-sf", "plain-lsqr")
MONITOR_SIZE = 10**6

_SOLVER_PROPS = {
    "block": {"type": "integer", "minimum": 1},
    "eps_cur": {"type": "number", "minimum": 0},
    "eps_lsqr": {"type": "number", "exclusiveMinimum": 0},
    "nu_prec": {"type": "number", "exclusiveMinimum": 1},
    "nu_lsqr": {"type": "number", "exclusiveMinimum": 1},
    "xi": {"type": "integer", "minimum": 1},
    "probes": {"type": "integer", "minimum": 1},
    "max_iter": {"type": "integer", "minimum": 1},
    "core_method": {"enum": ["qr", "lu"]},
}
_SOLVER = {"type": "object", "additionalProperties": False, "properties": _SOLVER_PROPS}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ExperimentConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["m", "n"],
                    "properties": {
                        "m": {"type": "integer", "minimum": 5},
                        "n": {"type": "integer", "minimum": 5},
                        "profile": {"enum": list(PROFILES)},
                        "kind": {"enum": ["dense", "sparse"]},
                        "coherence": {"enum": ["incoherent", "coherent"]},
                        "f": {"type": "number", "minimum": 0},
                        "density": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "rhs": {"enum": ["consistent-x", "consistent-b"]},
                        "noise": {"type": "number", "minimum": 0},
                        "noise_mode": {"enum": ["relative", "absolute"]},
                        "mu": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["path"],
                    "properties": {
                        "path": {"type": "string"},
                        "mu": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
        "methods": {"type": "array", "minItems": 1, "items": {"enum": list(METHODS)}},
        "solver": _SOLVER,
        "overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {m: _SOLVER for m in METHODS},
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "relres_stride": {"type": "integer", "minimum": 1},
                "spectrum": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {"methods": ["aplicur"], "solver": {}, "overrides": {}, "trials": 1, "seed": 0,
            "out": "results", "metrics": {}}


def load_config(path):
    """Read and schema-validate an experiment config, filling defaults."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AplicurError(f"cannot read config {path}: {exc}") from exc
    validate_config(raw)
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(raw)
    return cfg


def validate_config(raw):
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise AplicurError(f"config error at {where}: {exc.message}") from exc


def build_problem(spec, oracle=True):
    spec = dict(spec)
    if "path" in spec:
        prob = ProblemInstance.load(spec["path"])
        if "mu" in spec:
            prob.mu = float(spec["mu"])
        if oracle and max(prob.shape) <= DENSE_ORACLE_LIMIT:
            prob.attach_oracle()
        return prob
    m, n = spec.pop("m"), spec.pop("n")
    if "coherence" in spec:
        spec["coherence_level"] = spec.pop("coherence")
    return make_problem(m, n, oracle=oracle and max(m, n) <= DENSE_ORACLE_LIMIT, **spec)


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def solver_config(cfg, method, seed):
    opts = dict(cfg["solver"])
    opts.update(cfg["overrides"].get(method, {}))
    names = {f.name for f in fields(SolverConfig)}
    opts = {k: v for k, v in opts.items() if k in names}
    return SolverConfig(variant="svd-free" if method == "aplicur-sf" else "svd", seed=seed,
                        **opts)


def _stride(cfg, shape):
    s = cfg["metrics"].get("relres_stride")
    if s:
        return s
    return 1 if shape[0] * shape[1] <= MONITOR_SIZE else 10


def run_trial(cfg, method, trial, outdir):
    """Run one (method, trial) and write its trace CSV and RunRecord JSON."""
    prob = build_problem(cfg["problem"])
    seed = cfg["seed"] + trial
    stride = _stride(cfg, prob.shape)
    t0 = time.perf_counter()
    if method == "plain-lsqr":
        sc = solver_config(cfg, method, seed)
        res = plain_lsqr(prob, eps=sc.eps_lsqr, max_iter=sc.max_iter, monitor_stride=stride)
        x, trace, matvecs, status, phases, times = (res.x, res.trace, res.matvecs, res.status,
                                                     [], {})
        echo = {"eps_lsqr": sc.eps_lsqr, "max_iter": sc.max_iter or 4 * prob.shape[1]}
    else:
        sc = solver_config(cfg, method, seed)
        sc.monitor_stride = stride
        res = solve(prob, sc)
        x, trace, matvecs, status = res.x, res.trace, res.matvecs, res.status
        d = res.to_dict()
        phases, times, echo = d["phases"], d["times"], d["config"]
    wall = time.perf_counter() - t0
    relres = prob.relres(x)
    if trace.rows:
        trace.rows[-1].relres = relres
    stem = f"{method}_trial{trial}"
    atomic_write(Path(outdir) / f"{stem}.csv", trace.to_csv())
    record = {
        "method": method, "trial": trial, "seed": seed, "status": status,
        "relres": relres, "opt_relres": prob.meta.get("opt_relres_reg"),
        "matvecs": matvecs, "iterations": sum(1 for r in trace.rows if r.iter > 0),
        "phases": phases, "trace": f"{stem}.csv", "wall_s": wall, "times": times,
        "config": echo,
    }
    atomic_write(Path(outdir) / f"{stem}.json", json.dumps(_jsonable(record), indent=2,
                                                           sort_keys=True))
    return record


def summarize(records):
    """Per-method medians; every field is recomputable from the CSV traces."""
    out = {}
    for method in sorted({r["method"] for r in records}):
        rs = [r for r in records if r["method"] == method]
        out[method] = {
            "trials": len(rs),
            "median_relres": statistics.median(r["relres"] for r in rs),
            "median_matvecs": statistics.median(r["matvecs"] for r in rs),
            "median_iterations": statistics.median(r["iterations"] for r in rs),
            "median_wall_s": statistics.median(r["wall_s"] for r in rs),
            "opt_relres": rs[0]["opt_relres"],
        }
    return out


def summary_from_traces(outdir):
    """Recompute the trace-derived summary fields from the CSV files alone."""
    per = {}
    for path in sorted(Path(outdir).glob("*_trial*.csv")):
        method = path.stem.rsplit("_trial", 1)[0]
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        last = rows[-1]
        per.setdefault(method, []).append(
            (float(last["relres"]), int(last["matvecs"]),
             sum(1 for r in rows if int(r["iter"]) > 0)))
    return {m: {"median_relres": statistics.median(v[0] for v in vals),
                "median_matvecs": statistics.median(v[1] for v in vals),
                "median_iterations": statistics.median(v[2] for v in vals)}
            for m, vals in per.items()}


def resolve_threads(arg):
    env = os.environ.get("APLICUR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise AplicurError(f"APLICUR_THREADS must be an integer, got {env!r}") from exc
    return max(1, arg or 1)


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.method:
        cfg["methods"] = [args.method]
    outdir = Path(args.out or cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(m, t) for m in cfg["methods"] for t in range(cfg["trials"])]
    threads = resolve_threads(args.threads)
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(run_trial, cfg, m, t, outdir) for m, t in jobs]
            records = [f.result() for f in futs]
    else:
        records = [run_trial(cfg, m, t, outdir) for m, t in jobs]
    summary = {"methods": summarize(records), "records": [f"{r['method']}_trial{r['trial']}.json"
                                                         for r in records]}
    atomic_write(outdir / "summary.json", json.dumps(_jsonable(summary), indent=2,
                                                     sort_keys=True))
    if cfg["metrics"].get("spectrum"):
        prob = build_problem(cfg["problem"], oracle=False)
        for m in cfg["methods"]:
            if m != "plain-lsqr":
                sig = spectrum_values(prob, m, "final", cfg, cfg["seed"])
                atomic_write(outdir / f"{m}_spectrum.csv", spectrum_csv(sig))
    for m, s in summary["methods"].items():
        print(f"{m}: median relres {s['median_relres']:.6e} (optimal {s['opt_relres']}), "
              f"median matvecs {s['median_matvecs']}")
    return 0


def _require_desk(prob):
    if max(prob.shape) > DENSE_ORACLE_LIMIT:
        raise ProblemTooLargeError(
            f"problem {prob.shape[0]}x{prob.shape[1]} exceeds the dense limit "
            f"{DENSE_ORACLE_LIMIT}; use a smaller instance"
        )


def _require_desk_spec(spec):
    # refuse before generating anything expensive
    if "m" in spec and max(spec["m"], spec["n"]) > DENSE_ORACLE_LIMIT:
        raise ProblemTooLargeError(
            f"problem {spec['m']}x{spec['n']} exceeds the dense limit "
            f"{DENSE_ORACLE_LIMIT}; use a smaller instance"
        )


def spectrum_values(prob, method, rank, cfg, seed):
    """Singular values of ``A_mu P^-1`` for a method's preconditioner."""
    _require_desk(prob)
    mu = prob.mu
    n = prob.shape[1]
    if method == "none" or rank == 0:
        P = IdentityPreconditioner()
    elif method == "optimal":
        k = n if rank == "final" else int(rank)
        P = optimal_precond(prob.A, k, mu)
    elif rank == "final":
        res = solve(prob, solver_config(cfg, method, seed))
        P = res.preconditioner
    else:
        k = int(rank)
        sc = solver_config(cfg, method, seed).resolve(n, mu)
        target = AugmentedOperator(prob.A, mu) if method == "aplicur-sf" and mu > 0 else prob.A
        state = init_state(target, k, seed=seed, xi=sc.xi, probes=sc.probes,
                           core_method=sc.core_method)
        grow(state)
        if method == "aplicur-sf":
            P = build_svdfree_precond(state.factors(), state.rho)
        else:
            P = build_svd_precond(state.factors(), mu)
    return preconditioned_singular_values(prob.A, P, mu)


def spectrum_csv(sig):
    lines = ["index,sigma"] + [f"{i + 1},{float(s)!r}" for i, s in enumerate(sig)]
    return "\n".join(lines) + "\n"


def cmd_spectrum(args):
    cfg = load_config(args.config)
    _require_desk_spec(cfg["problem"])
    seed = cfg["seed"] if args.seed is None else args.seed
    prob = build_problem(cfg["problem"], oracle=False)
    if args.rank != "final" and not args.rank.isdigit():
        raise AplicurError(f"--rank must be a nonnegative integer or 'final', got {args.rank!r}")
    rank = args.rank if args.rank == "final" else int(args.rank)
    sig = spectrum_values(prob, args.method or "aplicur", rank, cfg, seed)
    text = spectrum_csv(sig)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def oracle_values(prob):
    _require_desk(prob)
    prob.attach_oracle()
    out = {"opt_relres": prob.meta["opt_relres"], "opt_relres_reg": prob.meta["opt_relres_reg"],
           "mu": prob.mu}
    if "noise" in prob.meta:
        out["noise_relres"] = prob.meta["noise"] / float(np.linalg.norm(prob.b))
    return out


def cmd_oracle(args):
    cfg = load_config(args.config)
    _require_desk_spec(cfg["problem"])
    prob = build_problem(cfg["problem"], oracle=False)
    text = json.dumps(_jsonable(oracle_values(prob)), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen(args):
    cfg = load_config(args.config)
    spec = dict(cfg["problem"])
    if args.seed is not None and "path" not in spec:
        spec["seed"] = args.seed
    prob = build_problem(spec, oracle=True)
    stem = Path(args.out or cfg["out"]) / "problem"
    prob.save(stem)
    print(f"wrote {stem}.mtx, {stem}.b.mtx, {stem}.json")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="aplicur", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment JSON config")
        sp.add_argument("--out", help="output directory or file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        return sp

    r = common(sub.add_parser("run", help="run solvers and record traces"))
    r.add_argument("--threads", type=int, default=1,
                   help="worker processes (APLICUR_THREADS overrides)")
    r.add_argument("--method", choices=METHODS, help="run only this method")
    r.set_defaults(func=cmd_run)

    s = common(sub.add_parser("spectrum", help="singular values of the preconditioned matrix"))
    s.add_argument("--method", choices=("aplicur", "aplicur-sf", "optimal", "none"),
                   default="aplicur")
    s.add_argument("--rank", default="final", help="integer target rank or 'final'")
    s.set_defaults(func=cmd_spectrum)

    o = common(sub.add_parser("oracle", help="dense optimal residuals"))
    o.set_defaults(func=cmd_oracle)

    g = common(sub.add_parser("gen", help="write a generated problem to Matrix Market + JSON"))
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AplicurError, ValueError, OSError) as exc:
        print(f"aplicur: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
