"""Command-line entry point: gen, estimate, run, compare.

Exit codes: 0 success, 2 configuration error, 3 local-solver cap failure
(under the ``fail`` policy), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..algorithms import LocalSolverCapError
from ..problems import estimate_dissimilarity, load_problem, reference_solve, save_problem
from .compare import compare, write_plot_csv
from .config import ConfigError, ExperimentConfig, load_config
from .runner import build_problem, run_experiment
from .trace import read_trace, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_IO = 0, 2, 3, 4


def _problem_spec(path: str, seed: int | None) -> dict:
    """A config file may be a bare generator spec or a full experiment config."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    spec = dict(doc.get("problem", doc))
    if "family" not in spec and "path" not in spec:
        raise ConfigError("no problem spec found in config")
    if "path" in spec and not Path(spec["path"]).is_absolute():
        spec["path"] = str(Path(path).parent / spec["path"])
    if seed is not None and "family" in spec:
        spec["seed"] = seed
    return spec


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    p = build_problem(_problem_spec(args.config, args.seed))
    reference_solve(p)
    out = args.out or "problem.problem.json"
    save_problem(p, out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.problem:
        p = load_problem(args.problem)
    else:
        p = build_problem(_problem_spec(args.config, args.seed))
    reference_solve(p)
    s_values = [int(v) for v in args.s.split(",")] if args.s else None
    rep = estimate_dissimilarity(p, s_values, mode=args.mode, probes=args.probes, seed=args.seed or 0)
    _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    records = run_experiment(cfg)
    out = args.out or ("trace.jsonl" if args.format == "jsonl" else "trace.csv")
    write_trace(records, out, args.format)
    return EXIT_OK


def cmd_compare(args) -> int:
    traces = []
    for item in args.traces:
        label, _, path = item.rpartition("=")
        label = label or Path(path).name.split(".")[0]
        traces.append((label, read_trace(path)))
    rep = compare(traces, args.eps, metric=args.metric)
    _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    if args.plot:
        write_plot_csv(traces, args.plot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdane", description="Distributed convex optimization simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a .problem.json file")
    g.add_argument("--config", required=True, help="generator spec or experiment config (JSON)")
    g.add_argument("--seed", type=int, help="override the generator seed")
    g.add_argument("--out", help="output path")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", help="print a dissimilarity report as JSON")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="generator spec or experiment config (JSON)")
    src.add_argument("--problem", help="a .problem.json file")
    e.add_argument("--seed", type=int)
    e.add_argument("--s", help="comma-separated subset sizes")
    e.add_argument("--mode", default="auto", choices=["auto", "exact_quadratic", "power_iteration", "probe_estimate"])
    e.add_argument("--probes", type=int, default=64)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("run", help="run an experiment config and write its trace")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override the experiment seed")
    r.add_argument("--out")
    r.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare traces at a target accuracy")
    c.add_argument("traces", nargs="+", help="trace files, optionally as label=path")
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--metric", default="f_gap_last", choices=["f_gap_last", "f_gap_avg"])
    c.add_argument("--out")
    c.add_argument("--plot", help="write plot-ready CSV here")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LocalSolverCapError as exc:
        print(f"local solver cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
