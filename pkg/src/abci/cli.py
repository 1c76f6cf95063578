"""Command line: ``abci analyze | coverage | simulate``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .aggregate import ObservationLine, read_csv, read_kdd_tsv, write_csv
from .errors import ABCIError
from .estimator import ABTestInterval
from .harness import (DEFAULT_LEVELS, DEFAULT_TESTS, SyntheticPopulationSpec, assign_groups,
                      run_coverage)
from .model import DesignParams, Group, MetricKind
from .rng import derive_seed, user_key

METRICS = [k.value for k in MetricKind]
METHODS = ["clt", "bootstrap", "bootstrap-clt", "naive-display"]


def _levels(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--metric", choices=METRICS, default="ratio-diff",
                        help="estimator (default: %(default)s)")
    common.add_argument("--method", choices=METHODS, default="bootstrap-clt",
                        help="interval method (default: %(default)s)")
    common.add_argument("--bootstraps", type=_positive_int, default=10, metavar="M",
                        help="bootstrap replicates (default: %(default)s)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=_positive_int, default=1,
                        help="parallel workers; output does not depend on it")
    common.add_argument("--output", choices=["json", "csv"], default=None)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--format", choices=["csv", "kdd-tsv"], default="csv")
    data.add_argument("--group", choices=["A", "B", "split"], default="split",
                      help="population of kdd-tsv lines; 'split' hashes user ids with --seed")

    parser = argparse.ArgumentParser(prog="abci", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", parents=[common, data],
                             help="confidence interval for one dataset")
    analyze.add_argument("input_path", nargs="?", metavar="INPUT")
    analyze.add_argument("--input", dest="input_opt", metavar="PATH")
    analyze.add_argument("--level", type=float, default=0.95)
    analyze.add_argument("--alpha-a", type=float, default=0.5)
    analyze.add_argument("--alpha-b", type=float, default=0.5)

    coverage = sub.add_parser("coverage", parents=[common, data],
                              help="blank A/B tests on a dataset or the synthetic population")
    coverage.add_argument("--input", dest="input_opt", metavar="PATH",
                          help="dataset to re-split (default: synthetic population)")
    coverage.add_argument("--level", type=_levels,
                          default=list(DEFAULT_LEVELS), help="comma-separated levels")
    coverage.add_argument("--tests", type=_positive_int, default=DEFAULT_TESTS)
    coverage.add_argument("--users", type=_positive_int, default=50_000,
                          help="synthetic population size")
    coverage.add_argument("--alpha-a", type=float, default=0.5)

    simulate = sub.add_parser("simulate", help="write a synthetic click log as CSV")
    simulate.add_argument("--users", type=_positive_int, default=50_000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--alpha-a", type=float, default=0.5)
    simulate.add_argument("--alpha-b", type=float, default=0.5)
    simulate.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    return parser


def _read_lines(path: str, fmt: str, group: str, seed: int, alpha_a: float, alpha_b: float):
    if fmt == "csv":
        return list(read_csv(path))
    if group == "split":
        split_seed = derive_seed(seed, 0)

        def assign(uid):
            return Group(int(assign_groups(np.uint64(user_key(uid)), split_seed, alpha_a, alpha_b)))
    else:
        fixed = Group.parse(group)

        def assign(uid):
            return fixed
    return list(read_kdd_tsv(path, assign))


def _emit(record: dict, columns: list[str], output: str, out) -> None:
    if output == "json":
        out.write(json.dumps(record, sort_keys=True) + "\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    writer.writerow([record[c] if not isinstance(record[c], list) else ";".join(record[c])
                     for c in columns])


_ANALYZE_COLUMNS = ["kind", "method", "level", "estimate", "lo", "hi", "n", "m_replicates",
                    "seed", "flags", "input", "format", "group", "alpha_a", "alpha_b",
                    "bootstraps"]


def _analyze(args, out) -> None:
    path = args.input_opt or args.input_path
    DesignParams(args.alpha_a, args.alpha_b)
    lines = _read_lines(path, args.format, args.group, args.seed, args.alpha_a, args.alpha_b)
    est = ABTestInterval(metric=args.metric, method=args.method, level=args.level,
                         alpha_a=args.alpha_a, alpha_b=args.alpha_b,
                         n_bootstraps=args.bootstraps, seed=args.seed, n_jobs=args.workers)
    report = est.fit(lines).report_.to_dict()
    report["seed"] = args.seed
    if args.method not in ("bootstrap", "bootstrap-clt"):
        report["m_replicates"] = None
    config = {"command": "analyze", "input": path, "format": args.format, "group": args.group,
              "metric": args.metric, "method": args.method, "level": args.level,
              "alpha_a": args.alpha_a, "alpha_b": args.alpha_b,
              "bootstraps": args.bootstraps, "seed": args.seed}
    if (args.output or "json") == "json":
        report["config"] = config
        _emit(report, [], "json", out)
    else:
        _emit({**config, **report}, _ANALYZE_COLUMNS, "csv", out)


def _coverage(args, out) -> None:
    if args.input_opt:
        source = _read_lines(args.input_opt, args.format, "A", args.seed, 1.0, 0.0) \
            if args.format == "kdd-tsv" else list(read_csv(args.input_opt))
    else:
        source = SyntheticPopulationSpec(n_users=args.users)
    M = args.bootstraps if args.method in ("bootstrap", "bootstrap-clt") else None
    result = run_coverage(source, args.method, args.metric, args.level, args.tests, args.seed,
                          M, args.alpha_a, args.workers)
    if (args.output or "csv") == "csv":
        out.write(result.to_csv())
        return
    record = result.to_dict()
    record["config"] = {"command": "coverage", "input": args.input_opt, "format": args.format,
                        "users": None if args.input_opt else args.users,
                        "metric": args.metric, "method": args.method, "levels": args.level,
                        "tests": args.tests, "alpha_a": args.alpha_a,
                        "bootstraps": M, "seed": args.seed}
    out.write(json.dumps(record, sort_keys=True) + "\n")


def simulate_lines(users: int, seed: int, alpha_a: float, alpha_b: float):
    """Synthetic log with one line per display (y = 1, x = clicks on it)."""
    DesignParams(alpha_a, alpha_b)
    pop = SyntheticPopulationSpec(n_users=users).generate(seed)
    groups = assign_groups(pop.keys, derive_seed(seed, 0), alpha_a, alpha_b)
    rng = np.random.default_rng(derive_seed(seed, 1))
    for uid, g, clicks, displays in zip(pop.user_ids, groups, pop.x, pop.y):
        # spread the user's clicks over distinct displays
        clicked = set(rng.choice(int(displays), size=int(clicks), replace=False).tolist())
        for d in range(int(displays)):
            yield ObservationLine(int(uid), Group(int(g)), 1.0 if d in clicked else 0.0, 1.0)


def _simulate(args, out) -> None:
    lines = simulate_lines(args.users, args.seed, args.alpha_a, args.alpha_b)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as handle:
            write_csv(lines, handle)
    else:
        write_csv(lines, out)


def run_command(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "analyze" and not (args.input_opt or args.input_path):
        err.write("abci analyze: error: an input file is required (INPUT or --input)\n")
        return 2
    handlers = {"analyze": _analyze, "coverage": _coverage, "simulate": _simulate}
    buf = io.StringIO()
    try:
        handlers[args.command](args, buf)
    except ABCIError as exc:
        err.write(f"abci {args.command}: {type(exc).__name__}: {exc}\n")
        return 1
    except OSError as exc:
        err.write(f"abci {args.command}: {type(exc).__name__}: {exc}\n")
        return 1
    out.write(buf.getvalue())
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
