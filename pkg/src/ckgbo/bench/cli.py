"""``bench`` command line.

Exit codes: 0 success, 1 run or check failures, 2 configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from ..errors import ConfigError, NoDataError
from .checks import fixture_names, gradcheck, run_quick_checks
from .config import parse_config
from .report import report
from .runner import run_matrix

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args):
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, base_seed=args.seed)
    failed = run_matrix(cfg, output_dir=args.output, jobs=args.jobs)
    out = args.output or cfg.output_dir
    print(f"{out}: {failed} failed run(s)")
    return EXIT_FAILURES if failed else EXIT_OK


def _cmd_report(args):
    try:
        table = report(args.dir)
    except NoDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.dir}: {len(table)} rows written to regret.tsv and report.md")
    return EXIT_OK


def _cmd_check(args):
    results = run_quick_checks(args.seed or 0)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(results.values()) else EXIT_FAILURES


def _cmd_gradcheck(args):
    names = fixture_names() if args.fixture == "all" else [args.fixture]
    unknown = [n for n in names if n not in fixture_names()]
    if unknown:
        print(f"unknown fixture {unknown[0]!r}; choose from {fixture_names()} or 'all'",
              file=sys.stderr)
        return EXIT_CONFIG
    dump = open(args.dump_gradient_samples, "w", encoding="utf-8") \
        if args.dump_gradient_samples else None
    ok = True
    try:
        for name in names:
            _, rows = gradcheck(name, R=args.R, h=args.h, seed=args.seed or 0, dump=dump)
            for r in rows:
                t, k = r["component"]
                status = "PASS" if r["passed"] else "FAIL"
                print(f"{status}  {name} [{t},{k}]  grad={r['grad']:+.6g}  "
                      f"fd={r['fd']:+.6g}  se={r['se']:.3g}")
                ok &= r["passed"]
    finally:
        if dump is not None:
            dump.close()
    return EXIT_OK if ok else EXIT_FAILURES


def build_parser():
    p = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment matrix from a TOML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override experiment.base_seed")
    r.add_argument("--jobs", type=int, help="worker processes (default from config)")
    r.add_argument("--output", help="override experiment.output_dir")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("report", help="summarize a finished output directory")
    s.add_argument("dir")
    s.set_defaults(func=_cmd_report)

    c = sub.add_parser("check", help="quick oracle and invariant checks")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=_cmd_check)

    g = sub.add_parser("gradcheck", help="gradient estimator vs finite differences")
    g.add_argument("fixture", help="fixture name such as d2-q2-m2-s0, or 'all'")
    g.add_argument("--seed", type=int)
    g.add_argument("--R", type=int, default=100_000, help="replications")
    g.add_argument("--h", type=float, default=1e-4, help="finite-difference step")
    g.add_argument("--dump-gradient-samples", metavar="PATH",
                   help="write one JSON line per replication")
    g.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
