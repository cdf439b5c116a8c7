"""Command line: ``todaflow run|certify|sweep``.

The worker count for ``sweep`` comes from ``TODAFLOW_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness
from .errors import ConfigError

WORKERS_ENV = "TODAFLOW_WORKERS"


def _config_failure(exc: Exception, out: Path | None) -> int:
    payload = harness.error_report(exc)
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        harness.write_json(out / "report.json", payload)
    return harness.EXIT_CONFIG


def run_one(config: str, out: str | None = None, overrides=()) -> int:
    out_path = Path(out) if out else None
    try:
        cfg = harness.load_config(config, overrides)
    except (ConfigError, OSError) as exc:
        return _config_failure(exc, out_path)
    return harness.run(cfg, out_path)


def cmd_run(args) -> int:
    return run_one(args.config, args.out, args.override)


def cmd_certify(args) -> int:
    try:
        cfg = harness.load_config(args.config, args.override)
        report = harness.certify_snapshot(args.snapshot, cfg)
    except (ConfigError, OSError) as exc:
        return _config_failure(exc, None)
    print(json.dumps(report, indent=2))
    return harness.EXIT_OK if report["pass"] else harness.EXIT_INCOMPLETE


def cmd_sweep(args) -> int:
    paths = sorted(glob.glob(args.pattern))
    if not paths:
        print(f"no configs match {args.pattern!r}", file=sys.stderr)
        return harness.EXIT_CONFIG
    outs = [str(Path(args.out) / Path(p).stem) if args.out else None for p in paths]
    workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
    if workers == 1:
        codes = [run_one(p, o) for p, o in zip(paths, outs)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(run_one, paths, outs))
    for p, c in zip(paths, codes):
        print(f"{c}  {p}")
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="todaflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evolve one configuration, refine and certify its limit")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config 'output')")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, JSON value (repeatable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="certify a binary field snapshot against a config")
    p.add_argument("snapshot")
    p.add_argument("config")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="run every config matching a glob")
    p.add_argument("pattern")
    p.add_argument("--out", help="parent directory; each run goes to OUT/<config stem>")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
