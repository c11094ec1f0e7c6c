"""Command-line entry point ``qsfilter``.

Exit codes: 0 all checks passed, 1 a check or computation failed, 2 usage or
configuration error.
"""

import argparse
import json
import os
from pathlib import Path
import sys
import time

from . import __version__
from .config import load_scenario
from .errors import ConfigError, QSFilterError
from .scenario import filter_records, format_report, load_report, run_scenario
from .verify import SUITES, run_suite

OUT_ENV = "QSFILTER_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _default_out(config_path, kind):
    root = Path(os.environ.get(OUT_ENV, "qsfilter-out"))
    return root / f"{Path(config_path).stem}-{kind}"


def _add_overrides(p):
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--dt", type=float, help="override the time step")
    p.add_argument("--tmax", type=float, help="override the horizon")
    p.add_argument("--ntraj", type=int, help="override the number of trajectories")


def build_parser():
    parser = argparse.ArgumentParser(prog="qsfilter", description="Simulate, filter and verify continuously monitored quantum systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate truth trajectories, filter their records and write a report")
    p.add_argument("config")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<config>-simulate)")
    _add_overrides(p)

    p = sub.add_parser("filter", help="run the filter on existing record files")
    p.add_argument("config")
    p.add_argument("--records", required=True, help="directory holding records/traj_*.csv (or the CSVs themselves)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<config>-filter)")
    _add_overrides(p)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=[*SUITES, "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ntraj", type=int, help="trajectories for the Monte-Carlo ensemble checks")
    p.add_argument("--json", dest="json_path", help="also write the machine-readable report here")

    p = sub.add_parser("report", help="summarise an output directory")
    p.add_argument("dir")
    return parser


def _load(args):
    cfg = load_scenario(args.config)
    return cfg.with_overrides(seed=args.seed, dt=args.dt, t_max=args.tmax, n_traj=args.ntraj)


def _finish(payload):
    print(format_report(payload))
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def _verify(args):
    start = time.perf_counter()
    reports = run_suite(args.suite, seed=args.seed, n_traj=args.ntraj)
    elapsed = time.perf_counter() - start
    rows = []
    for rep in reports:
        for r in rep.rows:
            flag = "PASS" if r.passed else "FAIL"
            if r.sigma > 0:
                print(f"{flag}  {rep.name}: {r.label}  expected {r.expected:.6g}  actual {r.actual:.6g}  z {r.z:+.2f} ({r.tolerance})")
            else:
                print(f"{flag}  {rep.name}: {r.label}  actual {r.actual:.6g} ({r.tolerance})")
            rows.append({"suite": rep.name, **vars(r)})
    passed = all(rep.passed for rep in reports)
    print(f"{args.suite}: {'PASS' if passed else 'FAIL'} ({sum(not r['passed'] for r in rows)} failed of {len(rows)}, {elapsed:.1f}s)")
    if args.json_path:
        payload = {"version": __version__, "suite": args.suite, "seed": args.seed, "passed": passed, "rows": rows}
        Path(args.json_path).write_text(json.dumps(payload, indent=2, default=str) + "\n", encoding="utf-8")
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load(args)
            return _finish(run_scenario(cfg, args.out or _default_out(args.config, "simulate")))
        if args.command == "filter":
            cfg = _load(args)
            return _finish(filter_records(cfg, args.records, args.out or _default_out(args.config, "filter")))
        if args.command == "verify":
            return _verify(args)
        if args.command == "report":
            try:
                payload = load_report(args.dir)
            except (OSError, json.JSONDecodeError) as exc:
                print(f"error: cannot read report in {args.dir}: {exc}", file=sys.stderr)
                return EXIT_USAGE
            return _finish(payload)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QSFilterError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    parser.error(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
