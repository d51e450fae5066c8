"""Command-line entry point.

Verbs::

    entlink run <scenario> [--seed N] [--duration S] [--out DIR]
    entlink verify <report_dir>
    entlink export-events <scenario> <out> [--format csv|json|bin] [--seed N] [--duration S]

``<scenario>`` is a path or the name of a bundled scenario (``table1``,
``fig3``, ``bell_paper``, ``qkd_paper``). Exit codes: 0 success, 1 runtime
error, 2 validation error, 3 verification failure. Errors are printed to
stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .eventio import write_binary, write_csv, write_json
from .linksim import simulate_run
from .reports import run_scenario, verify
from .scenario import ScenarioError, load_scenario, resolve_scenario

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_VALIDATION, {"error": "usage", "message": message})


def _fail(code: int, payload: dict):
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    raise SystemExit(code)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="entlink", description="Entangled-photon link simulator and QKD post-processing.")
    p.add_argument("--version", action="version", version=f"entlink {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write its reports")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", type=float)
    run.add_argument("--out", help="report directory (overrides the scenario's report_dir)")

    ver = sub.add_parser("verify", help="check reports against the acceptance tolerances")
    ver.add_argument("report_dir")

    exp = sub.add_parser("export-events", help="simulate a scenario's link and write the raw events")
    exp.add_argument("scenario")
    exp.add_argument("out")
    exp.add_argument("--format", choices=("csv", "json", "bin"), default="csv")
    exp.add_argument("--seed", type=int)
    exp.add_argument("--duration", type=float)
    return p


def _load(args):
    scn = load_scenario(resolve_scenario(args.scenario))
    return scn.with_overrides(seed=args.seed, duration=args.duration)


def _cmd_run(args) -> int:
    scn = _load(args)
    # where reports land is not part of the experiment, so it stays out of the hash
    out = Path(args.out) if args.out else scn.report_dir
    run_scenario(scn, out)
    print(json.dumps({"scenario": scn.name, "report_dir": str(out)}))
    return EXIT_OK


def _cmd_verify(args) -> int:
    checks = verify(args.report_dir)
    width = max(len(c.criterion) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.criterion:<{width}}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def _cmd_export(args) -> int:
    scn = _load(args)
    sim = simulate_run(scn.link)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    streams = (sim.alice, sim.bob)
    if args.format == "csv":
        write_csv(streams, out)
    elif args.format == "json":
        write_json(streams, out)
    else:
        write_binary(streams, out)
    print(json.dumps({"events": len(sim.alice) + len(sim.bob), "out": str(out)}))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "verify": _cmd_verify, "export-events": _cmd_export}[args.verb]
    try:
        return handler(args)
    except ScenarioError as exc:
        _fail(EXIT_VALIDATION, exc.to_dict())
    except Exception as exc:  # anything else is a runtime failure
        _fail(EXIT_RUNTIME, {"error": "runtime", "type": type(exc).__name__, "message": str(exc)})


if __name__ == "__main__":
    sys.exit(main())
