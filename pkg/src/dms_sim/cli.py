"""Command line: run, partition, validate, diff, worker.

Exit codes: 0 success, 2 bad configuration, 3 causality or deadlock,
4 transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .activity import (
    dumps_partition, emit_skeleton, load_model, map_to_workstations, partition, validate_partition,
)
from .errors import DmsError, ParseError
from .orchestrator import RunMode, diff_trace_lines, read_report, run, trace_diff, write_report
from .scenario import effective_lookahead_check, format_lp, load, loads, validate

log = logging.getLogger("dms_sim")


def _read_hosts(path: str | None):
    if path is None:
        return None
    from .worker import load_host_map
    return load_host_map(Path(path).read_text(encoding="utf-8"))


def cmd_run(args) -> int:
    scenario = load(args.scenario)
    for warning in effective_lookahead_check(scenario):
        log.warning("%s", warning)
    hosts = _read_hosts(args.hosts)
    seeds = [args.seed] if args.seed is not None else [
        scenario.master_seed + r for r in range(scenario.replications)]
    for i, seed in enumerate(seeds):
        report = run(scenario, args.mode, seed=seed, trace=args.trace is not None,
                     watchdog=args.watchdog, hosts=hosts)
        print(report.summary())
        suffix = f".{i}" if len(seeds) > 1 else ""
        if args.trace:
            Path(args.trace + suffix).write_text("\n".join(report.trace) + "\n", encoding="utf-8")
        if args.report:
            p = Path(args.report)
            write_report(report, p.with_name(p.stem + suffix + p.suffix) if suffix else p)
    return 0


def cmd_validate(args) -> int:
    path = Path(args.scenario)
    scenario = loads(path.read_text(encoding="utf-8"), str(path))
    problems = validate(scenario)
    for p in problems:
        print(f"error: {p}")
    for w in effective_lookahead_check(scenario):
        print(f"warning: {w}")
    if problems:
        return 2
    print(f"{scenario.name}: {len(scenario.lps)} LPs, {len(scenario.links)} links, ok")
    return 0


def cmd_partition(args) -> int:
    graph = load_model(args.model)
    locked = {}
    for pin in args.pin or []:
        leaf, _, idx = pin.partition("=")
        locked[leaf] = int(idx)
    part = partition(graph, args.k, locked or None)
    report = validate_partition(graph, part)
    if not report.valid:
        for v in report.violations:
            print(f"error: {v.kind}: {v.detail}", file=sys.stderr)
        return 2
    mapping = map_to_workstations(part, args.hosts) if args.hosts else None
    text = dumps_partition(part, mapping)
    if args.skeletons:
        for i in range(len(part.blocks)):
            text += "\n" + "\n".join(format_lp(emit_skeleton(graph, part, i))) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _load_diffable(path: str):
    text = Path(path).read_text(encoding="utf-8")
    try:
        json.loads(text)
    except ValueError:
        return None, text.splitlines()
    return read_report(path), None


def cmd_diff(args) -> int:
    ra, la = _load_diffable(args.first)
    rb, lb = _load_diffable(args.second)
    if (ra is None) != (rb is None):
        print("cannot compare a JSON report with a text trace", file=sys.stderr)
        return 2
    out = trace_diff(ra, rb) if ra is not None else diff_trace_lines(la, lb)
    for line in out:
        print(line)
    if out:
        return 1
    print("identical")
    return 0


def cmd_worker(args) -> int:
    from .worker import parse_host, serve_lp
    scenario = load(args.scenario)
    hosts = _read_hosts(args.hosts)
    if args.lp not in {lp.id for lp in scenario.lps}:
        raise ParseError(0, f"unknown LP {args.lp!r}", args.scenario)
    listen = parse_host(args.listen) if args.listen else hosts[args.lp]
    result = serve_lp(scenario, args.lp, listen, hosts, seed=args.seed,
                      trace=args.trace is not None)
    if args.trace and result["trace"]:
        from .kernel import format_trace
        Path(args.trace).write_text(
            "\n".join(format_trace(tuple(r)) for r in result["trace"]) + "\n", encoding="utf-8")
    if args.result:
        Path(args.result).write_text(json.dumps(result), encoding="utf-8")
    print(f"lp {args.lp}: {result['status']}, {result['report']['events']} events")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dms-sim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario")
    p.add_argument("scenario")
    p.add_argument("--mode", choices=[m.value for m in RunMode], default="seq")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", metavar="PATH")
    p.add_argument("--report", metavar="PATH", help=".json for the full report, else CSV")
    p.add_argument("--hosts", metavar="MAP", help="lines of '<lp> <host>:<port>'")
    p.add_argument("--watchdog", type=float, default=30.0, metavar="SECONDS")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("partition", help="split an activity model into k LPs")
    p.add_argument("model")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--pin", action="append", metavar="LEAF=BLOCK")
    p.add_argument("--hosts", nargs="+", metavar="HOST:PORT")
    p.add_argument("--skeletons", action="store_true", help="also print one LP skeleton per block")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("diff", help="compare two traces or two JSON reports")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("worker", help="host one LP for a multi-machine run")
    p.add_argument("scenario")
    p.add_argument("--lp", required=True)
    p.add_argument("--hosts", required=True, metavar="MAP")
    p.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", metavar="PATH")
    p.add_argument("--result", metavar="PATH")
    p.set_defaults(func=cmd_worker)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DmsError as exc:
        print(f"dms-sim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dms-sim: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
