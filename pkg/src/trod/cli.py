"""Command-line entrypoint: run, query, replay, retro, demo, bench, serve.

Exit codes: 0 success, 1 user error (bad arguments, bad SQL, unknown ids),
2 divergence or failed expectation, 3 internal error. Diagnostics go to
stderr; structured output goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import apps as apps_mod
from .bench import bench_overhead, run_bench
from .errors import (
    QuerySyntaxError,
    ReplayError,
    ScheduleInvalid,
    TrodError,
    TypeMismatch,
    UnknownColumn,
    UnknownReqId,
    UnknownTable,
)
from .provenance import ProvenanceDb
from .querylang import ResultSet, parse, execute
from .replay import DIVERGED, ReplaySession
from .retro import (
    SchedulePolicy,
    requests_from_trace,
    retro_test,
    snapshot_before,
)
from .runtime import WorkloadSpec, run_workload

EXIT_OK = 0
EXIT_USER = 1
EXIT_DIVERGED = 2
EXIT_INTERNAL = 3

USER_ERRORS = (QuerySyntaxError, TypeMismatch, UnknownColumn, UnknownTable,
               UnknownReqId, ScheduleInvalid, ReplayError)


def default_data_dir() -> str:
    return os.environ.get("TROD_DATA_DIR", "./trod-data")


def _load_trace(data_dir: str) -> ProvenanceDb:
    path = Path(data_dir)
    if not (path / "manifest.json").exists():
        raise ReplayError(f"no trace found in {data_dir!r}; run a workload or demo first")
    return ProvenanceDb.import_dir(path)


def _print_result(rs: ResultSet, output: str) -> None:
    if output == "json":
        print(json.dumps(rs.to_json()))
        return
    widths = [len(c) for c in rs.columns]
    rendered = [[_cell(v) for v in row] for row in rs.rows]
    for row in rendered:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    print("  ".join(c.ljust(widths[i]) for i, c in enumerate(rs.columns)))
    print("  ".join("-" * w for w in widths))
    for row in rendered:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))


def _cell(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    spec = WorkloadSpec.from_json(json.loads(Path(args.workload).read_text()))
    registry = apps_mod.builtin_registry()
    report = run_workload(registry.get(spec.app), spec)
    if report.trace is not None:
        report.trace.export(args.data_dir)
    out = report.to_json()
    out["traceDir"] = args.data_dir if report.trace is not None else None
    print(json.dumps(out, indent=None if args.output == "json" else 2))
    return EXIT_OK


def cmd_query(args) -> int:
    trace = _load_trace(args.data_dir)
    rs = execute(parse(args.sql), trace.catalog(), trace.aliases())
    _print_result(rs, args.output)
    return EXIT_OK


def cmd_replay(args) -> int:
    trace = _load_trace(args.data_dir)
    session = ReplaySession(trace, apps_mod.builtin_registry(), args.req_id,
                            mode=args.mode, full_restore=args.full_restore)
    if args.interactive:
        return _replay_repl(session, args.output)
    session.run_to_end()
    print(json.dumps(session.state_json(), indent=None if args.output == "json" else 2))
    return EXIT_DIVERGED if session.status == DIVERGED else EXIT_OK


def _replay_repl(session: ReplaySession, output: str,
                 stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def emit(text):
        print(text, file=stdout)

    emit(f"replaying {session.plan.req_id}: {len(session.plan.slots)} transaction(s); "
         "commands: step, run, inspect <sql>, plan, quit")
    while True:
        stdout.write("(trod) ")
        stdout.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        cmd, _, rest = line.partition(" ")
        try:
            if cmd == "step":
                if session.status != "AtBreakpoint":
                    emit(f"session is {session.status}")
                else:
                    emit(json.dumps(session.step().to_json()))
                    emit(f"status: {session.status}")
            elif cmd == "run":
                session.run_to_end()
                emit(json.dumps(session.state_json()))
            elif cmd == "inspect":
                _print_result(session.inspect(rest), output)
            elif cmd == "plan":
                emit(json.dumps(session.plan.to_json()))
            elif cmd in ("quit", "exit"):
                break
            else:
                emit(f"unknown command {cmd!r}")
        except TrodError as e:
            emit(f"error: {e}")
    return EXIT_DIVERGED if session.status == DIVERGED else EXIT_OK


def _parse_after(specs: list[str]) -> dict[str, tuple[str, ...]]:
    out: dict[str, tuple[str, ...]] = {}
    for spec in specs or ():
        rid, _, deps = spec.partition("=")
        if not deps:
            raise ScheduleInvalid(f"bad --after spec {spec!r}; use REQ=DEP1,DEP2")
        out[rid.strip()] = tuple(d.strip() for d in deps.split(",") if d.strip())
    return out


def cmd_retro(args) -> int:
    trace = _load_trace(args.data_dir)
    registry = apps_mod.builtin_registry()
    snapshot = snapshot_before(trace, args.snapshot_before)
    req_ids = [r.strip() for r in args.requests.split(",") if r.strip()]
    requests = requests_from_trace(trace, req_ids, after=_parse_after(args.after))
    policy = SchedulePolicy(prune=args.prune, granularity=args.granularity,
                            max_schedules=args.max_schedules)
    code_version = args.code_version or trace.code_version
    report = retro_test(trace, registry, snapshot, requests, code_version, policy)
    print(json.dumps(report.to_json(), indent=None if args.output == "json" else 2))
    return EXIT_OK


_DEMOS = {
    "moodle": ("moodle-forum", "racy", "fixed-racy", "duplicate-inserts"),
    "profiles": ("user-profiles", "audit", "audit", "illegal-updates"),
    "wiki": ("wiki-pages", "racy", "racy", None),
}


def cmd_demo(args) -> int:
    app_name, buggy_wl, fixed_wl, query_name = _DEMOS[args.name]
    case = apps_mod.case_study(app_name)
    workload = case.workloads[fixed_wl if args.fixed else buggy_wl]
    report = run_workload(case.app, workload)
    report.trace.export(args.data_dir)
    summary = report.to_json()
    summary["app"] = app_name
    summary["workload"] = "fixed" if args.fixed else "buggy"
    summary["traceDir"] = args.data_dir
    if args.output == "json":
        out = {"run": summary}
        if query_name:
            rs = execute(parse(case.queries[query_name]),
                         report.trace.catalog(), report.trace.aliases())
            out["query"] = {"name": query_name, "sql": case.queries[query_name],
                            **rs.to_json()}
        print(json.dumps(out))
        return EXIT_OK
    print(f"# {app_name} ({summary['workload']} workload)")
    for rid, o in report.outcomes.items():
        line = o.result_display if o.ok else f"error: {o.message}"
        print(f"  {rid}: {o.status}  {line}")
    if query_name:
        print(f"\n# debug query: {query_name}")
        print(case.queries[query_name])
        rs = execute(parse(case.queries[query_name]),
                     report.trace.catalog(), report.trace.aliases())
        print()
        _print_result(rs, "table")
    print(f"\ntrace exported to {args.data_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.trace == "both":
        print(json.dumps(bench_overhead(args.requests)))
    else:
        print(json.dumps(run_bench(args.requests, args.trace == "on").to_json()))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .api import ApiState, build_api

    trace = None
    if (Path(args.data_dir) / "manifest.json").exists():
        trace = ProvenanceDb.import_dir(args.data_dir)
    state = ApiState(registry=apps_mod.builtin_registry(), trace=trace,
                     data_dir=args.data_dir)
    app = build_api(state)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trod", description="transaction-oriented debugging toolkit")
    parser.add_argument("--data-dir", default=default_data_dir(),
                        help="trace directory (env TROD_DATA_DIR, default ./trod-data)")
    parser.add_argument("--output", choices=("table", "json"), default="table")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a workload file and export its trace")
    p.add_argument("workload")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("query", help="run a debugging query over the stored trace")
    p.add_argument("sql")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("replay", help="replay one traced request")
    p.add_argument("req_id")
    p.add_argument("--mode", choices=("precise", "conservative"), default="precise")
    p.add_argument("--full-restore", action="store_true")
    p.add_argument("--interactive", action="store_true")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("retro", help="re-execute traced requests with other code")
    p.add_argument("--snapshot-before", required=True, metavar="REQ_ID")
    p.add_argument("--requests", required=True, help="comma-separated request ids")
    p.add_argument("--code-version", default=None)
    p.add_argument("--after", action="append", metavar="REQ=DEP1,DEP2",
                   help="ordering constraint (repeatable)")
    p.add_argument("--prune", action="store_true")
    p.add_argument("--granularity", choices=("table", "key"), default="table")
    p.add_argument("--max-schedules", type=int, default=1000)
    p.set_defaults(fn=cmd_retro)

    p = sub.add_parser("demo", help="run a built-in case study")
    p.add_argument("name", choices=sorted(_DEMOS))
    group = p.add_mutually_exclusive_group()
    group.add_argument("--buggy", dest="fixed", action="store_false", default=False)
    group.add_argument("--fixed", dest="fixed", action="store_true")
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("bench", help="measure per-request tracing overhead")
    p.add_argument("--requests", type=int, default=10000)
    p.add_argument("--trace", choices=("on", "off", "both"), default="both")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="serve the HTTP API and debug UI")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except TrodError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
