"""Local HTTP/JSON control service for traces, queries, replay, and retro.

Every request handler runs under one engine lock, so concurrent clients are
serialized command-by-command; nothing here mutates the loaded trace. Replay
sessions own private dev stores keyed by opaque session ids that live until
process exit or explicit delete. CORS is enabled for localhost origins so the
debug UI can be served separately during development; `trod serve` also mounts
the built UI under /ui/.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, RedirectResponse

from .errors import (
    MissingCodeVersion,
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
from .querylang import execute, parse
from .replay import AT_BREAKPOINT, ReplaySession
from .retro import SchedulePolicy, requests_from_trace, retro_test, snapshot_before
from .runtime import Registry

BAD_REQUEST_ERRORS = (QuerySyntaxError, TypeMismatch, UnknownColumn,
                      ScheduleInvalid, ReplayError, MissingCodeVersion, ValueError)
NOT_FOUND_ERRORS = (UnknownReqId, UnknownTable)

DEFAULT_PAGE_LIMIT = 500


@dataclass
class ApiState:
    registry: Registry
    trace: Optional[ProvenanceDb] = None
    data_dir: str = "./trod-data"
    ui_dir: Optional[str] = None
    sessions: dict[str, ReplaySession] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    _next_session: int = 0

    def new_session_id(self) -> str:
        self._next_session += 1
        return f"rs-{self._next_session}"

    def require_trace(self) -> ProvenanceDb:
        if self.trace is None:
            raise ReplayError("no trace loaded; run a workload or demo first")
        return self.trace


def _page(columns, rows, limit: int, offset: int) -> dict:
    return {
        "columns": [c for c, _ in columns],
        "rows": [list(r) for r in rows[offset:offset + limit]],
        "total": len(rows),
        "offset": offset,
    }


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def build_api(state: ApiState) -> FastAPI:
    app = FastAPI(title="trod", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=r"https?://(localhost|127\.0\.0\.1)(:\d+)?",
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(TrodError)
    async def trod_error_handler(_req: Request, exc: TrodError):
        if isinstance(exc, NOT_FOUND_ERRORS):
            return _error(404, str(exc))
        if isinstance(exc, BAD_REQUEST_ERRORS):
            return _error(400, str(exc))
        return _error(500, str(exc))

    @app.exception_handler(ValueError)
    async def value_error_handler(_req: Request, exc: ValueError):
        return _error(400, str(exc))

    # -- traces --

    @app.get("/traces/summary")
    def traces_summary():
        with state.lock:
            trace = state.require_trace()
            return {
                "app": trace.app,
                "codeVersion": trace.code_version,
                "eventTables": sorted(trace.events),
                "transactions": trace.max_txn_id(),
                "requests": [r.to_json() for r in trace.requests],
            }

    @app.get("/traces/invocations")
    def traces_invocations(limit: int = DEFAULT_PAGE_LIMIT, offset: int = 0):
        with state.lock:
            trace = state.require_trace()
            from .provenance import INVOCATIONS_COLUMNS
            return _page(INVOCATIONS_COLUMNS, trace.invocations, limit, offset)

    @app.get("/traces/events/{table}")
    def traces_events(table: str, limit: int = DEFAULT_PAGE_LIMIT, offset: int = 0):
        with state.lock:
            trace = state.require_trace()
            if table not in trace.events:
                raise UnknownTable(table)
            return _page(trace.events_columns[table], trace.events[table], limit, offset)

    # -- queries --

    @app.post("/query")
    def query(body: dict):
        sql = body.get("sql")
        if not isinstance(sql, str):
            return _error(400, "body must be {\"sql\": \"...\"}")
        with state.lock:
            trace = state.require_trace()
            rs = execute(parse(sql), trace.catalog(), trace.aliases())
            return rs.to_json()

    # -- replay sessions --

    @app.post("/replay")
    def replay_start(body: dict):
        req_id = body.get("reqId")
        if not isinstance(req_id, str):
            return _error(400, "body must include reqId")
        opts = body.get("opts") or {}
        with state.lock:
            trace = state.require_trace()
            session = ReplaySession(
                trace, state.registry, req_id,
                mode=opts.get("mode", "precise"),
                full_restore=bool(opts.get("fullRestore", False)))
            sid = state.new_session_id()
            state.sessions[sid] = session
            return {"sessionId": sid, "plan": session.plan.to_json(),
                    "status": session.status}

    def _session(sid: str) -> ReplaySession:
        session = state.sessions.get(sid)
        if session is None:
            raise UnknownReqId(f"no such session {sid!r}")
        return session

    @app.post("/replay/{sid}/step")
    def replay_step(sid: str):
        with state.lock:
            session = _session(sid)
            if session.status != AT_BREAKPOINT:
                return _error(409, f"session is {session.status}")
            report = session.step()
            return {"report": report.to_json(), "status": session.status}

    @app.get("/replay/{sid}/state")
    def replay_state(sid: str):
        with state.lock:
            return _session(sid).state_json()

    @app.post("/replay/{sid}/inspect")
    def replay_inspect(sid: str, body: dict):
        sql = body.get("sql")
        if not isinstance(sql, str):
            return _error(400, "body must be {\"sql\": \"...\"}")
        with state.lock:
            return _session(sid).inspect(sql).to_json()

    @app.delete("/replay/{sid}")
    def replay_delete(sid: str):
        with state.lock:
            _session(sid)
            del state.sessions[sid]
            return {"deleted": sid}

    # -- retro --

    @app.post("/retro")
    def retro(body: dict):
        req_ids = body.get("requests")
        before = body.get("snapshotBefore")
        if not isinstance(req_ids, list) or not isinstance(before, str):
            return _error(400, "body must include snapshotBefore and requests")
        after = {rid: tuple(deps) for rid, deps in (body.get("after") or {}).items()}
        policy_obj = body.get("policy") or {}
        policy = SchedulePolicy(
            prune=bool(policy_obj.get("prune", False)),
            granularity=policy_obj.get("granularity", "table"),
            max_schedules=int(policy_obj.get("maxSchedules", 1000)))
        with state.lock:
            trace = state.require_trace()
            code_version = body.get("codeVersion") or trace.code_version
            report = retro_test(
                trace, state.registry, snapshot_before(trace, before),
                requests_from_trace(trace, req_ids, after=after),
                code_version, policy)
            return report.to_json()

    # -- apps --

    @app.get("/apps")
    def apps():
        with state.lock:
            out = []
            for name in state.registry.names():
                app_def = state.registry.get(name)
                out.append({
                    "name": name,
                    "tables": [s.name for s in app_def.schemas],
                    "versions": {v: sorted(handlers)
                                 for v, handlers in app_def.versions.items()},
                })
            return out

    # -- static UI --

    ui_dir = state.ui_dir or os.environ.get("TROD_UI_DIR") or "frontend/dist"
    if Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

        @app.get("/")
        def index():
            return RedirectResponse("/ui/")

    return app
