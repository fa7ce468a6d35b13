"""Deterministic request-handler runtime.

Handlers are generator functions ``def handler(ctx, *args)`` that yield
transaction steps built with ``ctx.txn(func_name, body)`` and receive each
transaction's result back at the yield. Pure logic between steps runs inline;
all shared state lives in the store and is touched only through transaction
bodies. Nested handler invocations use ``result = yield from ctx.call(name,
*args)``, which records a workflow edge and runs the callee under the same
request id.

Requests execute as coroutine-like step machines multiplexed by one scheduler:
an explicit schedule names which request commits next, otherwise requests
advance round-robin in arrival order, one transaction per turn. Handler
failures are captured per request, never fatal to the run.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .encoding import digest, display_value, value_from_json, value_to_json
from .errors import (
    DuplicateApp,
    MissingCodeVersion,
    ScheduleInvalid,
    UnknownApp,
    UnknownHandler,
)
from .provenance import ProvenanceDb, RequestRecord
from .store import Store, TableSchema, TxnMeta

MAX_TURNS = 1_000_000

STATUS_OK = "Ok"
STATUS_ERROR = "HandlerError"


@dataclass(frozen=True)
class TxnStep:
    func_name: str
    body: Callable
    handler_name: str


class HandlerCtx:
    """The only capability a handler receives: build steps and call handlers.

    Exposes no clock, randomness, or tracing state.
    """

    __slots__ = ("_machine",)

    def __init__(self, machine: "_RequestMachine"):
        self._machine = machine

    def txn(self, func_name: str, body: Callable) -> TxnStep:
        return TxnStep(func_name, body, self._machine.stack[-1])

    def call(self, handler: str, *args):
        m = self._machine
        fn = m.handlers.get(handler)
        if fn is None:
            raise UnknownHandler(handler)
        if m.prov is not None:
            m.prov.record_edge(m.req_id, m.stack[-1], handler)
        m.stack.append(handler)
        try:
            out = fn(self, *args)
            if inspect.isgenerator(out):
                result = yield from out
            else:
                result = out
        finally:
            m.stack.pop()
        return result


@dataclass(frozen=True)
class Request:
    req_id: str
    handler: str
    args: tuple = ()

    def to_json(self) -> dict:
        return {"reqId": self.req_id, "handler": self.handler,
                "args": [value_to_json(a) for a in self.args]}

    @classmethod
    def from_json(cls, obj: dict) -> "Request":
        return cls(obj["reqId"], obj["handler"],
                   tuple(value_from_json(a) for a in obj.get("args", [])))


@dataclass
class WorkloadSpec:
    app: str
    code_version: str
    requests: list[Request]
    schedule: Optional[list[tuple[str, int]]] = None
    trace: bool = True

    def to_json(self) -> dict:
        out = {"app": self.app, "codeVersion": self.code_version,
               "requests": [r.to_json() for r in self.requests], "trace": self.trace}
        if self.schedule is not None:
            out["schedule"] = [[rid, idx] for rid, idx in self.schedule]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "WorkloadSpec":
        schedule = None
        if obj.get("schedule") is not None:
            schedule = [(rid, idx) for rid, idx in obj["schedule"]]
        return cls(
            app=obj["app"], code_version=obj["codeVersion"],
            requests=[Request.from_json(r) for r in obj["requests"]],
            schedule=schedule, trace=bool(obj.get("trace", True)),
        )


@dataclass
class RequestOutcome:
    status: str
    message: str = ""
    result: Any = None
    result_digest: str = ""
    result_display: str = ""

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_json(self) -> dict:
        return {"status": self.status, "message": self.message,
                "resultDigest": self.result_digest, "resultDisplay": self.result_display}


@dataclass
class RunReport:
    outcomes: dict[str, RequestOutcome]
    trace: Optional[ProvenanceDb]
    store: Store
    final_seq: int

    def to_json(self) -> dict:
        return {"requests": {rid: o.to_json() for rid, o in self.outcomes.items()},
                "finalCommitSeq": self.final_seq}


@dataclass
class AppDef:
    """An application: schemas plus handler catalogs keyed by code version."""

    name: str
    schemas: list[TableSchema]
    versions: dict[str, dict[str, Callable]] = field(default_factory=dict)

    def handlers(self, code_version: str) -> dict[str, Callable]:
        catalog = self.versions.get(code_version)
        if catalog is None:
            raise MissingCodeVersion(f"{self.name}@{code_version}")
        return catalog


class Registry:
    def __init__(self):
        self._apps: dict[str, AppDef] = {}

    def register(self, app: AppDef) -> None:
        if app.name in self._apps:
            raise DuplicateApp(app.name)
        self._apps[app.name] = app

    def get(self, name: str) -> AppDef:
        app = self._apps.get(name)
        if app is None:
            raise UnknownApp(name)
        return app

    def names(self) -> list[str]:
        return sorted(self._apps)


def display_result(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(display_result(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {display_result(v)}" for k, v in value.items()) + "}"
    conv = getattr(value, "canonical_value", None)
    if conv is not None:
        return display_result(conv())
    return display_value(value)


# ---------------------------------------------------------------------------
# Request step machine
# ---------------------------------------------------------------------------


class _RequestMachine:
    """Drives one handler generator: at most one transaction per turn.

    After each commit the generator runs forward through pure logic until it
    either stashes the next transaction step or finishes, so return values
    and post-transaction errors land on the same turn as the commit.
    """

    def __init__(self, request: Request, handlers: dict[str, Callable],
                 prov: Optional[ProvenanceDb]):
        self.req_id = request.req_id
        self.request = request
        self.handlers = handlers
        self.prov = prov
        self.stack = [request.handler]
        self.pending: Optional[TxnStep] = None
        self.outcome: Optional[RequestOutcome] = None
        self.steps_done = 0
        self.gen = None
        fn = handlers.get(request.handler)
        if fn is None:
            raise UnknownHandler(request.handler)
        ctx = HandlerCtx(self)
        try:
            out = fn(ctx, *request.args)
        except Exception as e:  # noqa: BLE001 - handler errors are outcomes
            self._fail(e)
            return
        if inspect.isgenerator(out):
            self.gen = out
            self._advance(None, first=True)
        else:
            self._finish(out)

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def _finish(self, value: Any) -> None:
        self.outcome = RequestOutcome(
            status=STATUS_OK, result=value,
            result_digest=digest(value), result_display=display_result(value))

    def _fail(self, exc: Exception) -> None:
        self.outcome = RequestOutcome(status=STATUS_ERROR, message=str(exc) or
                                      type(exc).__name__)

    def _advance(self, send_value: Any, first: bool = False) -> None:
        try:
            step = next(self.gen) if first else self.gen.send(send_value)
        except StopIteration as stop:
            self._finish(stop.value)
            return
        except Exception as e:  # noqa: BLE001
            self._fail(e)
            return
        if not isinstance(step, TxnStep):
            self.gen.close()
            self._fail(TypeError(f"handler yielded {type(step).__name__}, "
                                 "expected ctx.txn(...)"))
            return
        self.pending = step

    def turn(self, store: Store) -> bool:
        """Execute the pending transaction step; True if a commit happened."""
        if self.done or self.pending is None:
            return False
        step = self.pending
        self.pending = None
        try:
            res = store.txn_run(step.body, TxnMeta(step.handler_name, step.func_name,
                                                   self.req_id))
        except Exception as e:  # noqa: BLE001 - abort/constraint become outcomes
            self.gen.close()
            self._fail(e)
            return False
        self.steps_done += 1
        self._advance(res.result)
        return True


# ---------------------------------------------------------------------------
# Scheduler
# ---------------------------------------------------------------------------


def validate_schedule(schedule: list[tuple[str, int]], req_ids: list[str]) -> None:
    known = set(req_ids)
    per_req: dict[str, int] = {}
    for entry in schedule:
        if len(entry) != 2:
            raise ScheduleInvalid(f"bad schedule entry {entry!r}")
        rid, idx = entry
        if rid not in known:
            raise ScheduleInvalid(f"schedule references unknown request {rid!r}")
        expected = per_req.get(rid, 0) + 1
        if idx != expected:
            raise ScheduleInvalid(
                f"{rid} step {idx} out of order (expected step {expected})")
        per_req[rid] = idx


def run_workload(app: AppDef, spec: WorkloadSpec) -> RunReport:
    """Execute every request of the workload to completion."""
    handlers = app.handlers(spec.code_version)
    req_ids = [r.req_id for r in spec.requests]
    if len(set(req_ids)) != len(req_ids):
        raise ScheduleInvalid("duplicate request ids in workload")
    if spec.schedule is not None:
        validate_schedule(spec.schedule, req_ids)

    prov = ProvenanceDb(app.name, spec.code_version, app.schemas) if spec.trace else None
    store = Store(trace_sink=prov)
    for schema in app.schemas:
        store.create_table(schema)

    machines = {r.req_id: _RequestMachine(r, handlers, prov) for r in spec.requests}
    _drive(machines, req_ids, spec.schedule, store)

    outcomes = {}
    for index, req in enumerate(spec.requests):
        m = machines[req.req_id]
        outcomes[req.req_id] = m.outcome
        if prov is not None:
            o = m.outcome
            prov.record_request(RequestRecord(
                req_id=req.req_id, handler=req.handler, args=list(req.args),
                status=o.status, message=o.message, result_digest=o.result_digest,
                result_display=o.result_display, index=index))
    return RunReport(outcomes=outcomes, trace=prov, store=store,
                     final_seq=store.commit_seq)


def _drive(machines: dict[str, _RequestMachine], order: list[str],
           schedule: Optional[list[tuple[str, int]]], store: Store) -> None:
    turns = 0
    if schedule:
        for rid, _idx in schedule:
            m = machines[rid]
            if m.done:
                continue  # finished early under this interleaving; entry skipped
            m.turn(store)
            turns += 1
            if turns > MAX_TURNS:
                raise RuntimeError("scheduler turn limit exceeded")
    # FIFO arrival order, round-robin, one transaction step per turn.
    while True:
        live = [rid for rid in order if not machines[rid].done]
        if not live:
            break
        for rid in live:
            m = machines[rid]
            if not m.done:
                m.turn(store)
                turns += 1
                if turns > MAX_TURNS:
                    raise RuntimeError("scheduler turn limit exceeded")
