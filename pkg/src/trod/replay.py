"""Faithful replay of one past request in a private development store.

A replay plan slices the original trace into per-transaction slots for the
target request. Each slot carries a dependency window ``(prev_txn, txn]``: the
stretch of foreign commits that originally ran between the request's previous
transaction and this one. Before re-executing a slot, the session injects the
foreign writes in that window the request depends on, so the re-executed
transaction observes the same state it originally saw.

Dependency selection (precise mode) matches a foreign write against the
request's captured reads and writes:

- its key is among a predicate's matched keys or the request's own write keys;
- its before or after image satisfies a recorded equality predicate (this is
  how a foreign insert lands on a recorded *negative* read: the classic
  check-then-insert race);
- it is an insert into a synthetic-key table the request itself inserts into
  later (key allocation is shared state: without it the re-executed insert
  would be assigned a different row id).

Conservative mode injects every foreign write in the window touching any
table the request touches; it is always a superset of precise mode.

Sibling requests are never re-executed, only their logged effects are
injected. Replay writes go to a session-private store and trace namespace;
the original trace is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import ReplayError, UnknownReqId
from .provenance import ProvenanceDb, rebuild_store
from .querylang import Relation, ResultSet, parse, execute
from .runtime import Registry, Request, _RequestMachine
from .store import ReadPredicate, SnapshotRef, TableSchema, WriteOp

PRECISE = "precise"
CONSERVATIVE = "conservative"

AT_BREAKPOINT = "AtBreakpoint"
DONE = "Done"
DIVERGED = "Diverged"

INJECTED_COLUMNS = (
    ("SlotIndex", "Int"), ("SourceTxnId", "Int"), ("SourceReqId", "Text"),
    ("Table", "Text"), ("Kind", "Text"),
)


@dataclass
class Dependency:
    source_txn: int
    source_req: str
    write: WriteOp

    def to_json(self) -> dict:
        return {"sourceTxnId": self.source_txn, "sourceReqId": self.source_req,
                "write": self.write.to_json()}


@dataclass
class SlotPlan:
    index: int  # 1-based
    txn_id: int
    func_name: str
    handler_name: str
    window: tuple[int, int]  # (exclusive low, inclusive high)
    deps: list[Dependency] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"slot": self.index, "txnId": self.txn_id, "funcName": self.func_name,
                "handlerName": self.handler_name, "window": list(self.window),
                "dependencies": [d.to_json() for d in self.deps]}


@dataclass
class ReplayPlan:
    req_id: str
    handler: str
    args: list
    mode: str
    first_txn: int
    slots: list[SlotPlan]
    restore_set: list[tuple[str, object]]

    def to_json(self) -> dict:
        return {"reqId": self.req_id, "handler": self.handler, "mode": self.mode,
                "firstTxnId": self.first_txn,
                "slots": [s.to_json() for s in self.slots],
                "restoreSet": [[t, list(k) if isinstance(k, tuple) else k]
                               for t, k in self.restore_set]}


@dataclass
class SlotReport:
    slot: int
    txn_id: int
    injected: list[tuple[Dependency, bool]]  # (dependency, forced before-image)
    replayed_digest: str = ""
    original_digest: str = ""
    read_set_match: bool = False
    writes_match: bool = False
    diverged: bool = False
    note: str = ""

    @property
    def digest_match(self) -> bool:
        return self.replayed_digest == self.original_digest

    def to_json(self) -> dict:
        return {
            "slot": self.slot, "txnId": self.txn_id,
            "injected": [dict(d.to_json(), forced=forced) for d, forced in self.injected],
            "replayedDigest": self.replayed_digest, "originalDigest": self.original_digest,
            "digestMatch": self.digest_match, "readSetMatch": self.read_set_match,
            "writesMatch": self.writes_match, "diverged": self.diverged, "note": self.note,
        }


def _row_matches(schema: TableSchema, row: Optional[tuple], eq: dict) -> bool:
    if row is None:
        return False
    idx = {c.name: i for i, c in enumerate(schema.columns)}
    return all(row[idx[col]] == val for col, val in eq.items())


def _write_hits_predicate(schema: TableSchema, op: WriteOp, pred: ReadPredicate) -> bool:
    if op.table != pred.table:
        return False
    if pred.key_filter is not None:
        return op.key == pred.key_filter
    if op.key in pred.matched_keys:
        return True
    return (_row_matches(schema, op.after, pred.eq)
            or _row_matches(schema, op.before, pred.eq))


def plan_replay(trace: ProvenanceDb, req_id: str, mode: str = PRECISE) -> ReplayPlan:
    """Slice the trace into slots and compute per-slot injection sets."""
    record = trace.request(req_id)
    if record is None:
        raise UnknownReqId(req_id)
    txn_ids = trace.txn_ids_for_request(req_id)
    if not txn_ids:
        raise ReplayError(f"{req_id} committed no transactions; nothing to replay")
    schemas = {s.name: s for s in trace.schemas}

    own = [trace.sidecar[t] for t in txn_ids]
    own_preds: list[ReadPredicate] = [p for t in own for p in t.reads]
    own_write_keys = {(w.table, w.key) for t in own for w in t.writes}
    touched = {p.table for p in own_preds} | {w.table for t in own for w in t.writes}
    # Tables where the request inserts synthetic keys, with the commit seqs.
    own_insert_seqs: dict[str, list[int]] = {}
    for t in own:
        for w in t.writes:
            if w.kind == "Insert" and isinstance(w.key, int):
                own_insert_seqs.setdefault(w.table, []).append(t.txn_id)

    def is_dependency(op: WriteOp, foreign_txn: int) -> bool:
        if mode == CONSERVATIVE:
            return op.table in touched
        if (op.table, op.key) in own_write_keys:
            return True
        if any(_write_hits_predicate(schemas[op.table], op, p) for p in own_preds
               if p.table == op.table):
            return True
        if op.kind == "Insert" and isinstance(op.key, int):
            later = own_insert_seqs.get(op.table, ())
            if any(seq > foreign_txn for seq in later):
                return True
        return False

    slots: list[SlotPlan] = []
    prev = txn_ids[0] - 1
    for index, txn_id in enumerate(txn_ids, start=1):
        side = trace.sidecar[txn_id]
        deps: list[Dependency] = []
        for foreign in range(prev + 1, txn_id):
            ft = trace.sidecar[foreign]
            if ft.meta.req_id == req_id and not ft.meta.injected:
                continue
            for op in ft.writes:
                if is_dependency(op, foreign):
                    deps.append(Dependency(foreign, ft.meta.req_id, op))
        slots.append(SlotPlan(
            index=index, txn_id=txn_id, func_name=side.meta.func_name,
            handler_name=side.meta.handler_name, window=(prev, txn_id), deps=deps))
        prev = txn_id

    restore: list[tuple[str, object]] = []
    seen = set()

    def add_ref(table, key):
        if (table, key) not in seen:
            seen.add((table, key))
            restore.append((table, key))

    for p in own_preds:
        for k in p.matched_keys:
            add_ref(p.table, k)
    for t in own:
        for w in t.writes:
            add_ref(w.table, w.key)
    for slot in slots:
        for d in slot.deps:
            add_ref(d.write.table, d.write.key)

    return ReplayPlan(req_id=req_id, handler=record.handler, args=list(record.args),
                      mode=mode, first_txn=txn_ids[0], slots=slots, restore_set=restore)


class ReplaySession:
    """Stepwise replay state machine over a private dev store.

    One breakpoint per transaction slot: ``step()`` injects the slot's
    dependencies, re-executes the request's next transaction, and compares
    result digest, read set, and write images against the trace. After the
    last slot the handler runs to completion and the final outcome is compared
    with the original request record.
    """

    def __init__(self, trace: ProvenanceDb, registry: Registry, req_id: str,
                 mode: str = PRECISE, full_restore: bool = False):
        if mode not in (PRECISE, CONSERVATIVE):
            raise ReplayError(f"unknown replay mode {mode!r}")
        self.trace = trace
        self.plan = plan_replay(trace, req_id, mode)
        app = registry.get(trace.app)
        handlers = app.handlers(trace.code_version)

        original = rebuild_store(trace)
        base = SnapshotRef(self.plan.first_txn - 1)
        if full_restore:
            self.dev = original.branch(base)
        else:
            self.dev = original.empty_like()
            for table, key in self.plan.restore_set:
                self.dev.seed_row(table, key, original.row_as_of(table, key, base))
            for schema in trace.schemas:
                self.dev.set_allocator(schema.name, original.allocator_as_of(schema.name, base))
        self.dev_trace = ProvenanceDb(trace.app, trace.code_version, trace.schemas)
        self.dev.trace_sink = self.dev_trace

        record = trace.request(req_id)
        self.machine = _RequestMachine(
            Request(req_id, record.handler, tuple(record.args)), handlers, self.dev_trace)
        self.injected_log: list[tuple[int, Dependency, bool]] = []
        self.reports: list[SlotReport] = []
        self.cursor = 0
        self.status = AT_BREAKPOINT
        self.final_note = ""

    # -- stepping --

    def step(self) -> SlotReport:
        if self.status != AT_BREAKPOINT:
            raise ReplayError(f"session is {self.status}")
        if self.cursor >= len(self.plan.slots):
            # Degenerate plan with zero slots: just finalize.
            self._finalize()
            report = SlotReport(slot=0, txn_id=0, injected=[])
            report.diverged = self.status == DIVERGED
            return report
        slot = self.plan.slots[self.cursor]
        injected = []
        for dep in slot.deps:
            forced = self.dev.apply_write(dep.write, force=True, func_name="inject")
            injected.append((dep, forced))
            self.injected_log.append((slot.index, dep, forced))
        report = SlotReport(slot=slot.index, txn_id=slot.txn_id, injected=injected,
                            original_digest=self.trace.sidecar[slot.txn_id].result_digest)

        if self.machine.done or self.machine.pending is None:
            report.diverged = True
            report.note = "handler produced fewer transactions than the trace"
            self.status = DIVERGED
            self.reports.append(report)
            return report

        committed = self.machine.turn(self.dev)
        if not committed:
            report.diverged = True
            report.note = (f"transaction aborted during replay: "
                           f"{self.machine.outcome.message}")
            self.status = DIVERGED
            self.reports.append(report)
            return report

        original = self.trace.sidecar[slot.txn_id]
        replayed = self.dev_trace.sidecar[self.dev.commit_seq]
        report.replayed_digest = replayed.result_digest
        report.read_set_match = ([p.signature() for p in replayed.reads]
                                 == [p.signature() for p in original.reads])
        report.writes_match = replayed.writes == original.writes
        report.diverged = not (report.digest_match and report.read_set_match
                               and report.writes_match)
        self.reports.append(report)
        self.cursor += 1

        if report.diverged:
            self.status = DIVERGED
        elif self.cursor == len(self.plan.slots):
            self._finalize()
        return report

    def _finalize(self) -> None:
        """After the last slot: run remaining pure logic, compare the outcome."""
        if self.machine.pending is not None:
            self.status = DIVERGED
            self.final_note = "handler yields more transactions than the trace"
            return
        record = self.trace.request(self.plan.req_id)
        outcome = self.machine.outcome
        if outcome is None:
            self.status = DIVERGED
            self.final_note = "handler did not finish"
            return
        if outcome.status != record.status:
            self.status = DIVERGED
            self.final_note = (f"outcome {outcome.status} differs from traced "
                               f"{record.status}")
        elif outcome.status == "Ok" and outcome.result_digest != record.result_digest:
            self.status = DIVERGED
            self.final_note = "return value differs from traced return value"
        else:
            self.status = DONE

    def run_to_end(self) -> list[SlotReport]:
        while self.status == AT_BREAKPOINT:
            self.step()
        return self.reports

    # -- inspection --

    def inspect(self, sql: str) -> ResultSet:
        """Query the dev store's current contents plus the injection log."""
        return execute(parse(sql), self._catalog())

    def _catalog(self) -> dict[str, Relation]:
        cat: dict[str, Relation] = {}
        for name, table in self.dev.tables.items():
            schema = table.schema
            if schema.pk is None:
                columns = (("RowId", "Int"),) + tuple((c.name, c.type) for c in schema.columns)
                rows = [(k,) + r for k, r in sorted(table.live.items())]
            else:
                columns = tuple((c.name, c.type) for c in schema.columns)
                rows = [r for _, r in sorted(table.live.items())]
            cat[name] = Relation(name, columns, rows)
        cat["Injected"] = Relation("Injected", INJECTED_COLUMNS, [
            (slot, dep.source_txn, dep.source_req, dep.write.table, dep.write.kind)
            for slot, dep, _forced in self.injected_log])
        return cat

    def state_json(self) -> dict:
        return {
            "reqId": self.plan.req_id,
            "status": self.status,
            "cursor": self.cursor,
            "slots": len(self.plan.slots),
            "mode": self.plan.mode,
            "finalNote": self.final_note,
            "reports": [r.to_json() for r in self.reports],
            "injected": [dict(d.to_json(), slot=slot, forced=forced)
                         for slot, d, forced in self.injected_log],
        }


def start_session(trace: ProvenanceDb, registry: Registry, req_id: str,
                  mode: str = PRECISE, full_restore: bool = False) -> ReplaySession:
    return ReplaySession(trace, registry, req_id, mode=mode, full_restore=full_restore)
