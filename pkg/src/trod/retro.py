"""Retroactive programming: re-execute past requests with modified code.

The development store is restored to a historical snapshot, the original
requests are re-executed under a chosen code version, and transaction-level
schedules of the concurrent requests are enumerated so every relevant
interleaving can be tested.

A schedule is a sequence of request ids; the i-th occurrence of an id means
"run that request's next transaction". Enumeration generates order-preserving
merges of the per-request step sequences (depth-first, lexicographic by
request list order), honoring explicit ordering constraints (``after``).
Step counts under new code are discovered by probing each request solo from
the snapshot; when a request finishes earlier than probed, later schedule
entries naming it are skipped and any remaining work continues round-robin.

Pruning keeps one representative per conflict-equivalence class: two schedules
are equivalent when every conflicting step pair occurs in the same relative
order. Conflicts default to table granularity (both touch a table, at least
one writes); key granularity additionally matches write keys against read
predicates. Conflict footprints come from the probe runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .errors import ScheduleInvalid, UnknownReqId
from .provenance import ProvenanceDb, rebuild_store
from .replay import _write_hits_predicate
from .runtime import Registry, Request, RequestOutcome, _RequestMachine
from .store import SnapshotRef, TableSchema

TABLE_GRANULARITY = "table"
KEY_GRANULARITY = "key"

DEFAULT_MAX_SCHEDULES = 1000
_EXPLORATION_CAP = 200_000  # merges examined during pruned enumeration


@dataclass(frozen=True)
class RetroRequest:
    req_id: str
    handler: str
    args: tuple = ()
    after: tuple[str, ...] = ()  # request ids that must finish before this starts

    def to_json(self) -> dict:
        return {"reqId": self.req_id, "handler": self.handler,
                "args": list(self.args), "after": list(self.after)}


@dataclass
class SchedulePolicy:
    prune: bool = False
    granularity: str = TABLE_GRANULARITY
    max_schedules: int = DEFAULT_MAX_SCHEDULES


@dataclass
class StepFootprint:
    """What one probed transaction step read and wrote."""

    reads: list = field(default_factory=list)  # ReadPredicates
    read_tables: set = field(default_factory=set)
    write_keys: set = field(default_factory=set)  # (table, key)
    write_tables: set = field(default_factory=set)
    writes: list = field(default_factory=list)

    @property
    def read_keys(self) -> set:
        return {(p.table, k) for p in self.reads for k in p.matched_keys}


@dataclass
class EnumerationResult:
    schedules: list[tuple[str, ...]]
    pruned: int
    truncated: bool

    @property
    def count(self) -> int:
        return len(self.schedules)


@dataclass
class RetroOutcome:
    schedule: tuple[str, ...]
    outcomes: dict[str, RequestOutcome]
    final_state_digest: str
    trace: Optional[ProvenanceDb] = None
    trace_ref: str = ""

    def class_key(self, order: list[str]) -> tuple:
        parts = []
        for rid in order:
            o = self.outcomes[rid]
            parts.append((rid, o.status, o.message if not o.ok else o.result_display))
        return (tuple(parts), self.final_state_digest)

    def to_json(self) -> dict:
        return {
            "schedule": list(self.schedule),
            "requests": {rid: o.to_json() for rid, o in self.outcomes.items()},
            "finalStateDigest": self.final_state_digest,
            "traceRef": self.trace_ref,
        }


@dataclass
class RetroReport:
    outcomes: list[RetroOutcome]
    classes: list[list[int]]  # outcome indexes grouped by class, in first-seen order
    schedule_count: int
    pruned_count: int
    truncated: bool

    def to_json(self) -> dict:
        return {
            "outcomes": [o.to_json() for o in self.outcomes],
            "classes": [
                {
                    "schedules": [list(self.outcomes[i].schedule) for i in group],
                    "representative": self.outcomes[group[0]].to_json(),
                }
                for group in self.classes
            ],
            "scheduleCount": self.schedule_count,
            "prunedCount": self.pruned_count,
            "truncated": self.truncated,
        }


# ---------------------------------------------------------------------------
# Schedule enumeration
# ---------------------------------------------------------------------------


def multinomial(counts: list[int]) -> int:
    total = sum(counts)
    out = math.factorial(total)
    for c in counts:
        out //= math.factorial(c)
    return out


def order_preserving_merges(reqs: list[tuple[str, int]],
                            after: Optional[dict[str, tuple[str, ...]]] = None,
                            ) -> Iterator[tuple[str, ...]]:
    """All interleavings of the per-request step sequences, DFS-lexicographic.

    ``after`` maps a request id to ids that must fully finish before its first
    step; requests with zero steps count as finished immediately.
    """
    after = after or {}
    order = [rid for rid, _ in reqs]
    counts = {rid: n for rid, n in reqs}
    remaining = dict(counts)
    prefix: list[str] = []

    def finished(rid: str) -> bool:
        return remaining[rid] == 0

    def rec() -> Iterator[tuple[str, ...]]:
        if all(v == 0 for v in remaining.values()):
            yield tuple(prefix)
            return
        for rid in order:
            if remaining[rid] == 0:
                continue
            deps = after.get(rid, ())
            if any(not finished(d) for d in deps):
                continue
            remaining[rid] -= 1
            prefix.append(rid)
            yield from rec()
            prefix.pop()
            remaining[rid] += 1

    return rec()


def _step_instances(schedule: tuple[str, ...]) -> list[tuple[str, int]]:
    counters: dict[str, int] = {}
    out = []
    for rid in schedule:
        counters[rid] = counters.get(rid, 0) + 1
        out.append((rid, counters[rid]))
    return out


def steps_conflict(a: StepFootprint, b: StepFootprint, granularity: str,
                   schemas: dict[str, TableSchema]) -> bool:
    if granularity == TABLE_GRANULARITY:
        return bool(a.write_tables & (b.read_tables | b.write_tables)
                    or b.write_tables & (a.read_tables | a.write_tables))
    # Key granularity: a write touching the other's keys or read predicates.
    if a.write_keys & (b.write_keys | b.read_keys):
        return True
    if b.write_keys & (a.write_keys | a.read_keys):
        return True
    for op in a.writes:
        for p in b.reads:
            if p.table == op.table and _write_hits_predicate(schemas[op.table], op, p):
                return True
    for op in b.writes:
        for p in a.reads:
            if p.table == op.table and _write_hits_predicate(schemas[op.table], op, p):
                return True
    return False


def _conflict_pairs(footprints: dict[str, list[StepFootprint]], granularity: str,
                    schemas: dict[str, TableSchema]) -> set[frozenset]:
    pairs = set()
    rids = list(footprints)
    for i, ra in enumerate(rids):
        for rb in rids[i + 1:]:
            for ia, fa in enumerate(footprints[ra], start=1):
                for ib, fb in enumerate(footprints[rb], start=1):
                    if steps_conflict(fa, fb, granularity, schemas):
                        pairs.add(frozenset(((ra, ia), (rb, ib))))
    return pairs


def _signature(schedule: tuple[str, ...], conflict_pairs: set[frozenset]) -> frozenset:
    steps = _step_instances(schedule)
    ordered = set()
    for p in range(len(steps)):
        for q in range(p + 1, len(steps)):
            if steps[p][0] == steps[q][0]:
                continue
            if frozenset((steps[p], steps[q])) in conflict_pairs:
                ordered.add((steps[p], steps[q]))
    return frozenset(ordered)


def enumerate_schedules(reqs: list[tuple[str, int]], policy: SchedulePolicy,
                        after: Optional[dict[str, tuple[str, ...]]] = None,
                        footprints: Optional[dict[str, list[StepFootprint]]] = None,
                        schemas: Optional[dict[str, TableSchema]] = None,
                        ) -> EnumerationResult:
    """Enumerate merges; with pruning, one representative per conflict class."""
    if policy.max_schedules < 1:
        raise ValueError("max_schedules must be >= 1")
    gen = order_preserving_merges(reqs, after)
    if not policy.prune:
        schedules = []
        truncated = False
        for schedule in gen:
            if len(schedules) == policy.max_schedules:
                truncated = True
                break
            schedules.append(schedule)
        return EnumerationResult(schedules, pruned=0, truncated=truncated)

    if footprints is None:
        raise ValueError("pruned enumeration needs probe footprints")
    pairs = _conflict_pairs(footprints, policy.granularity, schemas or {})
    seen: dict[frozenset, tuple[str, ...]] = {}
    pruned = 0
    truncated = False
    explored = 0
    for schedule in gen:
        explored += 1
        if explored > _EXPLORATION_CAP:
            truncated = True
            break
        sig = _signature(schedule, pairs)
        if sig in seen:
            pruned += 1
            continue
        if len(seen) == policy.max_schedules:
            truncated = True
            break
        seen[sig] = schedule
    return EnumerationResult(list(seen.values()), pruned=pruned, truncated=truncated)


# ---------------------------------------------------------------------------
# Retro execution
# ---------------------------------------------------------------------------


def snapshot_before(trace: ProvenanceDb, req_id: str) -> SnapshotRef:
    """The snapshot taken right before the request's first transaction."""
    txns = trace.txn_ids_for_request(req_id)
    if not txns:
        raise UnknownReqId(req_id)
    return SnapshotRef(txns[0] - 1)


def requests_from_trace(trace: ProvenanceDb, req_ids: list[str],
                        after: Optional[dict[str, tuple[str, ...]]] = None,
                        ) -> list[RetroRequest]:
    after = after or {}
    out = []
    for rid in req_ids:
        record = trace.request(rid)
        if record is None:
            raise UnknownReqId(rid)
        out.append(RetroRequest(rid, record.handler, tuple(record.args),
                                tuple(after.get(rid, ()))))
    return out


def _run_scheduled(dev, dev_trace, requests: list[RetroRequest], handlers,
                   schedule: tuple[str, ...]) -> dict[str, RequestOutcome]:
    by_id = {r.req_id: r for r in requests}
    if len(by_id) != len(requests):
        raise ScheduleInvalid("duplicate request ids")
    for rid in schedule:
        if rid not in by_id:
            raise ScheduleInvalid(f"schedule names unknown request {rid!r}")
    machines = {r.req_id: _RequestMachine(Request(r.req_id, r.handler, r.args),
                                          handlers, dev_trace) for r in requests}

    def deps_done(rid: str) -> bool:
        return all(machines[d].done for d in by_id[rid].after)

    # Early finishes are only known while driving, so ordering constraints are
    # enforced as entries come up rather than in a validation pass.
    for rid in schedule:
        m = machines[rid]
        if m.done:
            continue
        if not deps_done(rid):
            raise ScheduleInvalid(f"{rid} scheduled before its ordering constraints finished")
        m.turn(dev)
    while True:
        live = [r.req_id for r in requests if not machines[r.req_id].done]
        if not live:
            break
        progressed = False
        for rid in live:
            m = machines[rid]
            if not m.done and deps_done(rid):
                m.turn(dev)
                progressed = True
        if not progressed:
            raise ScheduleInvalid("circular ordering constraints")
    return {rid: m.outcome for rid, m in machines.items()}


def retro_run(trace: ProvenanceDb, registry: Registry, snapshot: SnapshotRef,
              requests: list[RetroRequest], code_version: str,
              schedule: tuple[str, ...], trace_ref: str = "") -> RetroOutcome:
    """Execute the requests from the snapshot under one schedule."""
    app = registry.get(trace.app)
    handlers = app.handlers(code_version)
    original = rebuild_store(trace)
    dev = original.branch(snapshot)
    dev_trace = ProvenanceDb(app.name, code_version, trace.schemas)
    dev.trace_sink = dev_trace
    outcomes = _run_scheduled(dev, dev_trace, requests, handlers, schedule)
    return RetroOutcome(schedule=tuple(schedule), outcomes=outcomes,
                        final_state_digest=dev.state_digest(),
                        trace=dev_trace, trace_ref=trace_ref)


def probe_step_counts(trace: ProvenanceDb, registry: Registry, snapshot: SnapshotRef,
                      requests: list[RetroRequest], code_version: str,
                      ) -> tuple[dict[str, int], dict[str, list[StepFootprint]]]:
    """Run each request solo from the snapshot to learn steps and footprints."""
    app = registry.get(trace.app)
    handlers = app.handlers(code_version)
    original = rebuild_store(trace)
    counts: dict[str, int] = {}
    footprints: dict[str, list[StepFootprint]] = {}
    for req in requests:
        dev = original.branch(snapshot)
        dev_trace = ProvenanceDb(app.name, code_version, trace.schemas)
        dev.trace_sink = dev_trace
        machine = _RequestMachine(Request(req.req_id, req.handler, req.args),
                                  handlers, dev_trace)
        while not machine.done:
            machine.turn(dev)
        steps = []
        for txn_id in sorted(dev_trace.sidecar):
            t = dev_trace.sidecar[txn_id]
            fp = StepFootprint(reads=list(t.reads))
            fp.read_tables = {p.table for p in t.reads}
            fp.write_keys = {(w.table, w.key) for w in t.writes}
            fp.write_tables = {w.table for w in t.writes}
            fp.writes = list(t.writes)
            steps.append(fp)
        counts[req.req_id] = len(steps)
        footprints[req.req_id] = steps
    return counts, footprints


def retro_test(trace: ProvenanceDb, registry: Registry, snapshot: SnapshotRef,
               requests: list[RetroRequest], code_version: str,
               policy: Optional[SchedulePolicy] = None) -> RetroReport:
    """Run every enumerated schedule and group outcomes into distinct classes."""
    policy = policy or SchedulePolicy()
    counts, footprints = probe_step_counts(trace, registry, snapshot, requests,
                                           code_version)
    after = {r.req_id: r.after for r in requests if r.after}
    reqs = [(r.req_id, counts[r.req_id]) for r in requests]
    schemas = {s.name: s for s in trace.schemas}
    enum = enumerate_schedules(reqs, policy, after=after, footprints=footprints,
                               schemas=schemas)
    outcomes: list[RetroOutcome] = []
    for i, schedule in enumerate(enum.schedules):
        outcomes.append(retro_run(trace, registry, snapshot, requests, code_version,
                                  schedule, trace_ref=f"retro-{i + 1}"))
    order = [r.req_id for r in requests]
    classes: list[list[int]] = []
    index: dict[tuple, int] = {}
    for i, outcome in enumerate(outcomes):
        key = outcome.class_key(order)
        if key in index:
            classes[index[key]].append(i)
        else:
            index[key] = len(classes)
            classes.append([i])
    return RetroReport(outcomes=outcomes, classes=classes,
                       schedule_count=len(enum.schedules),
                       pruned_count=enum.pruned, truncated=enum.truncated)
