"""Always-on trace sink: Invocations, per-table Events, WorkflowEdges.

The trace is append-only and fully in memory on the hot path (no file I/O in
``record_commit``); ``export`` writes NDJSON files plus a manifest with
checksums, and ``import_dir`` verifies and reloads them. Alongside the
human-queryable tables, a sidecar keyed by txn id keeps the exact captured
read predicates, write ops, and result digests needed for replay, and a
request registry keeps handler names and arguments so past requests can be
re-executed.

Event rows follow the execution-log layout: one row per matched read row (a
single all-null row for a read that matched nothing), one row per write, with
one column per application-table column. The ``Query`` column is a
deterministic human rendering of the operation; it is display-only and never
parsed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .encoding import DIGEST_ALGO, display_value
from .errors import CorruptTrace
from .querylang import Relation
from .store import (
    ReadPredicate,
    Store,
    TableSchema,
    TransactionTrace,
    TxnMeta,
    WriteOp,
)

TRACE_FORMAT = 1

INVOCATIONS_COLUMNS = (
    ("TxnId", "Int"), ("Timestamp", "Int"), ("HandlerName", "Text"),
    ("ReqId", "Text"), ("Metadata", "Text"), ("Injected", "Bool"),
)
EDGES_COLUMNS = (
    ("ReqId", "Text"), ("CallerHandler", "Text"), ("CalleeHandler", "Text"), ("Seq", "Int"),
)


def camel_name(name: str) -> str:
    """forum_sub -> ForumSub, userId -> UserId, audit_log -> AuditLog."""
    parts = [p for p in name.split("_") if p]
    return "".join(p[:1].upper() + p[1:] for p in parts)


def events_table_name(schema: TableSchema) -> str:
    return schema.events_alias or camel_name(schema.name) + "Events"


@dataclass
class RequestRecord:
    req_id: str
    handler: str
    args: list
    status: str = "Ok"  # Ok | HandlerError
    message: str = ""
    result_digest: str = ""
    result_display: str = ""
    index: int = 0

    def to_json(self) -> dict:
        return {
            "reqId": self.req_id, "handler": self.handler, "args": list(self.args),
            "status": self.status, "message": self.message,
            "resultDigest": self.result_digest, "resultDisplay": self.result_display,
            "index": self.index,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RequestRecord":
        return cls(obj["reqId"], obj["handler"], list(obj["args"]), obj["status"],
                   obj["message"], obj["resultDigest"], obj["resultDisplay"], obj["index"])


class ProvenanceDb:
    """Materialized provenance tables for one traced run."""

    def __init__(self, app: str, code_version: str, schemas: list[TableSchema]):
        self.app = app
        self.code_version = code_version
        self.schemas = list(schemas)
        self.invocations: list[tuple] = []
        self.edges: list[tuple] = []
        self.events: dict[str, list[tuple]] = {}
        self.events_columns: dict[str, tuple] = {}
        self.sidecar: dict[int, TransactionTrace] = {}
        self.requests: list[RequestRecord] = []
        self._events_by_table: dict[str, str] = {}
        for schema in self.schemas:
            name = events_table_name(schema)
            if name in self.events or name in ("Invocations", "Executions",
                                               "WorkflowEdges", "Injected"):
                raise ValueError(f"events table name collision: {name}")
            cols = [("TxnId", "Int"), ("Type", "Text"), ("Query", "Text")]
            cols += [(camel_name(c.name), c.type) for c in schema.columns]
            self.events[name] = []
            self.events_columns[name] = tuple(cols)
            self._events_by_table[schema.name] = name

    # -- recording (hot path, in-memory only) --

    def record_commit(self, trace: TransactionTrace) -> None:
        meta = trace.meta
        self.invocations.append((
            trace.txn_id, trace.timestamp_ns, meta.handler_name, meta.req_id,
            f"func:{meta.func_name}", meta.injected,
        ))
        self.sidecar[trace.txn_id] = trace
        for pred in trace.reads:
            if pred.implicit:
                continue  # key lookups made by writes stay in the sidecar
            self._record_read(trace.txn_id, pred)
        for op in trace.writes:
            self._record_write(trace.txn_id, op)

    def _schema_of(self, table: str) -> TableSchema:
        for s in self.schemas:
            if s.name == table:
                return s
        raise CorruptTrace(f"trace references unknown table {table!r}")

    def _record_read(self, txn_id: int, pred: ReadPredicate) -> None:
        name = self._events_by_table[pred.table]
        schema = self._schema_of(pred.table)
        query = render_read(schema, pred)
        if not pred.matched_rows:
            self.events[name].append((txn_id, "Read", query) + (None,) * len(schema.columns))
        else:
            for row in pred.matched_rows:
                self.events[name].append((txn_id, "Read", query) + tuple(row))

    def _record_write(self, txn_id: int, op: WriteOp) -> None:
        name = self._events_by_table[op.table]
        schema = self._schema_of(op.table)
        image = op.after if op.after is not None else op.before
        query = render_write(op)
        self.events[name].append((txn_id, op.kind, query) + tuple(image))

    def record_edge(self, req_id: str, caller: str, callee: str) -> None:
        seq = sum(1 for e in self.edges if e[0] == req_id) + 1
        self.edges.append((req_id, caller, callee, seq))

    def record_request(self, record: RequestRecord) -> None:
        self.requests.append(record)

    # -- lookups --

    def request(self, req_id: str) -> Optional[RequestRecord]:
        for r in self.requests:
            if r.req_id == req_id:
                return r
        return None

    def txn_ids_for_request(self, req_id: str) -> list[int]:
        return [row[0] for row in self.invocations if row[3] == req_id and not row[5]]

    def timestamp_of(self, txn_id: int) -> int:
        for row in self.invocations:
            if row[0] == txn_id:
                return row[1]
        raise KeyError(txn_id)

    def max_txn_id(self) -> int:
        return max(self.sidecar, default=0)

    # -- query surface --

    def catalog(self) -> dict[str, Relation]:
        out = {"Invocations": Relation("Invocations", INVOCATIONS_COLUMNS, self.invocations),
               "WorkflowEdges": Relation("WorkflowEdges", EDGES_COLUMNS, self.edges)}
        for name, rows in self.events.items():
            out[name] = Relation(name, self.events_columns[name], rows)
        return out

    def aliases(self) -> dict[str, str]:
        return {"Executions": "Invocations"}

    def validate(self) -> None:
        """Join-safety check: every event row's TxnId exists in Invocations."""
        known = {row[0] for row in self.invocations}
        for name, rows in self.events.items():
            for row in rows:
                if row[0] not in known:
                    raise CorruptTrace(f"{name} row references unknown txn {row[0]}")

    # -- persistence --

    def export(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files: dict[str, dict] = {}

        def write_ndjson(fname: str, objs: list[dict]) -> None:
            payload = "".join(json.dumps(o, separators=(",", ":")) + "\n" for o in objs)
            raw = payload.encode("utf-8")
            (directory / fname).write_bytes(raw)
            files[fname] = {"sha256": hashlib.sha256(raw).hexdigest(), "rows": len(objs)}

        write_ndjson("invocations.ndjson", [
            dict(zip([c for c, _ in INVOCATIONS_COLUMNS], row)) for row in self.invocations])
        for name, rows in self.events.items():
            cols = [c for c, _ in self.events_columns[name]]
            write_ndjson(f"{name}.ndjson", [dict(zip(cols, row)) for row in rows])
        write_ndjson("workflow_edges.ndjson", [
            dict(zip([c for c, _ in EDGES_COLUMNS], row)) for row in self.edges])
        write_ndjson("txn_sidecar.ndjson", [
            {
                "txnId": t.txn_id, "timestamp": t.timestamp_ns,
                "handler": t.meta.handler_name, "func": t.meta.func_name,
                "reqId": t.meta.req_id, "injected": t.meta.injected,
                "resultDigest": t.result_digest,
                "reads": [p.to_json() for p in t.reads],
                "writes": [w.to_json() for w in t.writes],
            }
            for _, t in sorted(self.sidecar.items())
        ])
        write_ndjson("requests.ndjson", [r.to_json() for r in self.requests])
        manifest = {
            "format": TRACE_FORMAT,
            "app": self.app,
            "codeVersion": self.code_version,
            "digestAlgo": DIGEST_ALGO,
            "schemas": [s.to_json() for s in self.schemas],
            "files": files,
        }
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def import_dir(cls, directory) -> "ProvenanceDb":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptTrace(f"manifest unreadable: {e}") from None
        if manifest.get("format") != TRACE_FORMAT:
            raise CorruptTrace(f"unsupported trace format {manifest.get('format')!r}")
        if manifest.get("digestAlgo") != DIGEST_ALGO:
            raise CorruptTrace(f"digest algorithm mismatch: {manifest.get('digestAlgo')!r}")
        schemas = [TableSchema.from_json(s) for s in manifest["schemas"]]
        db = cls(manifest["app"], manifest["codeVersion"], schemas)

        def read_ndjson(fname: str) -> list[dict]:
            meta = manifest["files"].get(fname)
            if meta is None:
                raise CorruptTrace(f"manifest missing entry for {fname}")
            try:
                raw = (directory / fname).read_bytes()
            except OSError as e:
                raise CorruptTrace(str(e)) from None
            if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
                raise CorruptTrace(f"checksum mismatch in {fname}")
            try:
                objs = [json.loads(line) for line in raw.decode("utf-8").splitlines() if line]
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CorruptTrace(f"bad NDJSON in {fname}: {e}") from None
            if len(objs) != meta["rows"]:
                raise CorruptTrace(f"row count mismatch in {fname}")
            return objs

        for obj in read_ndjson("invocations.ndjson"):
            db.invocations.append(tuple(obj[c] for c, _ in INVOCATIONS_COLUMNS))
        for name in db.events:
            cols = [c for c, _ in db.events_columns[name]]
            for obj in read_ndjson(f"{name}.ndjson"):
                db.events[name].append(tuple(obj[c] for c in cols))
        for obj in read_ndjson("workflow_edges.ndjson"):
            db.edges.append(tuple(obj[c] for c, _ in EDGES_COLUMNS))
        for obj in read_ndjson("txn_sidecar.ndjson"):
            trace = TransactionTrace(
                txn_id=obj["txnId"], timestamp_ns=obj["timestamp"],
                meta=TxnMeta(obj["handler"], obj["func"], obj["reqId"], obj["injected"]),
                reads=[ReadPredicate.from_json(p) for p in obj["reads"]],
                writes=[WriteOp.from_json(w) for w in obj["writes"]],
                result_digest=obj["resultDigest"],
            )
            db.sidecar[trace.txn_id] = trace
        for obj in read_ndjson("requests.ndjson"):
            db.requests.append(RequestRecord.from_json(obj))
        db.validate()
        return db


# ---------------------------------------------------------------------------
# Query-text rendering (display only, Table-2 prose style)
# ---------------------------------------------------------------------------


def _vals(values) -> str:
    rendered = [display_value(v) for v in values]
    if len(rendered) == 1:
        return rendered[0]
    return "(" + ", ".join(rendered) + ")"


def render_read(schema: TableSchema, pred: ReadPredicate) -> str:
    if pred.key_filter is not None:
        return f"Lookup key {_vals(pred.key_filter if isinstance(pred.key_filter, tuple) else (pred.key_filter,))}"
    if not pred.eq:
        return "Select all rows"
    ordered = [(c.name, pred.eq[c.name]) for c in schema.columns if c.name in pred.eq]
    eq_vals = _vals([v for _, v in ordered])
    if len(ordered) == len(schema.columns):
        return f"Check if {_vals([v for _, v in ordered])} exists"
    others = [camel_name(c.name) for c in schema.columns if c.name not in pred.eq]
    return f"Select {', '.join(others)} for {eq_vals}"


def render_write(op: WriteOp) -> str:
    image = op.after if op.after is not None else op.before
    return f"{op.kind} {_vals(image)}"


# ---------------------------------------------------------------------------
# Store reconstruction from a trace (CDC log replay)
# ---------------------------------------------------------------------------


def rebuild_store(db: ProvenanceDb) -> Store:
    """Replay all captured WriteOps, in commit order, onto an empty store.

    The result has the same state *and* the same version history (commit seq
    numbering) as the traced store, so as-of reads against history work.
    """
    store = Store()
    for schema in db.schemas:
        store.create_table(schema)
    for txn_id in range(1, db.max_txn_id() + 1):
        trace = db.sidecar.get(txn_id)
        if trace is None:
            raise CorruptTrace(f"sidecar missing txn {txn_id}")
        store._commit([], trace.writes, None, trace.meta)
    return store
