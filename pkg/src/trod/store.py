"""Embedded, strictly serializable, versioned table store.

Transactions execute one at a time under the engine lock, so the commit
sequence number *is* the serialization order. Every committed write is kept as
a (commit_seq, row) version chain entry, which gives as-of reads and row-level
restore without full-copy snapshots.

Read visibility: a transaction body observes the committed state as of the
transaction's start; its own staged writes become visible only at commit.
This makes read capture exact by construction: every recorded predicate can be
re-evaluated against ``read_as_of(txn_id - 1)``.

Capture:

- every scan is recorded as a :class:`ReadPredicate` (equality conjunction
  plus the matched keys, possibly none: a negative read);
- key-addressed updates/deletes and primary-key uniqueness checks record an
  *implicit* key-filter predicate (kept in the sidecar for replay dependency
  analysis, not surfaced as event rows);
- every applied write is recorded as a :class:`WriteOp` with before/after
  images (change data capture).
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .encoding import COLUMN_TYPES, canonical_bytes, check_column_value, digest
from .errors import (
    CheckpointCorrupt,
    ConstraintViolation,
    DuplicateTable,
    StaleBeforeImage,
    UnknownColumn,
    UnknownTable,
)

SYNTHETIC = "SYNTHETIC"

INSERT = "Insert"
UPDATE = "Update"
DELETE = "Delete"

INJECTED_HANDLER = "<injected>"

CHECKPOINT_MAGIC = b"TRODSTOR"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Schema and record types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    name: str
    type: str
    nullable: bool = False

    def __post_init__(self):
        if self.type not in COLUMN_TYPES:
            raise ValueError(f"bad column type {self.type!r} for {self.name!r}")


@dataclass(frozen=True)
class TableSchema:
    """Table definition. ``pk=None`` means a synthetic engine-assigned int key.

    ``events_alias`` optionally overrides the derived provenance events table
    name for this table.
    """

    name: str
    columns: tuple[Column, ...]
    pk: Optional[tuple[str, ...]] = None
    events_alias: Optional[str] = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in {self.name!r}")
        if self.pk is not None:
            if not self.pk:
                raise ValueError(f"empty primary key in {self.name!r}")
            by_name = {c.name: c for c in self.columns}
            for col in self.pk:
                if col not in by_name:
                    raise ValueError(f"pk column {col!r} not in {self.name!r}")
                if by_name[col].nullable:
                    raise ValueError(f"pk column {col!r} must be non-nullable")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "columns": [[c.name, c.type, c.nullable] for c in self.columns],
            "pk": list(self.pk) if self.pk is not None else None,
            "eventsAlias": self.events_alias,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TableSchema":
        return cls(
            name=obj["name"],
            columns=tuple(Column(n, t, bool(nl)) for n, t, nl in obj["columns"]),
            pk=tuple(obj["pk"]) if obj.get("pk") is not None else None,
            events_alias=obj.get("eventsAlias"),
        )


@dataclass(frozen=True)
class SnapshotRef:
    """Reading as-of ``as_of`` reflects exactly commits with seq <= as_of."""

    as_of: int


@dataclass(frozen=True)
class RowView:
    """A matched row handed to transaction bodies: key plus column values."""

    key: Any
    values: dict

    def canonical_value(self):
        return [_key_canonical(self.key), self.values]

    def __getitem__(self, column: str):
        return self.values[column]


@dataclass
class ReadPredicate:
    """One captured read: equality conjunction (or key filter) plus matches.

    ``matched_keys`` may be empty: a negative read, which is what makes
    phantom dependencies detectable later. ``matched_rows`` carries the row
    images for event rendering and is not part of the semantic signature.
    ``implicit`` marks key lookups performed by write operations.
    """

    table: str
    eq: dict = field(default_factory=dict)
    key_filter: Any = None
    matched_keys: list = field(default_factory=list)
    matched_rows: list = field(default_factory=list)
    implicit: bool = False

    def signature(self) -> tuple:
        eq_items = tuple(sorted(self.eq.items()))
        return (self.table, eq_items, _key_canonical_tuple(self.key_filter),
                tuple(_key_canonical_tuple(k) for k in self.matched_keys))

    def to_json(self) -> dict:
        return {
            "table": self.table,
            "eq": dict(self.eq),
            "keyFilter": _key_json(self.key_filter),
            "matchedKeys": [_key_json(k) for k in self.matched_keys],
            "implicit": self.implicit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReadPredicate":
        return cls(
            table=obj["table"],
            eq=dict(obj["eq"]),
            key_filter=_key_from_json(obj.get("keyFilter")),
            matched_keys=[_key_from_json(k) for k in obj["matchedKeys"]],
            implicit=bool(obj.get("implicit", False)),
        )


@dataclass
class WriteOp:
    """Change-data-capture record: before/after row images for one key."""

    table: str
    kind: str
    key: Any
    before: Optional[tuple] = None
    after: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == INSERT and not (self.before is None and self.after is not None):
            raise ValueError("Insert requires no before image and an after image")
        if self.kind == DELETE and not (self.before is not None and self.after is None):
            raise ValueError("Delete requires a before image and no after image")
        if self.kind == UPDATE and not (self.before is not None and self.after is not None):
            raise ValueError("Update requires both images")

    def to_json(self) -> dict:
        return {
            "table": self.table,
            "kind": self.kind,
            "key": _key_json(self.key),
            "before": list(self.before) if self.before is not None else None,
            "after": list(self.after) if self.after is not None else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WriteOp":
        return cls(
            table=obj["table"],
            kind=obj["kind"],
            key=_key_from_json(obj["key"]),
            before=tuple(obj["before"]) if obj.get("before") is not None else None,
            after=tuple(obj["after"]) if obj.get("after") is not None else None,
        )


@dataclass(frozen=True)
class TxnMeta:
    handler_name: str
    func_name: str
    req_id: str
    injected: bool = False


@dataclass
class TransactionTrace:
    """Everything captured for one commit; handed to the trace sink."""

    txn_id: int
    timestamp_ns: int
    meta: TxnMeta
    reads: list[ReadPredicate]
    writes: list[WriteOp]
    result_digest: str


@dataclass
class TxnResult:
    txn_id: int
    result: Any
    result_digest: str
    reads: list[ReadPredicate]
    writes: list[WriteOp]


def _key_json(key):
    if isinstance(key, tuple):
        return list(key)
    return key


def _key_from_json(key):
    if isinstance(key, list):
        return tuple(key)
    return key


def _key_canonical(key):
    return list(key) if isinstance(key, tuple) else key


def _key_canonical_tuple(key):
    return tuple(key) if isinstance(key, list) else key


# ---------------------------------------------------------------------------
# Table state
# ---------------------------------------------------------------------------


class _Table:
    __slots__ = ("schema", "col_index", "chains", "live", "next_row_id", "alloc_history")

    def __init__(self, schema: TableSchema):
        self.schema = schema
        self.col_index = {c.name: i for i, c in enumerate(schema.columns)}
        # key -> [(commit_seq, row-or-None), ...] in commit order
        self.chains: dict[Any, list[tuple[int, Optional[tuple]]]] = {}
        self.live: dict[Any, tuple] = {}
        self.next_row_id = 0
        # (commit_seq, next_row_id after that commit), for as-of allocator state
        self.alloc_history: list[tuple[int, int]] = []

    def version_at(self, key, as_of: int) -> Optional[tuple]:
        chain = self.chains.get(key)
        if not chain:
            return None
        row = None
        for seq, value in chain:
            if seq > as_of:
                break
            row = value
        return row

    def allocator_at(self, as_of: int) -> int:
        value = 0
        for seq, nxt in self.alloc_history:
            if seq > as_of:
                break
            value = nxt
        return value

    def apply(self, seq: int, op: WriteOp) -> None:
        self.chains.setdefault(op.key, []).append((seq, op.after))
        if op.after is None:
            self.live.pop(op.key, None)
        else:
            self.live[op.key] = op.after
        if isinstance(op.key, int) and op.key > self.next_row_id:
            self.next_row_id = op.key

    def record_alloc(self, seq: int) -> None:
        if self.alloc_history and self.alloc_history[-1][0] == seq:
            self.alloc_history[-1] = (seq, self.next_row_id)
        else:
            self.alloc_history.append((seq, self.next_row_id))


# ---------------------------------------------------------------------------
# Transaction context (the only API handler bodies may use)
# ---------------------------------------------------------------------------


class TxnContext:
    """Typed access handed to a transaction body.

    Reads observe the committed state at transaction start. Writes are staged
    and applied atomically at commit. ``update``/``delete`` of an absent key
    are no-ops returning False (the existence check is itself captured as an
    implicit read).
    """

    def __init__(self, store: "Store"):
        self._store = store
        self._reads: list[ReadPredicate] = []
        self._writes: list[WriteOp] = []
        self._staged: dict[tuple[str, Any], Optional[tuple]] = {}
        self._staged_alloc: dict[str, int] = {}

    # -- reads --

    def scan_eq(self, table: str, eq: Optional[dict] = None) -> list[RowView]:
        """Rows whose columns equal every entry of ``eq`` (empty = full scan)."""
        t = self._store._table(table)
        eq = dict(eq or {})
        checks = []
        for col, val in eq.items():
            idx = t.col_index.get(col)
            if idx is None:
                raise UnknownColumn(f"{table}.{col}")
            if val is None:
                raise ConstraintViolation(f"null predicate value for {table}.{col}")
            check_column_value(val, t.schema.columns[idx].type, False, f"{table}.{col}")
            checks.append((idx, val))
        # Tight loops: scans dominate the hot path, so small conjunctions are
        # special-cased instead of paying a generator per row.
        if not checks:
            matched = list(t.live.items())
        elif len(checks) == 1:
            i0, v0 = checks[0]
            matched = [(k, r) for k, r in t.live.items() if r[i0] == v0]
        elif len(checks) == 2:
            (i0, v0), (i1, v1) = checks
            matched = [(k, r) for k, r in t.live.items() if r[i0] == v0 and r[i1] == v1]
        else:
            matched = [(k, r) for k, r in t.live.items()
                       if all(r[i] == v for i, v in checks)]
        matched.sort(key=lambda kv: kv[0])
        self._reads.append(ReadPredicate(
            table=table, eq=eq,
            matched_keys=[k for k, _ in matched],
            matched_rows=[r for _, r in matched],
        ))
        return [RowView(k, dict(zip(t.schema.column_names, r))) for k, r in matched]

    # -- writes --

    def insert(self, table: str, values: dict) -> Any:
        """Insert a full row; returns the assigned key."""
        t = self._store._table(table)
        row = self._build_row(t, values, base=None)
        if t.schema.pk is None:
            alloc = self._staged_alloc.get(table, t.next_row_id)
            key = alloc + 1
            self._staged_alloc[table] = key
        else:
            key = tuple(row[t.col_index[c]] for c in t.schema.pk)
            existing = self._lookup(t, table, key, record=True)
            if existing is not None:
                raise ConstraintViolation(f"duplicate primary key {key!r} in {table}")
        op = WriteOp(table=table, kind=INSERT, key=key, before=None, after=row)
        self._writes.append(op)
        self._staged[(table, key)] = row
        return key

    def update(self, table: str, key: Any, changes: dict) -> bool:
        """Overwrite columns of the row at ``key``; False if no such row."""
        t = self._store._table(table)
        before = self._lookup(t, table, key, record=True)
        if before is None:
            return False
        row = self._build_row(t, changes, base=before)
        op = WriteOp(table=table, kind=UPDATE, key=key, before=before, after=row)
        self._writes.append(op)
        self._staged[(table, key)] = row
        return True

    def delete(self, table: str, key: Any) -> bool:
        """Remove the row at ``key``; False if no such row."""
        t = self._store._table(table)
        before = self._lookup(t, table, key, record=True)
        if before is None:
            return False
        op = WriteOp(table=table, kind=DELETE, key=key, before=before, after=None)
        self._writes.append(op)
        self._staged[(table, key)] = None
        return True

    # -- internals --

    def _lookup(self, t: _Table, table: str, key: Any, record: bool) -> Optional[tuple]:
        staged_key = (table, key)
        if staged_key in self._staged:
            # Own staged state: no foreign write can intervene, no capture needed.
            return self._staged[staged_key]
        row = t.live.get(key)
        if record:
            self._reads.append(ReadPredicate(
                table=table, key_filter=key,
                matched_keys=[key] if row is not None else [],
                matched_rows=[row] if row is not None else [],
                implicit=True,
            ))
        return row

    def _build_row(self, t: _Table, values: dict, base: Optional[tuple]) -> tuple:
        for col in values:
            if col not in t.col_index:
                raise UnknownColumn(f"{t.schema.name}.{col}")
        out = []
        for i, col in enumerate(t.schema.columns):
            if col.name in values:
                v = values[col.name]
            elif base is not None:
                v = base[i]
            else:
                v = None
            try:
                check_column_value(v, col.type, col.nullable, f"{t.schema.name}.{col.name}")
            except ValueError as e:
                raise ConstraintViolation(str(e)) from None
            out.append(v)
        return tuple(out)


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


class Store:
    """The application database plus its full version history.

    ``trace_sink``, when given, must expose ``record_commit(trace)``; it is
    invoked once per commit, in commit order, including injected commits.
    """

    def __init__(self, trace_sink=None, clock: Callable[[], int] = time.time_ns):
        self.tables: dict[str, _Table] = {}
        self.commit_seq = 0
        self.trace_sink = trace_sink
        self._clock = clock
        self._last_ts = 0
        self._lock = threading.RLock()

    # -- schema --

    def create_table(self, schema: TableSchema) -> None:
        with self._lock:
            if schema.name in self.tables:
                raise DuplicateTable(schema.name)
            self.tables[schema.name] = _Table(schema)

    def schemas(self) -> list[TableSchema]:
        return [t.schema for t in self.tables.values()]

    def _table(self, name: str) -> _Table:
        t = self.tables.get(name)
        if t is None:
            raise UnknownTable(name)
        return t

    # -- transactions --

    def txn_run(self, body: Callable[[TxnContext], Any], meta: TxnMeta) -> TxnResult:
        """Run ``body`` against a transaction context and commit atomically.

        Any exception from the body aborts: no state change and no commit seq
        is consumed.
        """
        with self._lock:
            ctx = TxnContext(self)
            result = body(ctx)
            return self._commit(ctx._reads, ctx._writes, result, meta)

    def _commit(self, reads, writes, result, meta: TxnMeta) -> TxnResult:
        seq = self.commit_seq + 1
        alloc_touched = set()
        for op in writes:
            t = self._table(op.table)
            t.apply(seq, op)
            if isinstance(op.key, int):
                alloc_touched.add(op.table)
        for name in alloc_touched:
            self.tables[name].record_alloc(seq)
        self.commit_seq = seq
        result_digest = digest(result)
        if self.trace_sink is not None:
            ts = max(self._clock(), self._last_ts + 1)
            self._last_ts = ts
            self.trace_sink.record_commit(TransactionTrace(
                txn_id=seq, timestamp_ns=ts, meta=meta,
                reads=list(reads), writes=list(writes),
                result_digest=result_digest,
            ))
        return TxnResult(seq, result, result_digest, list(reads), list(writes))

    # -- snapshots and time travel --

    def snapshot(self) -> SnapshotRef:
        return SnapshotRef(as_of=self.commit_seq)

    def read_as_of(self, table: str, eq: Optional[dict], s: SnapshotRef) -> list[RowView]:
        """Rows matching ``eq`` in the version visible at ``s``. Pure."""
        if s.as_of > self.commit_seq:
            raise ValueError(f"snapshot {s.as_of} is in the future (max {self.commit_seq})")
        t = self._table(table)
        eq = dict(eq or {})
        checks = []
        for col, val in eq.items():
            idx = t.col_index.get(col)
            if idx is None:
                raise UnknownColumn(f"{table}.{col}")
            checks.append((idx, val))
        out = []
        for key in t.chains:
            row = t.version_at(key, s.as_of)
            if row is not None and all(row[i] == v for i, v in checks):
                out.append((key, row))
        out.sort(key=lambda kv: kv[0])
        return [RowView(k, dict(zip(t.schema.column_names, r))) for k, r in out]

    def row_as_of(self, table: str, key: Any, s: SnapshotRef) -> Optional[tuple]:
        return self._table(table).version_at(key, s.as_of)

    def allocator_as_of(self, table: str, s: SnapshotRef) -> int:
        return self._table(table).allocator_at(s.as_of)

    # -- injected mutation (replay machinery) --

    def apply_write(self, op: WriteOp, force: bool = False,
                    func_name: str = "apply_write") -> bool:
        """Apply a captured write as an injected commit.

        Returns True when the current row state did not match the op's
        before-image (only possible in force mode; otherwise
        :class:`StaleBeforeImage` is raised).
        """
        with self._lock:
            t = self._table(op.table)
            if op.after is not None:
                for i, col in enumerate(t.schema.columns):
                    try:
                        check_column_value(op.after[i], col.type, col.nullable,
                                           f"{op.table}.{col.name}")
                    except ValueError as e:
                        raise ConstraintViolation(str(e)) from None
            current = t.live.get(op.key)
            forced = current != op.before
            if forced and not force:
                raise StaleBeforeImage(
                    f"{op.table}[{op.key!r}]: expected {op.before!r}, found {current!r}")
            meta = TxnMeta(INJECTED_HANDLER, func_name, "", injected=True)
            self._commit([], [op], None, meta)
            return forced

    def restore_rows(self, s: SnapshotRef, refs: Iterable[tuple[str, Any]]) -> None:
        """Reset each referenced row to its as-of-``s`` version (one commit)."""
        with self._lock:
            ops = []
            for table, key in refs:
                t = self._table(table)
                target = t.version_at(key, s.as_of)
                current = t.live.get(key)
                if target == current:
                    continue
                if current is None:
                    ops.append(WriteOp(table, INSERT, key, None, target))
                elif target is None:
                    ops.append(WriteOp(table, DELETE, key, current, None))
                else:
                    ops.append(WriteOp(table, UPDATE, key, current, target))
            if ops:
                meta = TxnMeta(INJECTED_HANDLER, "restore_rows", "", injected=True)
                self._commit([], ops, None, meta)

    # -- whole-store helpers --

    def dump(self, table: str) -> list[tuple[Any, tuple]]:
        t = self._table(table)
        return sorted(t.live.items(), key=lambda kv: kv[0])

    def state_digest(self) -> str:
        """Digest of the canonical sorted dump of all tables."""
        payload = []
        for name in sorted(self.tables):
            rows = [[_key_canonical(k), list(r)] for k, r in self.dump(name)]
            payload.append([name, rows])
        return digest(payload)

    def branch(self, s: SnapshotRef) -> "Store":
        """Fresh store seeded with this store's state as of ``s`` (no history)."""
        dev = Store()
        for t in self.tables.values():
            dev.create_table(t.schema)
            nt = dev.tables[t.schema.name]
            for key in t.chains:
                row = t.version_at(key, s.as_of)
                if row is not None:
                    nt.chains[key] = [(0, row)]
                    nt.live[key] = row
            nt.next_row_id = t.allocator_at(s.as_of)
        return dev

    def empty_like(self) -> "Store":
        dev = Store()
        for t in self.tables.values():
            dev.create_table(t.schema)
        return dev

    def seed_row(self, table: str, key: Any, row: Optional[tuple]) -> None:
        """Install a base version (seq 0) for one row; replay restore path."""
        t = self._table(table)
        if row is None:
            return
        t.chains[key] = [(0, row)]
        t.live[key] = row
        if isinstance(key, int) and key > t.next_row_id:
            t.next_row_id = key

    def set_allocator(self, table: str, value: int) -> None:
        t = self._table(table)
        if value > t.next_row_id:
            t.next_row_id = value

    # -- durable checkpoint --

    def save_checkpoint(self, path) -> None:
        """Header, schemas, then WriteOps in commit order (length-prefixed)."""
        records = []
        for t in self.tables.values():
            for key, chain in t.chains.items():
                prev = None
                for seq, row in chain:
                    if seq == 0:
                        prev = row
                        continue
                    if prev is None:
                        kind = INSERT
                    elif row is None:
                        kind = DELETE
                    else:
                        kind = UPDATE
                    records.append((seq, t.schema.name, kind, key, prev, row))
                    prev = row
        records.sort(key=lambda r: r[0])
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack(">H", CHECKPOINT_VERSION))
            schemas = [s.to_json() for s in self.schemas()]
            blob = canonical_bytes([[s["name"], s["columns"], s["pk"], s["eventsAlias"]]
                                    for s in schemas])
            f.write(struct.pack(">I", len(blob)))
            f.write(blob)
            for seq, table, kind, key, before, after in records:
                rec = canonical_bytes([
                    seq, table, kind, _key_canonical(key),
                    list(before) if before is not None else None,
                    list(after) if after is not None else None,
                ])
                f.write(struct.pack(">I", len(rec)))
                f.write(rec)

    @classmethod
    def load_checkpoint(cls, path) -> "Store":
        from .encoding import canonical_decode
        with open(path, "rb") as f:
            data = f.read()
        if data[:8] != CHECKPOINT_MAGIC:
            raise CheckpointCorrupt("bad magic")
        (version,) = struct.unpack(">H", data[8:10])
        if version != CHECKPOINT_VERSION:
            raise CheckpointCorrupt(f"unsupported version {version}")
        pos = 10
        try:
            (n,) = struct.unpack(">I", data[pos:pos + 4])
            pos += 4
            schema_list = canonical_decode(data[pos:pos + n])
            pos += n
            store = cls()
            for name, columns, pk, alias in schema_list:
                store.create_table(TableSchema(
                    name=name,
                    columns=tuple(Column(c, t, bool(nl)) for c, t, nl in columns),
                    pk=tuple(pk) if pk is not None else None,
                    events_alias=alias,
                ))
            max_seq = 0
            while pos < len(data):
                (n,) = struct.unpack(">I", data[pos:pos + 4])
                pos += 4
                seq, table, kind, key, before, after = canonical_decode(data[pos:pos + n])
                pos += n
                key = tuple(key) if isinstance(key, list) else key
                t = store._table(table)
                t.apply(seq, WriteOp(
                    table, kind, key,
                    tuple(before) if before is not None else None,
                    tuple(after) if after is not None else None,
                ))
                if isinstance(key, int):
                    t.record_alloc(seq)
                max_seq = max(max_seq, seq)
            store.commit_seq = max_seq
            return store
        except (struct.error, ValueError, IndexError, KeyError) as e:
            raise CheckpointCorrupt(str(e)) from None
