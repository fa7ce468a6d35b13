"""Provenance tables, name mapping, rendering, and trace persistence."""

from __future__ import annotations

import pytest

from trod.apps import FORUM_QUERY, user_profiles
from trod.errors import CorruptTrace
from trod.provenance import (
    ProvenanceDb,
    camel_name,
    events_table_name,
    rebuild_store,
)
from trod.querylang import run_query
from trod.runtime import run_workload
from trod.store import Column, TableSchema


def test_events_table_name_mapping():
    assert events_table_name(TableSchema(
        "forum_sub", (Column("userId", "Text"), Column("forum", "Text")),
        pk=None, events_alias="ForumEvents")) == "ForumEvents"
    assert events_table_name(TableSchema(
        "profiles", (Column("userName", "Text"),), pk=("userName",),
        events_alias="ProfileEvents")) == "ProfileEvents"
    assert events_table_name(TableSchema(
        "audit_log", (Column("entry", "Text"),), pk=None)) == "AuditLogEvents"


def test_camel_name():
    assert camel_name("userId") == "UserId"
    assert camel_name("updatedBy") == "UpdatedBy"
    assert camel_name("audit_log") == "AuditLog"
    assert camel_name("forum") == "Forum"


def test_invocations_match_execution_log_shape(moodle_racy_report):
    inv = moodle_racy_report.trace.invocations
    assert [(r[0], r[2], r[3], r[4]) for r in inv] == [
        (1, "subscribeUser", "R1", "func:isSubscribed"),
        (2, "subscribeUser", "R2", "func:isSubscribed"),
        (3, "subscribeUser", "R2", "func:DB.insert"),
        (4, "subscribeUser", "R1", "func:DB.insert"),
        (5, "fetchSubscribers", "R3", "func:DB.executeQuery"),
    ]
    timestamps = [r[1] for r in inv]
    assert timestamps == sorted(timestamps)
    assert len(set(timestamps)) == len(timestamps)


def test_data_events_match_operations_log_shape(moodle_racy_report):
    events = moodle_racy_report.trace.events["ForumEvents"]
    assert events == [
        (1, "Read", "Check if (U1, F2) exists", None, None),
        (2, "Read", "Check if (U1, F2) exists", None, None),
        (3, "Insert", "Insert (U1, F2)", "U1", "F2"),
        (4, "Insert", "Insert (U1, F2)", "U1", "F2"),
        (5, "Read", "Select UserId for F2", "U1", "F2"),
        (5, "Read", "Select UserId for F2", "U1", "F2"),
    ]


def test_update_event_carries_after_image():
    case = user_profiles()
    rep = run_workload(case.app, case.workloads["audit"])
    updates = [row for row in rep.trace.events["ProfileEvents"] if row[1] == "Update"]
    assert [(r[3], r[5]) for r in updates] == [("alice", "alice"), ("alice", "mallory")]


def test_join_safety(moodle_racy_report):
    moodle_racy_report.trace.validate()


def test_export_import_round_trip_is_byte_identical(tmp_path, moodle_racy_report):
    trace = moodle_racy_report.trace
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    trace.export(dir_a)
    again = ProvenanceDb.import_dir(dir_a)
    again.export(dir_b)
    files_a = sorted(p.name for p in dir_a.iterdir())
    files_b = sorted(p.name for p in dir_b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name


def test_truncated_file_is_corrupt(tmp_path, moodle_racy_report):
    trace = moodle_racy_report.trace
    trace.export(tmp_path)
    target = tmp_path / "invocations.ndjson"
    target.write_bytes(target.read_bytes()[:-20])
    with pytest.raises(CorruptTrace):
        ProvenanceDb.import_dir(tmp_path)


def test_missing_file_is_corrupt(tmp_path, moodle_racy_report):
    moodle_racy_report.trace.export(tmp_path)
    (tmp_path / "txn_sidecar.ndjson").unlink()
    with pytest.raises(CorruptTrace):
        ProvenanceDb.import_dir(tmp_path)


def test_queries_survive_round_trip(tmp_path, moodle_racy_report):
    trace = moodle_racy_report.trace
    live = run_query(FORUM_QUERY, trace.catalog(), trace.aliases())
    trace.export(tmp_path)
    loaded = ProvenanceDb.import_dir(tmp_path)
    again = run_query(FORUM_QUERY, loaded.catalog(), loaded.aliases())
    assert live.columns == again.columns
    assert live.rows == again.rows
    assert len(live.rows) == 2


def test_rebuild_store_reaches_traced_final_state(moodle_racy_report):
    rebuilt = rebuild_store(moodle_racy_report.trace)
    assert rebuilt.state_digest() == moodle_racy_report.store.state_digest()
    assert rebuilt.commit_seq == moodle_racy_report.store.commit_seq


def test_executions_alias_resolves(moodle_racy_report):
    trace = moodle_racy_report.trace
    rs = run_query("SELECT TxnId FROM Executions", trace.catalog(), trace.aliases())
    assert [r[0] for r in rs.rows] == [1, 2, 3, 4, 5]
