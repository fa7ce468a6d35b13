"""Replay: plans, dependency injection, divergence detection, faithfulness."""

from __future__ import annotations

import random

import pytest

from trod.apps import moodle_forum
from trod.errors import MissingCodeVersion, ReplayError, UnknownReqId
from trod.replay import CONSERVATIVE, DIVERGED, DONE, ReplaySession, plan_replay
from trod.runtime import AppDef, Registry, run_workload

from randgen import random_app, random_workload


def test_plan_slots_and_windows(moodle_racy_report):
    plan = plan_replay(moodle_racy_report.trace, "R1")
    assert [(s.txn_id, s.window) for s in plan.slots] == [(1, (0, 1)), (4, (1, 4))]
    assert plan.slots[0].deps == []
    assert [(d.source_txn, d.source_req) for d in plan.slots[1].deps] == [(3, "R2")]


def test_plan_single_txn_no_concurrency(moodle_racy_report):
    plan = plan_replay(moodle_racy_report.trace, "R3")
    assert len(plan.slots) == 1
    assert plan.slots[0].deps == []  # everything relevant committed before its window


def test_plan_unknown_request(moodle_racy_report):
    with pytest.raises(UnknownReqId):
        plan_replay(moodle_racy_report.trace, "R99")


def test_conservative_deps_superset_of_precise(moodle_racy_report):
    precise = plan_replay(moodle_racy_report.trace, "R1")
    conservative = plan_replay(moodle_racy_report.trace, "R1", mode=CONSERVATIVE)
    for ps, cs in zip(precise.slots, conservative.slots):
        pset = {(d.source_txn, d.write.table, d.write.kind, d.write.key)
                for d in ps.deps}
        cset = {(d.source_txn, d.write.table, d.write.kind, d.write.key)
                for d in cs.deps}
        assert pset <= cset


def test_partial_restore_starts_empty(moodle_racy_report, registry):
    session = ReplaySession(moodle_racy_report.trace, registry, "R1")
    assert session.dev.dump("forum_sub") == []


def test_replay_r1_injects_r2_and_matches(moodle_racy_report, registry):
    session = ReplaySession(moodle_racy_report.trace, registry, "R1")
    first = session.step()
    assert first.injected == [] and not first.diverged
    second = session.step()
    assert [(d.source_txn, d.source_req) for d, _f in second.injected] == [(3, "R2")]
    assert second.read_set_match and second.writes_match and second.digest_match
    assert session.status == DONE
    # Replayed write landed on the original key: the duplicate is visible.
    assert session.dev.dump("forum_sub") == [(1, ("U1", "F2")), (2, ("U1", "F2"))]


def test_partial_and_full_restore_agree(moodle_racy_report, registry):
    partial = ReplaySession(moodle_racy_report.trace, registry, "R1")
    full = ReplaySession(moodle_racy_report.trace, registry, "R1", full_restore=True)
    pr = [r.to_json() for r in partial.run_to_end()]
    fr = [r.to_json() for r in full.run_to_end()]
    assert pr == fr
    assert partial.status == full.status == DONE


def test_conservative_mode_same_reports(moodle_racy_report, registry):
    precise = ReplaySession(moodle_racy_report.trace, registry, "R1")
    conservative = ReplaySession(moodle_racy_report.trace, registry, "R1",
                                 mode=CONSERVATIVE)
    p = precise.run_to_end()
    c = conservative.run_to_end()
    assert [r.replayed_digest for r in p] == [r.replayed_digest for r in c]
    assert precise.status == conservative.status == DONE


def test_replay_of_errored_request_reproduces_error(moodle_racy_report, registry):
    session = ReplaySession(moodle_racy_report.trace, registry, "R3")
    session.run_to_end()
    assert session.status == DONE
    assert session.machine.outcome.status == "HandlerError"
    assert session.machine.outcome.message == "Duplicated values in column userId"


def test_replay_against_other_code_version_diverges(moodle_racy_report):
    # Register an app whose v1 is actually the fixed single-transaction code.
    case = moodle_forum()
    twisted = Registry()
    twisted.register(AppDef(case.app.name, case.app.schemas,
                            {"v1": case.app.versions["v2"]}))
    session = ReplaySession(moodle_racy_report.trace, twisted, "R1")
    report = session.step()
    assert report.slot == 1
    assert report.diverged
    assert session.status == DIVERGED


def test_missing_code_version(moodle_racy_report):
    case = moodle_forum()
    registry = Registry()
    registry.register(AppDef(case.app.name, case.app.schemas,
                             {"v9": case.app.versions["v1"]}))
    with pytest.raises(MissingCodeVersion):
        ReplaySession(moodle_racy_report.trace, registry, "R1")


def test_inspect_before_and_after_step(moodle_racy_report, registry):
    session = ReplaySession(moodle_racy_report.trace, registry, "R1")
    assert session.inspect("SELECT SourceReqId FROM Injected").rows == []
    session.step()
    session.step()
    rows = session.inspect("SELECT SourceReqId FROM Injected").rows
    assert rows == [("R2",)]
    total_deps = sum(len(s.deps) for s in session.plan.slots)
    assert len(session.injected_log) == total_deps
    forum = session.inspect("SELECT RowId, userId FROM forum_sub").rows
    assert forum == [(1, "U1"), (2, "U1")]


def test_step_after_done_is_an_error(moodle_racy_report, registry):
    session = ReplaySession(moodle_racy_report.trace, registry, "R1")
    session.run_to_end()
    with pytest.raises(ReplayError):
        session.step()


def test_replay_never_touches_original(moodle_racy_report, registry):
    trace = moodle_racy_report.trace
    before_inv = list(trace.invocations)
    before_digest = moodle_racy_report.store.state_digest()
    session = ReplaySession(trace, registry, "R1")
    session.run_to_end()
    assert trace.invocations == before_inv
    assert moodle_racy_report.store.state_digest() == before_digest
    # Replay traced into its own namespace instead.
    assert session.dev_trace.invocations


# -- randomized faithfulness -------------------------------------------------


def _assert_faithful_replay(report, registry_like, n_checked):
    trace = report.trace
    for record in trace.requests:
        if not trace.txn_ids_for_request(record.req_id):
            continue
        session = ReplaySession(trace, registry_like, record.req_id)
        reports = session.run_to_end()
        assert session.status == DONE, (
            f"{record.req_id} diverged: {session.final_note} "
            f"{[r.to_json() for r in reports]}")
        for r in reports:
            assert r.read_set_match and r.digest_match and r.writes_match
        n_checked.append(record.req_id)


@pytest.mark.parametrize("seed", range(12))
def test_randomized_workloads_replay_faithfully(seed):
    rng = random.Random(9000 + seed)
    app = random_app(rng, n_handlers=3, max_steps=4)
    registry = Registry()
    registry.register(app)
    workload = random_workload(rng, app, n_requests=rng.randrange(2, 6))
    report = run_workload(app, workload)
    checked: list[str] = []
    _assert_faithful_replay(report, registry, checked)
    assert checked  # at least one request replayed
