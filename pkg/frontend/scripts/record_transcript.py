#!/usr/bin/env python3
"""Record the UI's API transcript against the real engine.

Produces two fixtures:

- ``fixtures/trace/``: the exported demo trace the transcript was recorded
  against (timestamps and digests are baked in, so replaying is exact);
- ``fixtures/transcript.json``: every request the UI flows issue, with the
  full expected JSON responses.

The vitest suite replays this transcript against a live ``trod serve``
process and requires byte-identical answers.
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from trod.api import ApiState, build_api
from trod.apps import FORUM_QUERY, builtin_registry, moodle_forum
from trod.provenance import ProvenanceDb
from trod.runtime import run_workload

HERE = Path(__file__).resolve().parent.parent
TRACE_DIR = HERE / "fixtures" / "trace"
TRANSCRIPT = HERE / "fixtures" / "transcript.json"


def main() -> None:
    case = moodle_forum()
    report = run_workload(case.app, case.workloads["racy"])
    report.trace.export(TRACE_DIR)

    state = ApiState(registry=builtin_registry(),
                     trace=ProvenanceDb.import_dir(TRACE_DIR))
    client = TestClient(build_api(state))
    entries = []

    def record(name, method, path, body=None):
        if method == "GET":
            res = client.get(path)
        else:
            res = client.post(path, json=body)
        entry = {"name": name, "method": method, "path": path,
                 "status": res.status_code, "response": res.json()}
        if body is not None:
            entry["body"] = body
        entries.append(entry)
        return res.json()

    # Trace browser flow.
    record("summary", "GET", "/traces/summary")
    record("invocations", "GET", "/traces/invocations?limit=500&offset=0")
    record("forum-events", "GET", "/traces/events/ForumEvents?limit=500&offset=0")

    # Query console flow.
    record("debug-query", "POST", "/query", {"sql": FORUM_QUERY})

    # Replay flow: session ids are deterministic (rs-1 for the first session).
    started = record("replay-start", "POST", "/replay",
                     {"reqId": "R1", "opts": {"mode": "precise"}})
    sid = started["sessionId"]
    record("replay-step-1", "POST", f"/replay/{sid}/step")
    record("replay-step-2", "POST", f"/replay/{sid}/step")
    record("replay-state", "GET", f"/replay/{sid}/state")
    record("replay-inspect", "POST", f"/replay/{sid}/inspect",
           {"sql": "SELECT SourceReqId FROM Injected"})

    # Retro flow: validate the fixed code over the pre-R1 snapshot.
    record("retro-v2", "POST", "/retro", {
        "snapshotBefore": "R1",
        "requests": ["R1", "R2", "R3"],
        "after": {"R3": ["R1", "R2"]},
        "codeVersion": "v2",
        "policy": {"prune": False, "maxSchedules": 1000},
    })

    record("apps", "GET", "/apps")

    TRANSCRIPT.write_text(json.dumps(entries, indent=1) + "\n")
    print(f"recorded {len(entries)} entries -> {TRANSCRIPT}")
    print(f"trace fixture -> {TRACE_DIR}")


if __name__ == "__main__":
    main()
