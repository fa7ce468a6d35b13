"""Tracing-overhead benchmark.

Drives the forum subscribe handler with distinct users so requests never
conflict; that isolates tracing cost from contention. Each request runs to
completion on its own timing window (two transactions: check + insert).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .apps import moodle_forum
from .provenance import ProvenanceDb
from .runtime import Request, _RequestMachine
from .store import Store


@dataclass
class BenchResult:
    requests: int
    traced: bool
    p50_us: float
    p95_us: float
    total_s: float

    def to_json(self) -> dict:
        return {"requests": self.requests, "trace": "on" if self.traced else "off",
                "p50Us": round(self.p50_us, 3), "p95Us": round(self.p95_us, 3),
                "totalSeconds": round(self.total_s, 3)}


def _percentile(sorted_values: list[int], q: float) -> float:
    if not sorted_values:
        return 0.0
    idx = min(len(sorted_values) - 1, int(q * len(sorted_values)))
    return sorted_values[idx] / 1000.0  # ns -> us


def run_bench(n_requests: int, traced: bool) -> BenchResult:
    case = moodle_forum()
    handlers = case.app.versions["v1"]
    prov = ProvenanceDb(case.app.name, "v1", case.app.schemas) if traced else None
    store = Store(trace_sink=prov)
    for schema in case.app.schemas:
        store.create_table(schema)
    latencies = []
    started = time.perf_counter()
    for i in range(n_requests):
        req = Request(f"B{i}", "subscribeUser", (f"U{i}", "F1"))
        t0 = time.perf_counter_ns()
        machine = _RequestMachine(req, handlers, prov)
        while not machine.done:
            machine.turn(store)
        latencies.append(time.perf_counter_ns() - t0)
    total = time.perf_counter() - started
    latencies.sort()
    return BenchResult(n_requests, traced, _percentile(latencies, 0.50),
                       _percentile(latencies, 0.95), total)


def bench_overhead(n_requests: int) -> dict:
    """Trace-off and trace-on runs plus the per-request overhead between them."""
    off = run_bench(n_requests, traced=False)
    on = run_bench(n_requests, traced=True)
    overhead_us = on.p50_us - off.p50_us
    relative = overhead_us / off.p50_us if off.p50_us > 0 else 0.0
    return {
        "requests": n_requests,
        "traceOff": off.to_json(),
        "traceOn": on.to_json(),
        "p50OverheadUs": round(overhead_us, 3),
        "relativeOverhead": round(relative, 4),
    }
