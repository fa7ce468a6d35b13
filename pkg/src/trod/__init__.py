"""trod: a transaction-oriented debugging framework.

An embedded, strictly serializable table store with always-on provenance
tracing, a deterministic request runtime, declarative debugging queries,
faithful replay of past requests, and retroactive re-execution of modified
code under enumerated transaction interleavings.
"""

from .errors import TrodError
from .runtime import AppDef, Registry, Request, RunReport, WorkloadSpec, run_workload
from .store import Column, SnapshotRef, Store, TableSchema

__all__ = [
    "AppDef",
    "Column",
    "Registry",
    "Request",
    "RunReport",
    "SnapshotRef",
    "Store",
    "TableSchema",
    "TrodError",
    "WorkloadSpec",
    "run_workload",
]

__version__ = "0.1.0"
