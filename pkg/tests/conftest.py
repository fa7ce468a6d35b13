import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracle/randgen helpers

from trod.apps import builtin_registry, moodle_forum
from trod.runtime import run_workload


@pytest.fixture(scope="session")
def registry():
    return builtin_registry()


@pytest.fixture()
def moodle_racy_report():
    case = moodle_forum()
    return run_workload(case.app, case.workloads["racy"])
