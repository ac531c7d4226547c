import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from oracles import invariant_violations  # noqa: E402

from hdde.diffusion import DiffusionModel  # noqa: E402
from hdde.trackdata import synthesize_tracks  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Every model that passes the package's own invariant check anywhere in the
# suite is re-checked here by an independent implementation.
MODEL_AUDIT = {"checked": 0, "violations": []}
ACCEPTANCE = []
_skip_audit = {"on": False}


@pytest.fixture(scope="session", autouse=True)
def _audit_models():
    original = DiffusionModel.check_invariants

    def audited(self):
        original(self)
        if not _skip_audit["on"]:
            MODEL_AUDIT["checked"] += 1
            bad = invariant_violations(self)
            if bad:
                MODEL_AUDIT["violations"].append(bad)

    DiffusionModel.check_invariants = audited
    yield
    DiffusionModel.check_invariants = original


@pytest.fixture(autouse=True)
def _corrupt_marker(request):
    _skip_audit["on"] = request.node.get_closest_marker("corrupt_model") is not None
    yield
    _skip_audit["on"] = False


def pytest_collection_modifyitems(config, items):
    # acceptance tests run last so the suite-wide model audit is complete
    items.sort(key=lambda it: it.get_closest_marker("acceptance") is not None)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {name}: {detail}")


@pytest.fixture
def record():
    """Log an acceptance outcome for the summary, then assert it."""

    def _record(num, name, ok, detail):
        ACCEPTANCE.append((num, name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {num}. {name}: {detail}")
        assert ok, detail

    return _record


@pytest.fixture(scope="session")
def tracks60():
    return synthesize_tracks(60, seed=11)


@pytest.fixture(scope="session")
def tracks100():
    return synthesize_tracks(100, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
