import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from mrfzoom.sequence import build_schedule

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sched():
    """The 500-point schedule used by every experiment (seed 7)."""
    return build_schedule(500, 7)


@pytest.fixture(scope="session")
def short_sched():
    return build_schedule(64, 3)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        ok, detail = acc.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
