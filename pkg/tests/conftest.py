import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_datum():
    from randwave.data import random_datum
    return random_datum(3, 4, 3)


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Record one ``criterion N: PASS|FAIL`` line for the terminal summary."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
