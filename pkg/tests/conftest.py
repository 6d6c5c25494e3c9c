"""Shared fixtures and the acceptance-summary terminal hook."""

import numpy as np
import pytest

from locmap import model, observations

# populated by tests/test_acceptance.py; printed after the test run so the
# one-line pass/fail verdicts survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, description: str, passed: bool) -> None:
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"ACCEPTANCE {number:2d} {verdict}: {description}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_model():
    return model.ModelConfig()


@pytest.fixture(scope="session")
def short_truth(default_model):
    """A 600-step attractor segment shared by the cheaper filter tests."""
    return model.nature_run(default_model, seed=20260814, spinup_steps=500, n_steps=600)


@pytest.fixture(scope="session")
def direct_operator():
    return observations.ObservationOperator("direct", 40, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(1729)
