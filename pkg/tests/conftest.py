import numpy as np
import pytest

from tdcomp import pipeline


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def example():
    """Loader for the bundled example problems."""
    return pipeline.bundled_problem


ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record one summary line; all lines are printed at the end of the run."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
