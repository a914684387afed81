import os

import pytest

os.environ.setdefault("SMALLNESS_THREADS", "1")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240601)


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_log():
    """Collects one summary line per acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[1].split()[0])):
            terminalreporter.write_line(line)
