import numpy as np
import pytest

from flcc.data import bundled_paths, load_idx


@pytest.fixture(scope="session")
def mnist_train():
    return load_idx(*bundled_paths("train"))


@pytest.fixture(scope="session")
def mnist_heldout():
    return load_idx(*bundled_paths("t10k"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines collected by tests/test_acceptance.py, repeated at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
