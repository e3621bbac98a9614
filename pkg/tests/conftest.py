import numpy as np
import pytest
import scipy.sparse as sp

ACCEPTANCE_LINES: list[str] = []


def random_binary(rng, m, n, density=0.3, ensure_nonempty=True):
    dense = (rng.random((m, n)) < density).astype(float)
    if ensure_nonempty:
        dense[rng.integers(m), rng.integers(n)] = 1.0
    return sp.csr_matrix(dense)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
