import numpy as np
import pytest

from hdindex.core import Dataset

# Running example: eight 4-d objects O1..O8 (ids 0..7) and the query Q.
TABLE1 = np.array([
    [0.20, 0.74, 0.68, 0.73],
    [0.84, 0.34, 0.49, 0.81],
    [0.97, 0.64, 0.32, 0.93],
    [0.42, 0.86, 0.12, 0.82],
    [0.62, 0.09, 0.56, 0.07],
    [0.84, 0.59, 0.49, 0.73],
    [0.05, 0.43, 0.52, 0.82],
    [0.40, 0.24, 0.10, 0.64],
])
TABLE1_Q = np.array([0.18, 0.87, 0.76, 0.23])


def obj(i):
    """Dataset id of the running-example object O_i."""
    return i - 1


@pytest.fixture
def table1():
    return Dataset(TABLE1, domain=(0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_knn(coords, ids, q, k):
    """Independent scan oracle: plain Python sort over (distance, id)."""
    rows = []
    for i, c in zip(ids, coords):
        rows.append((float(np.sqrt(((np.asarray(c, float) - q) ** 2).sum())), int(i)))
    rows.sort()
    return [i for _, i in rows[:k]]


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one summary line; all lines are echoed at the end of the run."""
    def emit(tag: str, ok, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}.get(ok, str(ok))
        line = f"[{status}] {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
