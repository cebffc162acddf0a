import time

import numpy as np
import pytest

from qclscape.ansatz import build_ansatz
from qclscape.harness import SweepGrid, generate_dataset, split, sweep

ACCEPTANCE = []


def record_criterion(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data():
    return split(generate_dataset(0), 0.8, 0)


@pytest.fixture(scope="session")
def small_data():
    ds = generate_dataset(0, n_points=40)
    return split(ds, 0.8, 0)


@pytest.fixture(scope="session")
def d1_cycle():
    return build_ansatz("cycle", 1)


@pytest.fixture(scope="session")
def d1_sweep():
    """The 108-run (cycle, D=1) sweep at seed 0, with its wall time."""
    grid = SweepGrid(layouts=("cycle",), depths=(1,))
    start = time.perf_counter()
    records, failures = sweep(grid)
    return records, failures, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
