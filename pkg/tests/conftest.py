from pathlib import Path

import numpy as np
import pytest

from dynpmnn.data import load_csv, sample_csv_path

ROOT = Path(__file__).resolve().parents[1]
FULL_CSV = ROOT / "data" / "california_housing.csv"

# acceptance verdicts, printed in the terminal summary
CRITERIA = []


def record_criterion(number, title, passed, detail=""):
    CRITERIA.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(CRITERIA, key=lambda c: c[0]):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {title}" + (f" -- {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sample_table():
    return load_csv(sample_csv_path())


@pytest.fixture(scope="session")
def full_table():
    if not FULL_CSV.exists():
        pytest.skip(f"full California Housing CSV not found at {FULL_CSV}")
    return load_csv(FULL_CSV)
