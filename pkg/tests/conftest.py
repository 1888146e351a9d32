from __future__ import annotations

import pytest

from dptune.dataset import generate_dataset

ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """64 items of 256 B, seed 3."""
    return generate_dataset(tmp_path_factory.mktemp("small"), 64, 256, label_count=4, seed=3)


@pytest.fixture
def acceptance():
    def record(criterion: str, passed: bool, detail: str = "", status: str | None = None):
        ACCEPTANCE_RESULTS.append((criterion, status or ("PASS" if passed else "FAIL"), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status:<4} {criterion}  {detail}")
