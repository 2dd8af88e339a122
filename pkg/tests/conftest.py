import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def fixture_files(tmp_path):
    from helpers import write_fixture_files

    return write_fixture_files(tmp_path / "inputs")


@pytest.fixture(scope="session")
def benchmark():
    from exitdse.fixtures import synthetic_benchmark

    return synthetic_benchmark()


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(passed: bool | None, label: str, detail: str) -> bool | None:
        tag = "INFO" if passed is None else "PASS" if passed else "FAIL"
        line = f"{tag}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
