import pytest

from coexqkd.pipeline import default_calibration

# criterion lines gathered by test_acceptance.py, echoed at the end of the run
CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def calibration():
    return default_calibration()
