import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfnorm.scenarios import hospital_graph, screening_graph, selection_graph  # noqa: E402


@pytest.fixture
def screening():
    return screening_graph()


@pytest.fixture
def selection():
    return selection_graph()


@pytest.fixture
def hospital_age():
    return hospital_graph(with_age=True)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
