import pytest

from abci.aggregate import make_line
from abci.model import DesignParams

# the nine-row extract of the public click log, columns UserId, NbDisplays, NbClicks
KDD_SAMPLE = """UserId\tNbDisplays\tNbClicks
10000244\t1\t0
10000148\t3\t1
10000089\t1\t0
1000026\t6\t0
1000002\t1\t0
1000002\t1\t0
10000315\t1\t0
10000925\t3\t2
10000185\t1\t0
"""


@pytest.fixture
def kdd_sample_path(tmp_path):
    path = tmp_path / "sample.tsv"
    path.write_text(KDD_SAMPLE, encoding="utf-8")
    return path


@pytest.fixture
def half_design():
    return DesignParams(0.5, 0.5)


@pytest.fixture
def two_user_lines():
    return [make_line("u1", "A", 2, 4), make_line("u2", "B", 1, 2)]


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: prints a PASS/FAIL line, then asserts."""

    def check(passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {request.node.name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
