import sys
from pathlib import Path

import pytest

from cfaudit.tabular import LOAN_SCHEMA
from cfaudit.ranking import literal_space

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))

# Worked loan example: x and five counterfactuals (Income, Gender, Employment, Age).
X_LOAN = (25000, "F", "Temporary", 30)
E_LOAN = [
    (28000, "M", "Temporary", 30),
    (30000, "F", "Permanent", 35),
    (26000, "F", "Permanent", 31),
    (35000, "M", "Temporary", 32),
    (30000, "M", "Permanent", 35),
]


@pytest.fixture
def loan_x():
    return LOAN_SCHEMA.instance(*X_LOAN)


@pytest.fixture
def loan_es():
    return [LOAN_SCHEMA.instance(*e) for e in E_LOAN]


@pytest.fixture
def loan_space(loan_x, loan_es):
    return literal_space(loan_x, loan_es)


# PASS/FAIL lines from the acceptance run, printed after the test session
RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
