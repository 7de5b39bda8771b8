import numpy as np
import pytest

from bayes_surrogate.core import PriorSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_prior():
    return PriorSpec.uniform([(0.0, 15.0), (0.0, 15.0)])


# One line per acceptance criterion, repeated in the terminal summary so the
# verdicts are visible even when test output is captured.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
