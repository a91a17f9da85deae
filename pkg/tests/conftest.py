import logging

import numpy as np
import pytest

from kidney_mdp import solve_value_iteration
from kidney_mdp.experiments import build_experiment_model, run_comparison


@pytest.fixture(autouse=True)
def _quiet_pmf_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="kidney_mdp.experiments")


@pytest.fixture(scope="session")
def exp1_spec():
    return build_experiment_model("exp1")


@pytest.fixture(scope="session")
def exp2_spec():
    return build_experiment_model("exp2")


@pytest.fixture(scope="session")
def exp1_solution(exp1_spec):
    return solve_value_iteration(exp1_spec, tol=1e-10)


@pytest.fixture(scope="session")
def exp2_solution(exp2_spec):
    return solve_value_iteration(exp2_spec, tol=1e-10)


@pytest.fixture(scope="session")
def exp1_comparison():
    return run_comparison("exp1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record and print the one-line verdict of an acceptance criterion."""

    def emit(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
