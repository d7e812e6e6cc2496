import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ddagossip.polyhedron import triangle_polyhedron  # noqa: E402
from ddagossip.problem import QuadraticEstimationProblem  # noqa: E402


@pytest.fixture
def triangle():
    return triangle_polyhedron()


@pytest.fixture
def unit_problem():
    """m = 1, R = I, unit noise variance, x* = (1, 2)."""
    return QuadraticEstimationProblem(x_star=[1.0, 2.0], R_u=np.eye(2)[None], sigma_v2=[1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report_line(request):
    """Record one PASS/FAIL line; they are printed together at the end of the session."""
    def record(number, ok, text):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {text}"
        request.config.acceptance_lines.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
