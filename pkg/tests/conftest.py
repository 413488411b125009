import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "edgekit",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("edgekit")


def dense_of(op):
    """Independent dense assembly: apply the operator to every unit vector."""
    return np.column_stack([op.apply(e) for e in np.eye(op.ncols)])


def gradient_dense(nv, nh):
    """Forward differences written out entry by entry (column-stacked pixels)."""
    rows = []
    for j in range(nh):
        for i in range(nv - 1):
            r = np.zeros(nv * nh)
            r[i + 1 + j * nv] = 1.0
            r[i + j * nv] = -1.0
            rows.append(r)
    for j in range(nh - 1):
        for i in range(nv):
            r = np.zeros(nv * nh)
            r[i + (j + 1) * nv] = 1.0
            r[i + j * nv] = -1.0
            rows.append(r)
    return np.array(rows)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines from test_acceptance.py, echoed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
