import numpy as np
import pytest

from fermikin import CollisionOperator, VelocityGrid, constant_kernel, lebedev26, normalized_kernel

ACCEPTANCE_LINES = []


def smooth_field(rng, nodes):
    """Random smooth admissible field: 1 - exp(-(sum of three Gaussians))."""
    g = np.zeros(len(nodes))
    for _ in range(3):
        c = rng.uniform(-1.5, 1.5, 3)
        s = rng.uniform(0.8, 1.4)
        a = rng.uniform(0.5, 2.0)
        g += a * np.exp(-((nodes - c) ** 2).sum(1) / (2 * s * s))
    return 1.0 - np.exp(-g)


@pytest.fixture(scope="session")
def small_grid():
    return VelocityGrid(3.0, 9)


@pytest.fixture(scope="session")
def small_op(small_grid):
    sph = lebedev26()
    return CollisionOperator(small_grid, normalized_kernel(constant_kernel(1.5), small_grid, sph), sph)


@pytest.fixture(scope="session")
def ref_grid():
    return VelocityGrid(6.0, 21)


@pytest.fixture(scope="session")
def ref_op(ref_grid):
    sph = lebedev26()
    return CollisionOperator(ref_grid, normalized_kernel(constant_kernel(2.0), ref_grid, sph), sph)


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
