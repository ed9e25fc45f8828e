import numpy as np
import pytest

from coupled_waves.discretization import Grid, assemble_laplacian
from coupled_waves.dynamics import Problem, StateVector, SystemCoefficients
from coupled_waves.geometry import Domain, Region, build_cutoff, constant_field

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def unit_interval():
    return Domain.interval(1.0)


def coupled_coefficients(grid, a=1.0, b_box=(0.4, 0.7), c_box=(0.3, 0.8), b_plateau=1.0, c_plateau=4.0, delta=0.1):
    dom = grid.domain
    b = build_cutoff(Region(dom, [[list(b_box)]]), b_plateau, delta, grid)
    c = build_cutoff(Region(dom, [[list(c_box)]]), c_plateau, delta, grid)
    return SystemCoefficients(a, b, c)


def undamped_coefficients(grid, a=1.0):
    return SystemCoefficients(a, constant_field(0.0, grid), constant_field(0.0, grid))


def first_mode_state(grid, u=1.0, v=0.0, y=1.0, z=0.0):
    s = np.sin(np.pi * grid.nodes[:, 0])
    return StateVector(u * s, v * s, y * s, z * s)


@pytest.fixture
def grid60(unit_interval):
    return Grid.uniform(unit_interval, 60)


@pytest.fixture
def problem60(grid60):
    return Problem(grid60, coupled_coefficients(grid60), 3.0)


@pytest.fixture
def lap60(grid60):
    return assemble_laplacian(grid60)
