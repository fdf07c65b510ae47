import functools

import numpy as np
import pytest

from eddyscope.forward import plates
from eddyscope.solver.shapes import ShapeSpec
from eddyscope.solver.vie import cpt_sweep
from eddyscope.tensor_core import PhysicalConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def physics():
    return PhysicalConfig()


@pytest.fixture(scope="session")
def array():
    return plates()


@functools.lru_cache(maxsize=None)
def solver_cpts(kind: str, h: float, omegas: tuple = (133.5,), scale: float = 1.0,
                params: tuple = ()):
    """Cached solver tensors, shared by every test module."""
    shape = ShapeSpec(kind, dict(params))
    return tuple(cpt_sweep(shape, h, PhysicalConfig(), list(omegas), scale=scale))


ACCEPTANCE = []


def report(criterion, passed: bool, detail: str) -> bool:
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
