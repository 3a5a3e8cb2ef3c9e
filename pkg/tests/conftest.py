import numpy as np
import pytest

from vortctl.actuators import build_rectangle_family, build_triangle_family
from vortctl.fem import FEMSpace
from vortctl.mesh import DomainSpec, build_mesh
from vortctl.sim import DEFAULT_TRIANGLE


@pytest.fixture(scope="session")
def square_mesh():
    return build_mesh(DomainSpec.rectangle(1.0, 1.0))


@pytest.fixture(scope="session")
def square_space(square_mesh):
    return FEMSpace(square_mesh)


@pytest.fixture(scope="session")
def triangle_mesh_r1():
    """Refinement level 1 of the support-aligned mesh for the two-level triangle family."""
    return build_triangle_family(DEFAULT_TRIANGLE, 2, level=1).mesh


@pytest.fixture(scope="session")
def families():
    out = {}
    for M in (1, 2):
        out[("rectangle", M)] = build_rectangle_family(1.0, 1.0, 0.3, M)
        out[("triangle", M)] = build_triangle_family(DEFAULT_TRIANGLE, M)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        terminalreporter.write_line(verdicts[number])
