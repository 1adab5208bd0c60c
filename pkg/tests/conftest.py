import numpy as np
import pytest

from aetpipe.fem import NodalField
from aetpipe.mesh import TriMesh, build_disk_mesh, refine_nested


@pytest.fixture(scope="session")
def disk_h02():
    return build_disk_mesh(0.2, 1.0, 0.0)


@pytest.fixture(scope="session")
def disk_h01():
    return build_disk_mesh(0.1, 1.0, 0.0)


@pytest.fixture(scope="session")
def disk_h005():
    return build_disk_mesh(0.05, 1.0, 0.0)


@pytest.fixture(scope="session")
def nested_h01(disk_h01):
    return refine_nested(disk_h01)


@pytest.fixture(scope="session")
def desk_eighth():
    return build_disk_mesh(0.06, 0.125, 3 * np.pi / 8)


def unit_right_triangle() -> TriMesh:
    """Single reference triangle (0,0),(1,0),(0,1); not a disk mesh, used
    only for local assembly checks."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    triangles = np.array([[0, 1, 2]])
    bedges = np.array([[0, 1], [1, 2], [2, 0]])
    bt = np.zeros(3)
    flags = np.zeros(3, dtype=bool)
    mask = np.zeros(3, dtype=bool)
    return TriMesh(vertices, triangles, bedges, bt, flags, mask)


def field(mesh, values) -> NodalField:
    return NodalField(mesh, np.asarray(values, dtype=float))


def interp(mesh, fn) -> NodalField:
    return NodalField(mesh, fn(mesh.vertices[:, 0], mesh.vertices[:, 1]))
