import numpy as np
import pytest

from mfmfe.mesh import Mesh, structured_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bilinear_mesh(n=3, amp=0.08, seed=0):
    """n x n mesh of the unit square with randomly moved interior vertices."""
    mesh = structured_mesh(n, 2)
    r = np.random.default_rng(seed)
    v = mesh.vertices
    inner = np.all((v > 1e-12) & (v < 1 - 1e-12), axis=1)
    v[inner] += r.uniform(-amp, amp, size=(inner.sum(), 2)) / n
    return mesh


def trilinear_mesh(n=2, amp=0.08, seed=0):
    """n^3 cube mesh with moved interior vertices; all faces of the
    boundary stay planar."""
    mesh = structured_mesh(n, 3)
    r = np.random.default_rng(seed)
    v = mesh.vertices
    inner = np.all((v > 1e-12) & (v < 1 - 1e-12), axis=1)
    v[inner] += r.uniform(-amp, amp, size=(inner.sum(), 3)) / n
    return mesh


def two_cell_mesh():
    v = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1.0]])
    return Mesh(v, np.array([[0, 1, 4, 3], [1, 2, 5, 4]]))


def extruded_mesh(n=2, layers=2, amp=0.08, seed=0):
    """Distorted quad mesh extruded in z: hexes are non-affine but every
    face is planar."""
    base = bilinear_mesh(n, amp, seed)
    nv = base.nverts
    z = np.linspace(0, 1, layers + 1)
    verts = np.concatenate([np.column_stack([base.vertices, np.full(nv, zl)]) for zl in z])
    cells = [np.concatenate([c + l * nv, c + (l + 1) * nv]) for l in range(layers) for c in base.cells]
    return Mesh(verts, np.array(cells))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
