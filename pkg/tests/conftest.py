import sys

import numpy as np
import pytest

from hho_brinkman.mesh import generate_cartesian, generate_triangular, hexagonal_mesh
from hho_brinkman.system import sigma


def _meshes():
    return {
        "tri2": generate_triangular(2),
        "tri4": generate_triangular(4),
        "cart3": generate_cartesian(3),
        "hexa0": hexagonal_mesh(0),
        "hexa1": hexagonal_mesh(1),
    }


MESHES = _meshes()


@pytest.fixture(params=sorted(MESHES), ids=sorted(MESHES))
def mesh(request):
    return MESHES[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_field(pts):
    """A smooth non-polynomial vector field used across several tests."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([np.sin(np.pi * x) * np.cos(1.3 * y) + x * y, np.exp(0.5 * x - y) + y**3], axis=-1)


FD_STEP = 1e-6


def fd_divergence_flux(case, pts, step=FD_STEP):
    out = np.zeros_like(pts)
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        sp = sigma(case.grad_u(pts + e), case.mu, case.r)
        sm = sigma(case.grad_u(pts - e), case.mu, case.r)
        out += (sp[:, :, j] - sm[:, :, j]) / (2 * step)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.summary_lines():
            terminalreporter.write_line(line)
