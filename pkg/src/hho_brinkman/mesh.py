"""Polygonal meshes of the unit square.

A mesh is stored as vertex coordinates plus counter-clockwise vertex loops
for each cell.  Faces (edges) and the cell/face incidence are derived at
construction time, together with all per-cell geometric quantities needed by
the discretization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh is topologically or geometrically invalid."""


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed."""


@dataclass(frozen=True)
class CellGeometry:
    h: float
    area: float
    centroid: np.ndarray
    face_lengths: np.ndarray  # (nf,)
    face_midpoints: np.ndarray  # (nf, 2)
    normals: np.ndarray  # (nf, 2) unit, outward
    face_distances: np.ndarray  # (nf,) centroid to face line
    vertices: np.ndarray  # (nv, 2) counter-clockwise


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper intersection test for two segments that share no endpoint."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    if n < 3:
        return False
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return False
    return True


class Mesh:
    """Immutable polygonal mesh with derived faces and geometry.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : sequence of sequences of int
        Counter-clockwise vertex loops, 0-based.
    """

    faces: np.ndarray  # (nf, 2) vertex pairs, sorted
    face_cells: np.ndarray  # (nf, 2), -1 if absent
    boundary_faces: np.ndarray  # (nf,) bool

    def __init__(self, vertices, cells, validate: bool = True):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.cells = [np.asarray(c, dtype=int) for c in cells]
        self._build_faces()
        self.geometry = [self._compute_geometry(i) for i in range(self.n_cells)]
        if validate:
            self.validate()

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def h(self) -> float:
        return max(g.h for g in self.geometry)

    def _build_faces(self) -> None:
        index: dict[tuple[int, int], int] = {}
        faces: list[tuple[int, int]] = []
        owners: list[list[int]] = []
        self.cell_faces, self.cell_face_signs = [], []
        for c, loop in enumerate(self.cells):
            if len(loop) < 3:
                raise MeshError(f"cell {c} has fewer than 3 vertices")
            if np.any(loop < 0) or np.any(loop >= len(self.vertices)):
                raise MeshError(f"cell {c} references a vertex out of range")
            cf, cs = [], []
            for a, b in zip(loop, np.roll(loop, -1)):
                a, b = int(a), int(b)
                if a == b:
                    raise MeshError(f"cell {c} has a repeated consecutive vertex {a}")
                key = (min(a, b), max(a, b))
                f = index.get(key)
                if f is None:
                    f = index[key] = len(faces)
                    faces.append(key)
                    owners.append([])
                owners[f].append(c)
                cf.append(f)
                cs.append(1 if key == (a, b) else -1)
            self.cell_faces.append(np.array(cf, dtype=int))
            self.cell_face_signs.append(np.array(cs, dtype=int))
        self.faces = np.array(faces, dtype=int).reshape(-1, 2)
        self.face_cells = -np.ones((len(faces), 2), dtype=int)
        for f, own in enumerate(owners):
            if len(own) > 2:
                raise MeshError(f"face {f} is shared by more than two cells: {own}")
            self.face_cells[f, : len(own)] = own
        self.boundary_faces = self.face_cells[:, 1] < 0

    def _compute_geometry(self, c: int) -> CellGeometry:
        pts = self.vertices[self.cells[c]]
        # shift to a local origin to avoid cancellation in the shoelace sums
        area = _signed_area(pts - pts[0])
        if area <= 0:
            raise MeshError(f"cell {c} has non-positive signed area {area:.3e} (clockwise loop?)")
        xt = pts[0] + _centroid(pts - pts[0])
        diff = pts[:, None, :] - pts[None, :, :]
        h = float(np.sqrt((diff**2).sum(-1)).max())
        nxt = np.roll(pts, -1, axis=0)
        tang = nxt - pts
        lengths = np.linalg.norm(tang, axis=1)
        normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
        mids = 0.5 * (pts + nxt)
        dist = np.einsum("ij,ij->i", mids - xt, normals)
        return CellGeometry(h, area, xt, lengths, mids, normals, dist, pts)

    def cell_geometry(self, c: int) -> CellGeometry:
        if not 0 <= c < self.n_cells:
            raise IndexError(f"cell id {c} out of range [0, {self.n_cells})")
        return self.geometry[c]

    def face_points(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.faces[f]
        return self.vertices[a], self.vertices[b]

    def validate(self, tol: float = 1e-12) -> None:
        """Check the computable mesh invariants, raising MeshError on failure."""
        for c, g in enumerate(self.geometry):
            if not _is_simple(g.vertices):
                raise MeshError(f"cell {c} is not a simple polygon")
            closure = (g.face_lengths[:, None] * g.normals).sum(0)
            if np.abs(closure).max() > tol * max(1.0, g.face_lengths.sum()):
                raise MeshError(f"cell {c} violates the closed-polygon identity")
            if abs(np.dot(g.face_lengths, g.face_distances) - 2 * g.area) > tol * g.area:
                raise MeshError(f"cell {c}: face distances do not reproduce the area")
        for f in np.flatnonzero(~self.boundary_faces):
            c0, c1 = self.face_cells[f]
            s0 = self.cell_face_signs[c0][list(self.cell_faces[c0]).index(f)]
            s1 = self.cell_face_signs[c1][list(self.cell_faces[c1]).index(f)]
            if s0 != -s1:
                raise MeshError(f"face {f} is traversed in the same direction by cells {c0} and {c1}")
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        box = float(np.prod(hi - lo))
        total = sum(g.area for g in self.geometry)
        if abs(total - box) > tol * box:
            raise MeshError(f"cell areas sum to {total!r}, domain area is {box!r}")
        used = np.zeros(self.n_vertices, dtype=bool)
        for loop in self.cells:
            used[loop] = True
        if not used.all():
            raise MeshError(f"dangling vertices {np.flatnonzero(~used)[:5].tolist()}")
        # boundary faces must lie on the bounding box
        for f in np.flatnonzero(self.boundary_faces):
            p, q = self.face_points(f)
            on = [
                any(abs(p[d] - v) < 1e-12 and abs(q[d] - v) < 1e-12 for v in (lo[d], hi[d]))
                for d in range(2)
            ]
            if not any(on):
                c = self.face_cells[f, 0]
                raise MeshError(f"cell {c} has an unmatched face {f} inside the domain")

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist(), "cells": [c.tolist() for c in self.cells]}


def generate_triangular(n: int) -> Mesh:
    """Unit square cut into n x n squares, each split along the same diagonal."""
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append([a, b, c])
            cells.append([a, c, d])
    return Mesh(verts, cells)


def generate_cartesian(n: int) -> Mesh:
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = [
        [j * (n + 1) + i, j * (n + 1) + i + 1, (j + 1) * (n + 1) + i + 1, (j + 1) * (n + 1) + i]
        for j in range(n)
        for i in range(n)
    ]
    return Mesh(verts, cells)


def _parse_json_poly(text: str, source: str) -> tuple[list, list]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise MeshFormatError(f"{source}: top-level value must be an object")
    for key in ("vertices", "cells"):
        if key not in data:
            raise MeshFormatError(f"{source}: missing field '{key}'")
        if not isinstance(data[key], list):
            raise MeshFormatError(f"{source}: field '{key}' must be a list")
    for i, v in enumerate(data["vertices"]):
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
            raise MeshFormatError(f"{source}: field 'vertices[{i}]' must be a pair of numbers")
    for i, c in enumerate(data["cells"]):
        if not (isinstance(c, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in c)):
            raise MeshFormatError(f"{source}: field 'cells[{i}]' must be a list of integers")
    return data["vertices"], data["cells"]


def load_mesh(path, format: str = "json-poly") -> Mesh:
    """Read a mesh file and validate it eagerly."""
    if format != "json-poly":
        raise ValueError(f"unsupported mesh format {format!r}")
    path = Path(path)
    vertices, cells = _parse_json_poly(path.read_text(), str(path))
    return Mesh(vertices, cells)


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_json()))


HEXAGONAL_LEVELS = range(0, 6)


def hexagonal_mesh(level: int) -> Mesh:
    """Shipped hexagonal mesh of the given refinement level."""
    if level not in HEXAGONAL_LEVELS:
        raise ValueError(f"hexagonal levels available: {list(HEXAGONAL_LEVELS)}")
    res = resources.files("hho_brinkman") / "data" / "hexagonal" / f"hexa_{level}.json"
    vertices, cells = _parse_json_poly(res.read_text(), res.name)
    return Mesh(vertices, cells)


def mesh_for_level(family: str, level: int, mesh_dir=None) -> Mesh:
    """Mesh of a refinement family; triangular/cartesian level l uses n = 2**(l+1)."""
    if family == "triangular":
        return generate_triangular(2 ** (level + 1))
    if family == "cartesian":
        return generate_cartesian(2 ** (level + 1))
    if family == "hexagonal":
        return hexagonal_mesh(level)
    if family == "file":
        files = mesh_files(mesh_dir)
        if not 0 <= level < len(files):
            raise ValueError(f"level {level} not available in {mesh_dir} ({len(files)} files)")
        return load_mesh(files[level])
    raise ValueError(f"unknown mesh family {family!r}")


def mesh_files(mesh_dir) -> list[Path]:
    if mesh_dir is None:
        raise ValueError("family 'file' needs a mesh directory")
    files = sorted(Path(mesh_dir).glob("*.json"))
    if not files:
        raise ValueError(f"no *.json mesh files in {mesh_dir}")
    return files


def hexagonal_data_dir() -> Path:
    return Path(str(resources.files("hho_brinkman") / "data" / "hexagonal"))
