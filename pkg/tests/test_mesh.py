import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hho_brinkman.mesh import (
    HEXAGONAL_LEVELS,
    Mesh,
    MeshError,
    MeshFormatError,
    generate_cartesian,
    generate_triangular,
    hexagonal_data_dir,
    hexagonal_mesh,
    load_mesh,
    mesh_for_level,
    save_mesh,
)


def test_triangular_counts():
    m = generate_triangular(1)
    assert (m.n_cells, m.n_faces, m.n_vertices) == (2, 5, 4)
    assert generate_triangular(2).n_cells == 8


def test_triangular_diameter():
    assert generate_triangular(4).h == pytest.approx(np.sqrt(2) / 4, abs=1e-15)


@pytest.mark.parametrize("gen", [generate_triangular, generate_cartesian])
def test_generators_reject_zero(gen):
    with pytest.raises(ValueError):
        gen(0)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 9))
def test_triangular_topology(n):
    m = generate_triangular(n)
    assert m.n_cells == 2 * n * n
    assert m.n_faces == 3 * n * n + 2 * n
    assert m.boundary_faces.sum() == 4 * n
    # Euler characteristic of a disc
    assert m.n_vertices - m.n_faces + m.n_cells == 1
    assert sum(g.area for g in m.geometry) == pytest.approx(1.0, rel=1e-14)


def test_right_triangle_geometry():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], validate=False)
    g = m.cell_geometry(0)
    assert g.area == pytest.approx(0.5)
    assert g.h == pytest.approx(np.sqrt(2))
    hyp = np.flatnonzero(np.isclose(g.face_lengths, np.sqrt(2)))[0]
    np.testing.assert_allclose(g.normals[hyp], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-15)


def test_unit_square_closure():
    m = Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]])
    g = m.cell_geometry(0)
    np.testing.assert_allclose((g.face_lengths[:, None] * g.normals).sum(0), 0, atol=1e-15)
    assert m.boundary_faces.sum() == 4


def test_cell_geometry_bounds():
    with pytest.raises(IndexError):
        generate_triangular(1).cell_geometry(2)


def test_clockwise_cell_rejected(tmp_path):
    p = tmp_path / "cw.json"
    p.write_text(json.dumps({"vertices": [[0, 0], [1, 0], [1, 1], [0, 1]], "cells": [[0, 3, 2, 1]]}))
    with pytest.raises(MeshError, match="cell 0"):
        load_mesh(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"vertices": [[0, 0],\n [1, 0]\n "cells": []}')
    with pytest.raises(MeshFormatError, match="line 3"):
        load_mesh(p)


def test_missing_field_named(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vertices": [[0, 0]]}))
    with pytest.raises(MeshFormatError, match="cells"):
        load_mesh(p)


def test_bad_vertex_named(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vertices": [[0, 0], [1]], "cells": [[0, 1]]}))
    with pytest.raises(MeshFormatError, match=r"vertices\[1\]"):
        load_mesh(p)


def test_hole_rejected():
    # two triangles that leave half the bounding box uncovered
    with pytest.raises(MeshError):
        Mesh([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], [[0, 1, 4], [1, 2, 4]])


def test_dangling_vertex_rejected():
    with pytest.raises(MeshError, match="dangling"):
        Mesh([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.2]], [[0, 1, 2, 3]])


def test_roundtrip(tmp_path):
    m = generate_cartesian(3)
    save_mesh(m, tmp_path / "m.json")
    m2 = load_mesh(tmp_path / "m.json")
    np.testing.assert_array_equal(m.vertices, m2.vertices)
    assert m2.n_faces == m.n_faces


def test_single_cell_file(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps({"vertices": [[0, 0], [1, 0], [1, 1], [0, 1]], "cells": [[0, 1, 2, 3]]}))
    m = load_mesh(p)
    assert m.n_cells == 1 and m.boundary_faces.sum() == 4


@pytest.mark.parametrize("level", list(HEXAGONAL_LEVELS))
def test_hexagonal_invariants(level):
    m = hexagonal_mesh(level)
    for g in m.geometry:
        assert abs(g.face_lengths @ g.face_distances - 2 * g.area) <= 1e-12 * g.area
        np.testing.assert_allclose(np.linalg.norm(g.normals, axis=1), 1.0, atol=1e-14)
        assert np.all(np.einsum("ij,ij->i", g.face_midpoints - g.centroid, g.normals) > 0)
    assert sum(g.area for g in m.geometry) == pytest.approx(1.0, rel=1e-12)
    assert max(len(c) for c in m.cells) == 6


def test_hexagonal_files_match_family():
    files = sorted(hexagonal_data_dir().glob("*.json"))
    assert len(files) == len(HEXAGONAL_LEVELS)
    m = mesh_for_level("file", 0, hexagonal_data_dir())
    assert m.n_cells == hexagonal_mesh(0).n_cells


def test_interior_faces_opposite_signs(mesh):
    for f in np.flatnonzero(~mesh.boundary_faces):
        c0, c1 = mesh.face_cells[f]
        s0 = mesh.cell_face_signs[c0][list(mesh.cell_faces[c0]).index(f)]
        s1 = mesh.cell_face_signs[c1][list(mesh.cell_faces[c1]).index(f)]
        assert s0 == -s1
    assert np.all(mesh.face_cells[mesh.boundary_faces, 1] == -1)


@pytest.mark.parametrize("family", ["triangular", "cartesian", "hexagonal"])
def test_refinement_monotone(family):
    hs = [mesh_for_level(family, level).h for level in range(5)]
    for a, b in zip(hs, hs[1:]):
        assert b <= 0.6 * a


def test_unknown_family():
    with pytest.raises(ValueError):
        mesh_for_level("voronoi", 0)
