import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pica.fixtures import grid_sheet, icosphere
from pica.mesh import (
    DegenerateFaceError, EdgeSet, Layer, MeshFormatError, TriMesh, coarsen, coarsen_graph, face_frames,
    load_mesh, nearest_vertex, read_edge_sets, save_obj, uniform_laplacian, write_edge_sets,
)

from conftest import random_rotation

CUBE_OBJ = """v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def test_minimal_obj(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_faces == 1


def test_quad_face_rejected(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_cube_area(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p)
    assert (m.n_vertices, m.n_faces) == (8, 12)
    assert abs(m.surface_area() - 6.0) <= 1e-9


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n")
    assert load_mesh(p).faces.tolist() == [[0, 1, 2]]


def test_index_out_of_range(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_degenerate_face_named():
    with pytest.raises(DegenerateFaceError) as exc:
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])
    assert exc.value.face == 1


def test_inconsistent_orientation():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    with pytest.raises(MeshFormatError):
        TriMesh(v, [[0, 1, 2], [0, 1, 3]])


def test_obj_round_trip(tmp_path):
    m = icosphere(0.7, 1)
    save_obj(tmp_path / "s.obj", m)
    back = load_mesh(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_planar_frame():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    r, n = face_frames(m)
    assert np.allclose(n[0], [0, 0, 1])
    c = m.vertices.mean(axis=0)
    t = (m.vertices[0] - c) / np.linalg.norm(m.vertices[0] - c)
    assert np.allclose(r[0][:, 1], t)
    assert np.allclose(r[0][:, 2], np.cross(n[0], t))


def test_frames_rotate(rng):
    m = icosphere(0.5, 1)
    q = random_rotation(rng)
    r0, _ = face_frames(m)
    r1, _ = face_frames(m, m.vertices @ q.T + rng.normal(size=3))
    assert np.abs(r1 - q @ r0).max() <= 1e-9


@given(st.integers(0, 2 ** 32 - 1))
def test_frames_orthonormal_right_handed(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(30, 3))
    f = np.arange(30).reshape(10, 3)
    r, _ = face_frames(TriMesh(v, f))
    gram = np.swapaxes(r, 1, 2) @ r
    assert np.abs(gram - np.eye(3)).max() <= 1e-9
    assert np.allclose(np.linalg.det(r), 1.0)


def test_laplacian_grid_interior_zero():
    m = grid_sheet(4, 4)
    lap = uniform_laplacian(m)
    interior = [i for i in range(m.n_vertices) if 0 < i % 5 < 4 and 0 < i // 5 < 4]
    # interior vertices of this triangulation have a point-symmetric one-ring
    assert np.abs(lap[interior]).max() <= 1e-12


def test_laplacian_single_neighbor():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    lap = uniform_laplacian(m, np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0.0]]))
    # vertex 0 neighbors: 1 at +x and 2 coincident -> mean (0.5,0,0)
    assert np.allclose(lap[0], [0.5, 0, 0])


def test_laplacian_brute_force(rng):
    m = icosphere(1.0, 2)
    p = m.vertices + rng.normal(scale=0.05, size=m.vertices.shape)
    nbrs = {i: set() for i in range(m.n_vertices)}
    for a, b, c in m.faces.tolist():
        for u, v in ((a, b), (b, c), (c, a)):
            nbrs[u].add(v)
            nbrs[v].add(u)
    ref = np.array([np.mean([p[j] - p[i] for j in sorted(nbrs[i])], axis=0) for i in range(m.n_vertices)])
    assert np.abs(uniform_laplacian(m, p) - ref).max() <= 1e-12


def test_laplacian_isolated_vertex_warns(caplog):
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with caplog.at_level(logging.WARNING):
        lap = uniform_laplacian(m)
    assert np.all(lap[3] == 0)
    assert "isolated" in caplog.text


def test_laplacian_rotation_equivariant(rng):
    m = icosphere(1.0, 2)
    q = random_rotation(rng)
    p = m.vertices + rng.normal(scale=0.05, size=m.vertices.shape)
    assert np.abs(uniform_laplacian(m, p @ q.T) - uniform_laplacian(m, p) @ q.T).max() <= 1e-9


def test_coarsen_path():
    edges = np.array([[i, i + 1] for i in range(8)])
    (lvl,) = coarsen_graph(9, edges, 1)
    assert lvl.edges.tolist() == [[0, 2], [2, 4], [4, 6], [6, 8]]


def test_coarsen_levels_zero():
    with pytest.raises(ValueError):
        coarsen(icosphere(1, 1), 0)


def test_coarsen_subgraph_properties():
    m = icosphere(1.0, 3)
    prev = set(range(m.n_vertices))
    for es in coarsen(m, 3):
        e = es.edges
        assert np.all(e[:, 0] < e[:, 1])
        assert len(np.unique(e, axis=0)) == len(e)
        verts = set(e.ravel().tolist())
        assert verts <= prev and max(verts) < m.n_vertices
        prev = verts


def test_coarsen_disconnected_warns(caplog):
    edges = np.array([[0, 1], [1, 2], [3, 4], [4, 5]])
    with caplog.at_level(logging.WARNING):
        out = coarsen_graph(6, edges, 1)
    assert "components" in caplog.text
    assert out[0].edges.tolist() == [[0, 2], [3, 5]]


def test_edge_set_io(tmp_path):
    sets = [EdgeSet(np.array([[0, 1], [1, 2]]), 0), EdgeSet(np.array([[0, 2]]), 1)]
    write_edge_sets(tmp_path / "e.txt", sets)
    back = read_edge_sets(tmp_path / "e.txt")
    assert [b.level for b in back] == [0, 1]
    assert all(np.array_equal(a.edges, b.edges) for a, b in zip(sets, back))


def test_nearest_coincident_and_tie():
    t = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0, 0]])
    idx, d = nearest_vertex(np.array([[0, 0, 0.0], [0, 5, 0.0]]), t[:2])
    assert idx.tolist() == [0, 0]
    idx, d = nearest_vertex(t[2:], t)
    assert idx[0] == 2 and d[0] == 0.0


def test_nearest_brute_force(rng):
    q = rng.normal(size=(1000, 3))
    t = rng.normal(size=(1000, 3))
    idx, d = nearest_vertex(q, t)
    dd = np.linalg.norm(q[:, None] - t[None], axis=2)
    assert np.array_equal(idx, np.argmin(dd, axis=1))
    assert np.allclose(d, dd.min(axis=1))


def test_nearest_empty_targets():
    with pytest.raises(ValueError):
        nearest_vertex(np.zeros((1, 3)), np.zeros((0, 3)))


def test_layer_enum():
    assert TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], "clothing").layer is Layer.CLOTHING
