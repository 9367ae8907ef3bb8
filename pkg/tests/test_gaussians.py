import numpy as np
import pytest
from hypothesis import given, strategies as st

from pica.fixtures import icosphere
from pica.gaussians import (
    FLAT_SCALE, INIT_OPACITY, INIT_SCALE, GaussianSet, bary_pattern, clamp_opacity, gaussian_geometry,
    gaussian_position, gaussian_positions, max_offset, read_gaussians, sample_gaussians, write_gaussians,
)
from pica.mesh import Layer, TriMesh, face_frames

from conftest import random_rotation


def cube():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], float)
    f = [[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4], [1, 2, 6], [1, 6, 5],
         [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7]]
    return TriMesh(v, f)


def test_cube_count_and_defaults():
    gs = sample_gaussians(cube(), 13)
    assert len(gs) == 156
    assert np.all(gs.offset == 0) and np.all(gs.scales == INIT_SCALE) and np.all(gs.opacity == INIT_OPACITY)
    assert np.all(gs.label == 0)
    assert np.all(sample_gaussians(cube().with_vertices(cube().vertices), 2).face[:4] == [0, 0, 1, 1])


def test_clothing_label():
    m = TriMesh(cube().vertices, cube().faces, Layer.CLOTHING)
    assert np.all(sample_gaussians(m, 3).label == 1)


def test_centroid_pattern():
    assert np.allclose(bary_pattern(1), [[1 / 3, 1 / 3, 1 / 3]])


@pytest.mark.parametrize("n", [1, 5, 13, 14, 30, 100])
def test_pattern_on_simplex(n):
    b = bary_pattern(n)
    assert b.shape == (n, 3)
    assert np.all(b >= 0) and np.allclose(b.sum(axis=1), 1.0)
    assert len(np.unique(np.round(b, 12), axis=0)) == n


def test_per_face_invalid():
    with pytest.raises(ValueError):
        sample_gaussians(cube(), 0)


def test_sampling_deterministic():
    a, b = sample_gaussians(icosphere(1, 1)), sample_gaussians(icosphere(1, 1))
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("face", "bary", "features"))


def test_vertex_and_offset_position():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    gs = sample_gaussians(m, 1)
    gs.bary[0] = (1, 0, 0)
    assert np.array_equal(gaussian_position(gs[0], m), m.vertices[0])
    gs.bary[0] = (1 / 3, 1 / 3, 1 / 3)
    gs.offset[0] = 0.01
    assert np.allclose(gaussian_position(gs[0], m), m.vertices.mean(axis=0) + [0, 0, 0.01])
    assert np.allclose(gaussian_positions(gs, m)[0], gaussian_position(gs[0], m))


def test_position_rigid(rng):
    m = icosphere(0.5, 1)
    gs = sample_gaussians(m, 4)
    gs.offset[:] = rng.uniform(-0.01, 0.01, len(gs))
    q, t = random_rotation(rng), rng.normal(size=3)
    moved = gaussian_positions(gs, m, m.vertices @ q.T + t)
    assert np.abs(moved - (gaussian_positions(gs, m) @ q.T + t)).max() <= 1e-9


def test_diagonal_covariance():
    # face frame = identity: normal x, tangent y (centroid->v0), bitangent z
    c = np.zeros(3)
    v0 = c + [0, 1, 0]
    v1 = c + [0, -0.5, 0.8]
    v2 = c + [0, -0.5, -0.8]
    m = TriMesh([v0, v1, v2], [[0, 1, 2]])
    r, _ = face_frames(m)
    assert np.allclose(r[0], np.eye(3))
    gs = sample_gaussians(m, 1)
    gs.scales[:] = 1.0
    geo = gaussian_geometry(gs, m)
    d1 = np.linalg.norm(v0 - m.vertices.mean(0))
    d2 = np.linalg.norm(v1 - m.vertices.mean(0))
    assert np.allclose(geo.covariance[0], np.diag([FLAT_SCALE ** 2, d1 ** 2, d2 ** 2]), atol=1e-15)


@given(st.integers(0, 2 ** 32 - 1))
def test_flatness_random_faces(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(60, 3))
    m = TriMesh(v, np.arange(60).reshape(20, 3))
    gs = sample_gaussians(m, 1)
    gs.scales[:] = rng.uniform(0.2, 1.0, size=gs.scales.shape)
    geo = gaussian_geometry(gs, m)
    w, vec = np.linalg.eigh(geo.covariance)
    _, n = face_frames(m)
    assert np.abs(w[:, 0] - FLAT_SCALE ** 2).max() <= 1e-12
    assert np.abs(np.abs(np.sum(vec[:, :, 0] * n, axis=1)) - 1).max() <= 1e-6


def test_mesh_scaling_scales_tangential(rng):
    m = icosphere(0.5, 1)
    gs = sample_gaussians(m, 2)
    a = gaussian_geometry(gs, m)
    b = gaussian_geometry(gs, m, 3.0 * m.vertices)
    ra, rb = a.rotation, b.rotation
    ta = np.swapaxes(ra, 1, 2) @ a.covariance @ ra
    tb = np.swapaxes(rb, 1, 2) @ b.covariance @ rb
    assert np.allclose(tb[:, 1:, 1:], 9.0 * ta[:, 1:, 1:], rtol=1e-12)


def test_covariance_rotation_equivariant(rng):
    m = icosphere(0.5, 1)
    gs = sample_gaussians(m, 3)
    q = random_rotation(rng)
    a = gaussian_geometry(gs, m)
    b = gaussian_geometry(gs, m, m.vertices @ q.T)
    assert np.abs(b.covariance - q @ a.covariance @ q.T).max() <= 1e-9


def test_clamp_and_max_offset():
    assert np.allclose(clamp_opacity(np.array([0.0, 1.0, 0.5])), [1e-4, 1 - 1e-4, 0.5])
    m = TriMesh([[0, 0, 0], [2, 0, 0], [0, 2, 0]], [[0, 1, 2]])
    assert np.isclose(max_offset(m), 0.5 * (2 + 2 + 2 * np.sqrt(2)) / 3)


def test_text_round_trip(tmp_path, rng):
    gs = sample_gaussians(icosphere(0.5, 1), 2)
    gs.features = rng.normal(size=gs.features.shape)
    gs.opacity = rng.uniform(0.1, 0.9, len(gs))
    write_gaussians(tmp_path / "g.txt", gs)
    back = read_gaussians(tmp_path / "g.txt")
    for k in ("face", "bary", "offset", "scales", "opacity", "features", "label"):
        assert np.array_equal(getattr(back, k), getattr(gs, k)), k


def test_validate():
    m = icosphere(0.5, 0)
    gs = sample_gaussians(m, 1)
    gs.validate(m)
    bad = gs.copy()
    bad.label[:] = 1
    with pytest.raises(ValueError):
        bad.validate(m)
    bad = gs.copy()
    bad.opacity[0] = 0.0
    with pytest.raises(ValueError):
        bad.validate()


def test_take_subset():
    gs = sample_gaussians(icosphere(0.5, 0), 2)
    sub = gs.take(slice(0, 3))
    assert isinstance(sub, GaussianSet) and len(sub) == 3
