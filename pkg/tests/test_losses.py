import numpy as np
import pytest
from hypothesis import given, strategies as st

from pica.fixtures import cape, icosphere
from pica.gradcheck import fd_gradient, rel_error
from pica.losses import (
    LossReport, LossWeights, appearance_losses, bce, collision_loss, collision_margins, distance_loss,
    geometry_losses, laplacian_loss, normal_consistency_loss, offset_smoothness, opacity_loss,
)
from pica.mesh import TriMesh


def grid(n=5, z=None):
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n * n) if z is None else z])
    f = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            f += [[a, a + 1, a + n + 1], [a, a + n + 1, a + n]]
    return TriMesh(v, f)


def test_bce_half():
    val, _ = bce(np.full((3, 3), 0.5), np.ones((3, 3)))
    assert np.isclose(val, np.log(2))


def test_bce_clamped_gradient_zero():
    val, g = bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isclose(val, -np.log(1e-6)) and not g.any()


def test_bce_fd(rng):
    p = rng.uniform(0.05, 0.95, 20)
    t = rng.uniform(size=20)
    assert rel_error(bce(p, t)[1], fd_gradient(lambda x: bce(x, t)[0], p)) <= 1e-6


def test_opacity_values():
    assert np.isclose(opacity_loss(np.array([0.5]))[0], -1.3863, atol=1e-4)
    assert np.isclose(opacity_loss(np.array([1e-4]))[0], -9.2105, atol=1e-4)
    assert opacity_loss(np.array([0.5]))[1][0] == 0.0
    with pytest.raises(ValueError):
        opacity_loss(np.array([0.0]))


@given(st.integers(0, 2 ** 32 - 1))
def test_opacity_gradient(seed):
    o = np.random.default_rng(seed).uniform(0.01, 0.99, 12)
    assert rel_error(opacity_loss(o, 0.3)[1], fd_gradient(lambda x: opacity_loss(x, 0.3)[0], o)) <= 1e-6


def test_collision_zero_outside():
    body = icosphere(0.5, 2)
    x = body.vertices * 1.2
    val, gc, gb = collision_loss(x, body, body.vertices, 0.005)
    assert val == 0 and not gc.any() and not gb.any()


def test_collision_cubic():
    body = icosphere(0.5, 2)
    nrm = body.vertices / np.linalg.norm(body.vertices, axis=1, keepdims=True)
    # place points exactly along the vertex normals, inside by d
    from pica.mesh import vertex_normals

    vn = vertex_normals(body.vertices, body.faces)
    x = body.vertices[:10] - 0.001 * vn[:10]
    v1 = collision_loss(x, body, body.vertices, 0.005)[0]
    x2 = body.vertices[:10] - 0.007 * vn[:10]
    v2 = collision_loss(x2, body, body.vertices, 0.005)[0]
    assert np.isclose(v1, 0.006 ** 3) and np.isclose(v2, 0.012 ** 3)
    assert np.allclose(collision_margins(x, body, body.vertices), -0.001)
    assert nrm.shape == body.vertices.shape


def test_collision_gradient_fd(rng):
    body = icosphere(0.5, 2)
    x = cape(0.497, 6).vertices.copy()
    x += rng.normal(scale=1e-4, size=x.shape)
    val, gc, gb = collision_loss(x, body, body.vertices, 0.005, lam=3.0)
    assert val > 0
    fd = fd_gradient(lambda y: collision_loss(y, body, body.vertices, 0.005, lam=3.0)[0], x, 1e-7)
    assert rel_error(gc, fd) <= 1e-5
    # frozen-normal reaction: body receives the opposite total force
    assert np.allclose(gb.sum(0), -gc.sum(0))


def test_collision_empty_body():
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    with pytest.raises(ValueError):
        collision_loss(np.zeros((1, 3)), empty, empty.vertices, 0.005)


def test_flat_grid_geometry_zero():
    g = grid()
    interior = [i for i in range(25) if 0 < i % 5 < 4 and 0 < i // 5 < 4]
    lv, lg = laplacian_loss(g, g.vertices)
    nv, _ = normal_consistency_loss(g, g.vertices)
    assert nv == pytest.approx(0.0, abs=1e-15)
    from pica.mesh import laplacian_matrix

    assert np.allclose((laplacian_matrix(g) @ g.vertices)[interior], 0)
    assert distance_loss(g.vertices, g.vertices)[0] == 0.0


@pytest.mark.parametrize("fn", [laplacian_loss, normal_consistency_loss])
def test_geometry_fd(fn, rng):
    g = grid(4, rng.normal(scale=0.3, size=16))
    p = g.vertices + rng.normal(scale=0.05, size=g.vertices.shape)
    assert rel_error(fn(g, p)[1], fd_gradient(lambda x: fn(g, x)[0], p)) <= 1e-6


def test_distance_and_offset_smooth_fd(rng):
    p, q = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    assert rel_error(distance_loss(p, q)[1], fd_gradient(lambda x: distance_loss(x, q)[0], p)) <= 1e-6
    offs = [rng.normal(size=(4, 3)) for _ in range(3)]
    _, grads = offset_smoothness(offs)
    for t in range(3):
        def f(x, t=t):
            o = list(offs)
            o[t] = x
            return offset_smoothness(o)[0]
        assert rel_error(grads[t], fd_gradient(f, offs[t])) <= 1e-6
    assert offset_smoothness(offs[:1])[0] == 0.0


def test_appearance_report(rng):
    h, w = 6, 5
    c, gc = rng.uniform(size=(h, w, 3)), rng.uniform(size=(h, w, 3))
    m, gm = rng.uniform(size=(h, w)), (rng.uniform(size=(h, w)) > 0.5).astype(float)
    lab, gs = rng.uniform(0.1, 0.9, (h, w)), (rng.uniform(size=(h, w)) > 0.5).astype(float)
    wt = LossWeights(color=2.0, mask=0.5, seg=0.3)
    rep, grads = appearance_losses(c, m, lab, gc, gm, gs, wt)
    assert np.isclose(rep.terms["color_mse"], np.mean((c - gc) ** 2))
    assert np.isclose(rep.total, 2.0 * rep.terms["color_mse"] + 0.5 * rep.terms["mask"] + 0.3 * rep.terms["seg"])
    assert "ssim_metric" not in rep.terms

    def tot(col=c, msk=m, lb=lab):
        return appearance_losses(col, msk, lb, gc, gm, gs, wt, with_ssim=False)[0].total

    assert rel_error(grads["color"], fd_gradient(lambda x: tot(col=x), c)) <= 1e-6
    assert rel_error(grads["mask"], fd_gradient(lambda x: tot(msk=x), m)) <= 1e-6
    assert rel_error(grads["label"], fd_gradient(lambda x: tot(lb=x), lab)) <= 1e-6
    rep2, _ = appearance_losses(gc, gm, gs, gc, gm, gs, wt)
    assert rep2.metrics["ssim_metric"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        appearance_losses(c[:2], m, lab, gc, gm, gs, wt)


def test_geometry_losses_combined(rng):
    body, cl = icosphere(0.5, 1), cape(0.55, 4)
    pb = body.vertices + rng.normal(scale=0.01, size=body.vertices.shape)
    pc = cl.vertices + rng.normal(scale=0.01, size=cl.vertices.shape)
    wt = LossWeights(laplacian=0.7, normal=0.2, distance=3.0)
    rep, grads = geometry_losses([body, cl], [pb, pc], 0, body.vertices, wt)
    ref = (laplacian_loss(body, pb)[0] + laplacian_loss(cl, pc)[0]) * 0.7 + \
          (normal_consistency_loss(body, pb)[0] + normal_consistency_loss(cl, pc)[0]) * 0.2 + \
          3.0 * distance_loss(pb, body.vertices)[0]
    assert np.isclose(rep.total, ref)
    fd = fd_gradient(lambda x: geometry_losses([body, cl], [pb, x], 0, body.vertices, wt)[0].total, pc)
    assert rel_error(grads[1], fd) <= 1e-6


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(color=-1)
    with pytest.raises(ValueError):
        LossWeights(lpips=0.1)
    with pytest.raises(ValueError):
        LossWeights(collision_eps=0)


def test_report_merge_and_row():
    a = LossReport({"color_mse": 1.0}, {"color_mse": 2.0})
    a.merge(LossReport({"color_mse": 3.0, "opac": -1.0}, {"color_mse": 2.0, "opac": 0.5}), 0.5)
    assert a.terms == {"color_mse": 2.5, "opac": -0.5}
    row = a.row()
    assert row["total"] == pytest.approx(2 * 2.5 - 0.25) and row["ssim_metric"] == 0.0
