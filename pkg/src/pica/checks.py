"""Self-diagnostics run by ``pica check``.

Each suite returns ``(passed, detail)``. Gradient suites take the function
under test from :data:`GRADIENTS`, so a harness can swap in a faulty
implementation and confirm that the report names the broken term.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import losses
from .cloth import (
    AnalyticPredictor, PhysicalParams, SimState, build_graph, nearest_body_edges, resolve_collisions, step,
)
from .cloth.collisions import margins
from .fixtures import cape, grid_sheet, icosphere, tryon_cape
from .gaussians import FLAT_SCALE, gaussian_geometry, sample_gaussians
from .gradcheck import fd_gradient, rel_error
from .mesh import Layer, TriMesh, face_frames, nearest_vertex, vertex_normals
from .render.projection import MIN_ALPHA, Splats
from .render.raster import T_STOP, rasterize, rasterize_backward
from .skinning import Bone, Pose, SkinnedRig, deform, deform_jacobian, rigid

TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# ---------------------------------------------------------------- gradient targets


def _composite_value_and_grad(splats: Splats, values: np.ndarray, w: int, h: int, weights: np.ndarray):
    img, rec = rasterize(splats, values, w, h)
    g = rasterize_backward(rec, weights)
    return float(np.sum(img * weights)), g


GRADIENTS = {
    "composite": _composite_value_and_grad,
    "opacity": lambda o: losses.opacity_loss(o, 1.0),
    "collision": lambda x, body, bp, eps: losses.collision_loss(x, body, bp, eps, 1.0)[:2],
    "laplacian": losses.laplacian_loss,
    "normal": losses.normal_consistency_loss,
    "distance": losses.distance_loss,
    "seg": losses.bce,
    "deform_jacobian": deform_jacobian,
}


def _random_splats(rng, n, w, h):
    mean = rng.uniform([0, 0], [w, h], size=(n, 2))
    a = rng.normal(size=(n, 2, 2)) * rng.uniform(0.5, 2.0, size=(n, 1, 1))
    cov = a @ a.transpose(0, 2, 1) + 0.3 * np.eye(2)
    return Splats.from_2d(mean, cov, rng.uniform(1, 5, n), rng.uniform(0.05, 0.95, n))


def grad_composite(rng, trials):
    worst = 0.0
    for _ in range(trials):
        w = h = 8
        n = int(rng.integers(2, 6))
        s = _random_splats(rng, n, w, h)
        vals = rng.uniform(0, 1, size=(n, 3))
        wts = rng.normal(size=(h, w, 3))
        f = GRADIENTS["composite"]
        _, g = f(s, vals, w, h, wts)

        def with_opacity(o):
            return f(Splats.from_2d(s.mean2d, s.cov2d, s.depth, o), vals, w, h, wts)[0]

        # keep splats away from the 1/255 cut where the image is discontinuous
        fd = fd_gradient(with_opacity, s.opacity, 1e-6)
        worst = max(worst, rel_error(g.opacity, fd))
        fdv = fd_gradient(lambda v: f(s, v, w, h, wts)[0], vals, 1e-4)
        worst = max(worst, rel_error(g.values, fdv))
    return worst


def grad_opacity(rng, trials):
    worst = 0.0
    for _ in range(trials):
        o = rng.uniform(0.05, 0.95, size=7)
        f = GRADIENTS["opacity"]
        worst = max(worst, rel_error(f(o)[1], fd_gradient(lambda x: f(x)[0], o, 1e-6)))
    return worst


def grad_collision(rng, trials):
    body = icosphere(0.5, 1)
    worst = 0.0
    f = GRADIENTS["collision"]
    for _ in range(trials):
        dirs = rng.normal(size=(10, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        x = dirs * rng.uniform(0.47, 0.52, size=(10, 1))
        _, g = f(x, body, body.vertices, 0.02)
        fd = fd_gradient(lambda y: f(y, body, body.vertices, 0.02)[0], x, 1e-6)
        worst = max(worst, rel_error(g, fd))
    return worst


def _geometry_check(term, rng, trials):
    worst = 0.0
    mesh = icosphere(0.5, 1)
    f = GRADIENTS[term]
    for _ in range(trials):
        x = mesh.vertices + rng.normal(scale=0.03, size=mesh.vertices.shape)
        if term == "distance":
            x0 = mesh.vertices
            v, g = f(x, x0)
            fd = fd_gradient(lambda y: f(y, x0)[0], x, 1e-5)
        else:
            v, g = f(mesh, x)
            fd = fd_gradient(lambda y: f(mesh, y)[0], x, 1e-5)
        worst = max(worst, rel_error(g, fd))
    return worst


def grad_seg(rng, trials):
    worst = 0.0
    f = GRADIENTS["seg"]
    for _ in range(trials):
        p = rng.uniform(0.05, 0.95, size=(6, 6))
        t = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
        worst = max(worst, rel_error(f(p, t)[1], fd_gradient(lambda y: f(y, t)[0], p, 1e-6)))
    return worst


def _random_rig(rng, nv, nb):
    bones = tuple(Bone(f"b{i}", i - 1, np.eye(4)) for i in range(nb))
    w = rng.uniform(size=(nv, nb))
    return SkinnedRig(bones, w / w.sum(axis=1, keepdims=True))


def _random_pose(rng, nb):
    from scipy.spatial.transform import Rotation

    g = np.stack([rigid(Rotation.from_rotvec(rng.normal(size=3)).as_matrix(), rng.normal(size=3))
                  for _ in range(nb)])
    return Pose(0, g)


def grad_deform(rng, trials):
    worst = 0.0
    for _ in range(trials):
        rig = _random_rig(rng, 4, 3)
        pose = _random_pose(rng, 3)
        p = rng.normal(size=(4, 3))
        off = rng.normal(scale=0.1, size=(4, 3))
        jac = GRADIENTS["deform_jacobian"](rig, pose)
        for c in range(3):
            fd = fd_gradient(lambda o: deform(p, rig, pose.with_offsets(o))[:, c].sum(), off, 1e-5)
            worst = max(worst, rel_error(jac[:, c, :], fd))
    return worst


GRADIENT_SUITES = {
    "composite": grad_composite,
    "opacity": grad_opacity,
    "collision": grad_collision,
    "laplacian": lambda rng, n: _geometry_check("laplacian", rng, n),
    "normal": lambda rng, n: _geometry_check("normal", rng, n),
    "distance": lambda rng, n: _geometry_check("distance", rng, n),
    "seg": grad_seg,
    "deform_jacobian": grad_deform,
}


# ---------------------------------------------------------------- invariant suites


def _composite_pixel(x, y, mean, conic, opacity, depth, values):
    order = sorted(range(len(depth)), key=lambda i: (depth[i], i))
    out = np.zeros(values.shape[1])
    t = 1.0
    for i in order:
        dx, dy = x - mean[i, 0], y - mean[i, 1]
        a = opacity[i] * math.exp(-0.5 * (conic[i, 0] * dx * dx + 2 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy))
        if a < MIN_ALPHA:
            continue
        out += a * t * values[i]
        t *= 1 - a
        if t < T_STOP:
            break
    return out


def check_compositing(rng, trials=200):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 11))
        s = _random_splats(rng, n, 4, 4)
        vals = rng.uniform(size=(n, 3))
        img, _ = rasterize(s, vals, 4, 4)
        for py in range(4):
            for px in range(4):
                ref = _composite_pixel(px + 0.5, py + 0.5, s.mean2d, s.conic, s.opacity, s.depth, vals)
                worst = max(worst, float(np.abs(img[py, px] - ref).max()))
    return worst <= 1e-6, f"max abs error {worst:.2e}"


def check_flat_gaussians(rng, n=10000):
    v = rng.normal(size=(3 * n, 3))
    f = np.arange(3 * n).reshape(n, 3)
    mesh = TriMesh(v, f, Layer.BODY)
    gs = sample_gaussians(mesh, 1)
    gs.scales[:] = rng.uniform(0.1, 1.0, size=gs.scales.shape)
    geo = gaussian_geometry(gs, mesh)
    w, vec = np.linalg.eigh(geo.covariance)
    _, normals = face_frames(mesh)
    normals = normals[gs.face]
    err_val = np.abs(w[:, 0] - FLAT_SCALE ** 2).max()
    par = np.abs(np.abs(np.sum(vec[:, :, 0] * normals, axis=1)) - 1).max()
    return err_val <= 1e-12 and par <= 1e-6, f"eigenvalue err {err_val:.1e}, normal misalignment {par:.1e}"


def check_graph_audit(rng, frames=20):
    body = icosphere(0.5, 2)
    cl = cape(0.52, 6)
    g = build_graph(cl, body, 2, 0.03, PhysicalParams(), pinned=np.arange(7))
    st = SimState.from_graph(g)
    pred = AnalyticPredictor()
    bad = 0
    for t in range(1, frames + 1):
        shift = np.array([0.0, 0.004 * math.sin(t / 3), 0.0])
        st = step(st, None, pred, PhysicalParams(), 1e-3, body_positions=body.vertices + shift)
        ref = nearest_body_edges(st.clothing_positions, st.body_positions, 0.03)
        d = np.linalg.norm(st.clothing_positions[:, None] - st.body_positions[None], axis=2)
        brute = [(i, int(np.argmin(d[i]))) for i in range(len(d)) if d[i].min() <= 0.03]
        got = [tuple(e) for e in st.graph.body_edges.tolist()]
        bad += got != brute or not np.array_equal(st.graph.body_edges, ref)
    return bad == 0, f"{bad} mismatching frames of {frames}"


def check_free_fall(rng, steps=200):
    sheet = grid_sheet(1, 1, (0.1, 0.1), origin=(0, 0, 10.0))
    body = icosphere(0.1, 0, center=(100.0, 0, 0))
    g = build_graph(sheet, body, 0, 0.01, areas=np.zeros(4))
    st = SimState.from_graph(g)
    pred = AnalyticPredictor()
    dt = 1.0 / 128
    for _ in range(steps):
        st = step(st, None, pred, PhysicalParams(), dt)
    expect = sheet.vertices[:, 2] - pred.gravity * dt * dt * (steps * (steps + 1) // 2)
    ok = np.array_equal(st.clothing_positions[:, 2], expect)
    return ok, "bitwise match" if ok else f"max diff {np.abs(st.clothing_positions[:, 2] - expect).max():.2e}"


def check_momentum(rng, steps=200):
    sheet = grid_sheet(3, 3, (0.3, 0.3))
    body = icosphere(0.1, 0, center=(100.0, 0, 0))
    g = build_graph(sheet, body, 1, 0.01, areas=np.ones(sheet.n_vertices))
    x = sheet.vertices + rng.normal(scale=0.02, size=sheet.vertices.shape)
    v = rng.normal(scale=0.1, size=x.shape)
    st = SimState(0, x, v, g.body_positions, np.zeros_like(g.body_positions), g)
    pred = AnalyticPredictor(use_gravity=False, use_contact=False, drag=0.0)
    rho = PhysicalParams(1.0, 1e-2, 5.0, 0.3)
    forces = pred.forces(st.graph.with_state(x, v), rho)
    fsum = np.abs(forces["stretch"].sum(0) + forces["bend"].sum(0)).max()
    p0 = v.sum(axis=0)
    for _ in range(steps):
        st = step(st, None, pred, rho, 1e-3)
    drift = np.abs(st.clothing_velocities.sum(axis=0) - p0).max()
    return drift <= 1e-6 and fsum <= 1e-9, f"momentum drift {drift:.1e}, internal force sum {fsum:.1e}"


def check_tryon(rng):
    body = icosphere(0.5, 2)
    cl = tryon_cape(int(rng.integers(1 << 16)))
    x = resolve_collisions(cl.vertices, body, None, 0.005, cl)
    m = margins(x, body)
    return bool(np.all(m >= 0.005 - 1e-9)), f"min margin {m.min():.6f}"


def check_rigid_equivariance(rng, trials=20):
    from scipy.spatial.transform import Rotation

    worst = 0.0
    mesh = icosphere(0.5, 1)
    gs = sample_gaussians(mesh, 3)
    gs.offset[:] = rng.uniform(-0.01, 0.01, size=len(gs))
    base = gaussian_geometry(gs, mesh)
    for _ in range(trials):
        r = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
        t = rng.normal(size=3)
        geo = gaussian_geometry(gs, mesh, mesh.vertices @ r.T + t)
        worst = max(worst, float(np.abs(geo.mean - (base.mean @ r.T + t)).max()),
                    float(np.abs(geo.covariance - r @ base.covariance @ r.T).max()))
    return worst <= 1e-9, f"max deviation {worst:.1e}"


def check_lbs_exactness(rng, trials=20):
    worst = 0.0
    ident = True
    for _ in range(trials):
        p = rng.normal(size=(30, 3))
        rig = _random_rig(rng, 30, 3)
        ident &= np.array_equal(deform(p, rig, Pose.identity(3)), p)
        one = SkinnedRig((Bone("root", -1, np.eye(4)),), np.ones((30, 1)))
        pose = _random_pose(rng, 1)
        g = pose.bone_transforms[0]
        worst = max(worst, float(np.abs(deform(p, one, pose) - (p @ g[:3, :3].T + g[:3, 3])).max()))
    return ident and worst <= 1e-9, f"identity bitwise {bool(ident)}, rigid error {worst:.1e}"


def check_collision_law(rng, scenes=100):
    body = icosphere(0.5, 2)
    eps = 0.01
    worst, disagree = 0.0, 0
    for _ in range(scenes):
        dirs = rng.normal(size=(8, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        x = dirs * rng.uniform(0.49, 0.53, size=(8, 1))
        m = margins(x, body)
        val = losses.collision_loss(x, body, body.vertices, eps)[0]
        disagree += (val == 0.0) != bool(np.all(m >= eps))
        # doubling the penetration of one vertex scales its hinge term by 8
        i = int(np.argmin(m))
        j, _ = nearest_vertex(x[i:i + 1], body.vertices)
        n = vertex_normals(body.vertices, body.faces)[j[0]]
        if m[i] < eps:
            y = x[i:i + 1] - (eps - m[i]) * n
            v1 = losses.collision_loss(x[i:i + 1], body, body.vertices, eps)[0]
            v2 = losses.collision_loss(y, body, body.vertices, eps)[0]
            if nearest_vertex(y, body.vertices)[0][0] == j[0]:
                worst = max(worst, abs(v2 / v1 - 8.0))
    return disagree == 0 and worst <= 1e-12, f"ratio error {worst:.1e}, audit disagreements {disagree}"


SUITES = {
    "compositing_oracle": check_compositing,
    "flat_gaussians": check_flat_gaussians,
    "rigid_equivariance": check_rigid_equivariance,
    "lbs_exactness": check_lbs_exactness,
    "collision_cubic_law": check_collision_law,
    "graph_audit": check_graph_audit,
    "free_fall": check_free_fall,
    "momentum": check_momentum,
    "tryon_margin": check_tryon,
}


def run_checks(seed: int = 0, trials: int = 20) -> list[CheckResult]:
    """Run every suite once; gradient suites are named ``gradient:<term>``."""
    out = []
    for term, fn in GRADIENT_SUITES.items():
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            err = fn(rng, trials)
            out.append(CheckResult(f"gradient:{term}", err <= TOL, f"max rel error {err:.2e}",
                                   time.perf_counter() - t0))
        except Exception as exc:  # report, don't abort the table
            out.append(CheckResult(f"gradient:{term}", False, f"raised {exc!r}", time.perf_counter() - t0))
    for name, fn in SUITES.items():
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:
            ok, detail = False, f"raised {exc!r}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time     detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:6.2f}s  {r.detail}")
    return "\n".join(lines)
