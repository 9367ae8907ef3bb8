"""Synthetic meshes, cameras and scenes used by the demo, checks and tests."""

from __future__ import annotations

import numpy as np

from .mesh import Layer, TriMesh
from .render.camera import Camera, look_at


def icosphere(radius: float = 0.5, subdivisions: int = 2, center=(0.0, 0.0, 0.0),
              layer: Layer = Layer.BODY) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nf
    return TriMesh(np.array(verts) * radius + np.asarray(center), np.array(faces), layer)


def grid_sheet(nx: int = 4, ny: int = 4, size=(1.0, 1.0), origin=(0.0, 0.0, 0.0),
               layer: Layer = Layer.CLOTHING) -> TriMesh:
    """Planar grid in the z = origin_z plane, normals along +z; 2*nx*ny triangles."""
    xs = np.linspace(0, size[0], nx + 1)
    ys = np.linspace(0, size[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)]) + np.asarray(origin)
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            faces += [(a, b, d), (a, d, c)]
    return TriMesh(verts, np.array(faces), layer)


def cape(radius: float = 0.55, n: int = 10, theta=(0.15, 1.7), phi=(-1.2, 1.2),
         center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Spherical-shell patch over the back (-y side) of a sphere; 2*n*n triangles.

    ``theta`` is the polar angle from +z, ``phi`` the azimuth around the
    back direction. Face normals point away from the sphere center.
    """
    th = np.linspace(theta[0], theta[1], n + 1)
    ph = np.linspace(phi[0], phi[1], n + 1)
    verts = []
    for t in th:
        for p in ph:
            verts.append((np.sin(t) * np.sin(p), -np.sin(t) * np.cos(p), np.cos(t)))
    verts = np.array(verts) * radius + np.asarray(center)
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 1, a + n + 2
            faces += [(a, d, b), (a, c, d)]
    mesh = TriMesh(verts, np.array(faces), Layer.CLOTHING)
    cen = mesh.vertices[mesh.faces].mean(axis=1) - np.asarray(center)
    from .mesh import face_normals

    if np.sum(face_normals(mesh.vertices, mesh.faces) * cen) < 0:
        mesh = TriMesh(verts, np.array(faces)[:, ::-1], Layer.CLOTHING)
    return mesh


def ring_cameras(n: int = 8, distance: float = 2.5, height: float = 0.4, target=(0.0, 0.0, 0.0),
                 width: int = 256, image_height: int = 256, fov_deg: float = 40.0,
                 phase: float = 0.0) -> list[Camera]:
    cams = []
    for k in range(n):
        a = phase + 2 * np.pi * k / n
        z = height * (1 if k % 2 == 0 else -1)
        eye = np.asarray(target) + np.array([distance * np.cos(a), distance * np.sin(a), z])
        cams.append(look_at(eye, target, width=width, height=image_height, fov_deg=fov_deg))
    return cams


def smooth_texture(points: np.ndarray, seed: int = 0) -> np.ndarray:
    """Deterministic smooth RGB field in [0.1, 0.9] over 3D points."""
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(3, 3)) * 3.0
    ph = rng.uniform(0, 2 * np.pi, size=3)
    return 0.5 + 0.4 * np.sin(points @ k.T + ph)


def strip(n_faces: int = 5, length: float = 1.0, width: float = 0.4, origin=(0.0, 0.0, 0.0),
          layer: Layer = Layer.BODY) -> TriMesh:
    """Triangle strip in the z = origin_z plane with +z normals."""
    n_cols = (n_faces + 2 + 1) // 2
    xs = np.linspace(0, length, n_cols)
    top = np.column_stack([xs, np.full(n_cols, width), np.zeros(n_cols)])
    bot = np.column_stack([xs, np.zeros(n_cols), np.zeros(n_cols)])
    verts = np.empty((2 * n_cols, 3))
    verts[0::2], verts[1::2] = bot, top
    faces = []
    for k in range(n_faces):
        faces.append((k, k + 2, k + 1) if k % 2 == 0 else (k, k + 1, k + 2))
    used = max(max(f) for f in faces) + 1
    return TriMesh(verts[:used] + np.asarray(origin), np.array(faces), layer)


# ---------------------------------------------------------------- scenes


def _views(gt, cams):
    from .fitting import View

    body_p, cloth_p = gt.body_positions, gt.clothing_positions
    from .render import render_all

    out = []
    for k, c in enumerate(cams):
        r = render_all(gt.layers(body_p, cloth_p), c)
        out.append(View(c, r.color, (r.mask >= 0.5).astype(np.float64),
                        (r.label >= 0.5).astype(np.float64), f"cam{k}"))
    return out


def self_reconstruction_scene(size: int = 32, seed: int = 0):
    """Five Gaussians on a camera-facing strip seen by one camera.

    Returns ``(truth, start, frames)``; ``start`` differs from ``truth``
    only in the color features. The clothing layer has no Gaussians.
    """
    from .fitting import Avatar, Frame
    from .skinning import Pose, single_bone_rig

    body = strip(5, 1.0, 0.4, origin=(-0.5, -0.2, 0.0))
    clothing = grid_sheet(1, 1, (0.1, 0.1), origin=(5.0, 5.0, 5.0))
    start = Avatar.initial(body, clothing, single_bone_rig(body.n_vertices), per_face=1)
    start.clothing_gaussians = start.clothing_gaussians.take(slice(0, 0))
    start.body_gaussians.scales[:] = 0.6
    start.body_gaussians.opacity[:] = 0.8
    truth = start.copy()
    rng = np.random.default_rng(seed)
    truth.body_gaussians.features[:, :3] = rng.uniform(0.2, 0.8, size=(5, 3))
    truth.body_gaussians.features[:, 3:] = rng.normal(scale=0.05, size=(5, 12))
    cam = look_at((0.0, 0.0, 1.5), (0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), width=size, height=size, fov_deg=45.0)
    return truth, start, [Frame(Pose.identity(1), _views(truth, [cam]))]


def two_layer_truth(seed: int = 0):
    """Textured sphere body with a cape over its back, known Gaussian parameters."""
    from .fitting import Avatar
    from .gaussians import gaussian_positions
    from .skinning import single_bone_rig

    body = icosphere(0.5, 2)
    clothing = cape(0.55, 10)
    truth = Avatar.initial(body, clothing, single_bone_rig(body.n_vertices))
    rng = np.random.default_rng(seed)
    for k, (gs, mesh) in enumerate(((truth.body_gaussians, body), (truth.clothing_gaussians, clothing))):
        gs.features[:, :3] = smooth_texture(gaussian_positions(gs, mesh), seed=seed + 1 + k)
        gs.features[:, 3:] = rng.normal(scale=0.02, size=gs.features[:, 3:].shape)
        gs.opacity[:] = 0.9
        gs.scales[:] = 0.45
    return truth


def two_layer_scene(size: int = 256, n_views: int = 8, seed: int = 0):
    """Training views, a held-out view facing the cape, and a fresh start state.

    Returns ``(truth, start, frames, held_out_view)``. The start state keeps
    the true meshes but resets every Gaussian parameter to its default.
    """
    from .fitting import Avatar, Frame
    from .skinning import Pose

    truth = two_layer_truth(seed)
    cams = ring_cameras(n_views, width=size, image_height=size)
    held = ring_cameras(1, height=0.0, phase=1.5 * np.pi + np.pi / n_views, width=size, image_height=size)[0]
    start = Avatar.initial(truth.body, truth.clothing, truth.rig)
    return truth, start, [Frame(Pose.identity(1), _views(truth, cams))], _views(truth, [held])[0]


def rotating_sphere(radius: float = 0.5, subdivisions: int = 3, omega: float = 1.5, dt: float = 1e-3,
                    n_frames: int = 30) -> tuple[TriMesh, np.ndarray]:
    """Sphere mesh and its vertex trajectory spinning about +z."""
    from scipy.spatial.transform import Rotation

    body = icosphere(radius, subdivisions)
    traj = np.stack([body.vertices @ Rotation.from_rotvec([0.0, 0.0, omega * t * dt]).as_matrix().T
                     for t in range(n_frames)])
    return body, traj


def draped_cape(gap: float = 0.003, n: int = 10) -> TriMesh:
    """200-triangle cape lying just inside the contact margin of a 0.5 m sphere."""
    return cape(0.5 + gap, n, theta=(0.4, 1.7))


def tryon_cape(seed: int = 0, n: int = 12) -> TriMesh:
    """Oversized wrinkled cape around a 0.5 m sphere; many vertices start inside."""
    m = cape(0.5, n, theta=(0.2, 2.6), phi=(-2.0, 2.0))
    rng = np.random.default_rng(seed)
    r = 1.0 + rng.uniform(-0.06, 0.06, size=m.n_vertices)
    return m.with_vertices(m.vertices * r[:, None])


def write_demo_scene(root, size: int = 64, n_views: int = 4, n_frames: int = 6, omega: float = 1.0,
                     dt: float = 1.0 / 30.0, seed: int = 0) -> dict:
    """Write a complete on-disk run: meshes, rig, cameras, posed views, animation, config.

    The two-layer truth avatar is rendered under the first two animation
    poses to produce the dataset. Also writes try-on assets (the truth
    clothing and an oversized cape with default Gaussians). Returns a dict
    of the written paths, including ``config``.
    """
    from pathlib import Path

    import yaml

    from .gaussians import sample_gaussians, write_gaussians
    from .mesh import save_obj
    from .render.camera import write_camera
    from .render.images import write_image
    from .skinning import Pose, rigid, write_animation, write_rig
    from scipy.spatial.transform import Rotation

    root = Path(root)
    for sub in ("data/cameras", "data/views", "assets"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    truth = two_layer_truth(seed)
    save_obj(root / "assets" / "body.obj", truth.body)
    save_obj(root / "assets" / "clothing.obj", truth.clothing)
    write_rig(root / "assets" / "rig.txt", truth.rig)
    poses = [Pose(t, rigid(Rotation.from_rotvec([0.0, 0.0, omega * t * dt]).as_matrix())[None])
             for t in range(n_frames)]
    write_animation(root / "data" / "animation.txt", poses)
    cams = ring_cameras(n_views, width=size, image_height=size)
    cam_entries = {}
    for k, c in enumerate(cams):
        write_camera(root / "data" / "cameras" / f"cam{k}.txt", c)
        cam_entries[f"cam{k}"] = f"cameras/cam{k}.txt"
    entries = []
    for t in range(min(2, n_frames)):
        bp, cp = truth.posed(poses[t])
        posed = truth.copy()
        posed.body_positions, posed.clothing_positions = bp, cp
        for k, view in enumerate(_views(posed, cams)):
            stem = f"views/{t}_cam{k}"
            write_image(root / "data" / f"{stem}.png", view.image)
            write_image(root / "data" / f"{stem}_mask.png", view.mask)
            write_image(root / "data" / f"{stem}_seg.png", view.segmentation)
            entries.append({"image": f"{stem}.png", "mask": f"{stem}_mask.png",
                            "segmentation": f"{stem}_seg.png", "camera": f"cam{k}", "pose": t})
    manifest = {"cameras": cam_entries, "animation": "animation.txt", "frames": entries}
    (root / "data" / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    write_gaussians(root / "assets" / "clothing_gaussians.txt", truth.clothing_gaussians)
    big = tryon_cape(seed)
    save_obj(root / "assets" / "tryon_cape.obj", big)
    write_gaussians(root / "assets" / "tryon_gaussians.txt", sample_gaussians(big, 4))
    config = {
        "paths": {"body_mesh": "assets/body.obj", "clothing_mesh": "assets/clothing.obj", "rig": "assets/rig.txt",
                  "dataset": "data/manifest.yaml", "animation": "data/animation.txt",
                  "cameras": ["data/cameras/cam0.txt"], "output": "out",
                  "tryon_mesh": "assets/tryon_cape.obj", "tryon_gaussians": "assets/tryon_gaussians.txt"},
        "schedule": {"iterations": 5},
        "fit": {"per_face": 13},
        "sim": {"dt": dt, "substeps": 20, "pinned": list(range(11))},
        "seed": seed,
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return {"root": root, "config": root / "config.yaml", "manifest": root / "data" / "manifest.yaml"}
