"""Gradient-descent reconstruction of a two-layer avatar from posed views.

The optimized state is the body and clothing canonical vertices, the
clothing blend weights, per-frame non-rigid offsets of both layers, and the
Gaussian opacities, tangential scales, normal offsets, color features and
pose-correction matrices. Photometric gradients reach the Gaussian
parameters through the analytic render backward; vertex positions, weights
and offsets are driven by the geometry and collision terms.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .gaussians import (
    OPACITY_EPS, GaussianSet, clamp_opacity, max_offset, read_gaussians, sample_gaussians, write_gaussians,
)
from .losses import (
    TERMS, LossReport, LossWeights, appearance_losses, collision_loss, geometry_losses, offset_smoothness,
    opacity_loss,
)
from .mesh import Layer, TriMesh, load_mesh, save_obj
from .render import Camera, SceneLayer, backward_render, read_camera, render_all
from .render.images import read_binary_mask, read_image
from .skinning import (
    Pose, SkinnedRig, deform, deform_vjp, init_blend_weights, project_simplex, read_animation, read_rig, write_rig,
)

log = logging.getLogger(__name__)

MIN_SCALE = 1e-3
GROUPS = ("opacity", "features", "scales", "offset", "pose_matrix",
          "body_vertices", "clothing_vertices", "clothing_weights", "frame_offsets")


class NumericalError(RuntimeError):
    """Raised when a loss term produces a non-finite value or gradient."""


# ---------------------------------------------------------------- state


@dataclass
class Avatar:
    body: TriMesh
    clothing: TriMesh
    rig: SkinnedRig
    clothing_weights: np.ndarray
    body_gaussians: GaussianSet
    clothing_gaussians: GaussianSet
    body_positions: np.ndarray
    clothing_positions: np.ndarray
    body_initial: np.ndarray
    body_offsets: np.ndarray  # (T, Vb, 3)
    clothing_offsets: np.ndarray  # (T, Vc, 3)
    body_pose_matrix: np.ndarray | None = None
    clothing_pose_matrix: np.ndarray | None = None

    @classmethod
    def initial(cls, body: TriMesh, clothing: TriMesh, rig: SkinnedRig, n_frames: int = 1,
                per_face: int = 13, pose_dim: int | None = None) -> "Avatar":
        """Fresh state: default Gaussians, nearest-body clothing weights, zero offsets."""
        cw = init_blend_weights(clothing, body, rig)
        bg, cg = sample_gaussians(body, per_face), sample_gaussians(clothing, per_face)
        pm_b = pm_c = None
        if pose_dim:
            pm_b, pm_c = np.zeros((len(bg), 3, pose_dim)), np.zeros((len(cg), 3, pose_dim))
        return cls(body, clothing, rig, cw, bg, cg, body.vertices.copy(), clothing.vertices.copy(),
                   body.vertices.copy(), np.zeros((n_frames, body.n_vertices, 3)),
                   np.zeros((n_frames, clothing.n_vertices, 3)), pm_b, pm_c)

    def copy(self) -> "Avatar":
        cp = lambda a: None if a is None else a.copy()
        return replace(self, clothing_weights=self.clothing_weights.copy(),
                       body_gaussians=self.body_gaussians.copy(), clothing_gaussians=self.clothing_gaussians.copy(),
                       body_positions=self.body_positions.copy(), clothing_positions=self.clothing_positions.copy(),
                       body_initial=self.body_initial.copy(), body_offsets=self.body_offsets.copy(),
                       clothing_offsets=self.clothing_offsets.copy(), body_pose_matrix=cp(self.body_pose_matrix),
                       clothing_pose_matrix=cp(self.clothing_pose_matrix))

    def posed(self, pose: Pose, frame: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Observed-space body and clothing vertices; offsets of ``frame`` if given."""
        ob = None if frame is None else self.body_offsets[frame]
        oc = None if frame is None else self.clothing_offsets[frame]
        body = deform(self.body_positions, self.rig, pose.with_offsets(ob))
        cloth = deform(self.clothing_positions, self.rig, pose.with_offsets(oc), self.clothing_weights)
        return body, cloth

    def layers(self, body_positions: np.ndarray, clothing_positions: np.ndarray) -> list[SceneLayer]:
        return [SceneLayer(self.body_gaussians, self.body, body_positions, self.body_pose_matrix),
                SceneLayer(self.clothing_gaussians, self.clothing, clothing_positions, self.clothing_pose_matrix)]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for tag, gs in (("body", self.body_gaussians), ("clothing", self.clothing_gaussians)):
            for k in ("opacity", "features", "scales", "offset"):
                out[f"{tag}.{k}"] = getattr(gs, k)
        for k in ("body_positions", "clothing_positions", "clothing_weights", "body_offsets", "clothing_offsets",
                  "body_pose_matrix", "clothing_pose_matrix"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        return out


# ---------------------------------------------------------------- dataset


@dataclass
class View:
    camera: Camera
    image: np.ndarray
    mask: np.ndarray
    segmentation: np.ndarray
    name: str = ""


@dataclass
class Frame:
    pose: Pose
    views: list[View]


def load_dataset(manifest: str | os.PathLike, n_bones: int) -> list[Frame]:
    """Read a YAML manifest of posed multi-view frames.

    Layout::

        cameras: {cam0: cameras/cam0.txt}
        animation: poses.txt
        frames:
          - {image: img/0_cam0.png, mask: ..., segmentation: ..., camera: cam0, pose: 0}

    Relative paths resolve against the manifest's directory. Every path is
    checked before any image is decoded.
    """
    root = Path(manifest).parent
    with open(manifest, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ValueError(f"{manifest}: manifest needs a 'frames' list")
    rel = lambda p: (root / p) if not os.path.isabs(p) else Path(p)
    cams_doc = doc.get("cameras", {})
    entries = doc["frames"]
    missing = []
    for key in ("animation",):
        if key in doc and not rel(doc[key]).exists():
            missing.append(str(rel(doc[key])))
    for cid, p in cams_doc.items():
        if not rel(p).exists():
            missing.append(str(rel(p)))
    for i, e in enumerate(entries):
        for key in ("image", "mask", "segmentation"):
            if key not in e:
                raise ValueError(f"{manifest}: frame entry {i} lacks '{key}'")
            if not rel(e[key]).exists():
                missing.append(str(rel(e[key])))
        if e.get("camera") not in cams_doc:
            raise ValueError(f"{manifest}: frame entry {i} names unknown camera {e.get('camera')!r}")
    if missing:
        raise FileNotFoundError("missing dataset files: " + ", ".join(missing))
    poses = read_animation(rel(doc["animation"]), n_bones) if "animation" in doc else [Pose.identity(n_bones)]
    cams = {cid: read_camera(rel(p)) for cid, p in cams_doc.items()}
    by_pose: dict[int, list[View]] = {}
    for e in entries:
        k = int(e.get("pose", 0))
        if not 0 <= k < len(poses):
            raise ValueError(f"{manifest}: pose reference {k} out of range")
        by_pose.setdefault(k, []).append(View(
            cams[e["camera"]], read_image(rel(e["image"]))[..., :3], read_binary_mask(rel(e["mask"])),
            read_binary_mask(rel(e["segmentation"])), str(e["camera"])))
    return [Frame(poses[k], by_pose[k]) for k in sorted(by_pose)]


# ---------------------------------------------------------------- schedule


DEFAULT_LR = {
    "opacity": 2e3, "features": 2e4, "scales": 2e3, "offset": 1e-1, "pose_matrix": 1e3,
    "body_vertices": 1e-3, "clothing_vertices": 1e-3, "clothing_weights": 1e-3, "frame_offsets": 1e-3,
}


@dataclass
class Schedule:
    iterations: int = 300
    lr: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LR))
    decay: str = "cosine"  # or "constant"
    min_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.lr) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        self.lr = {**{g: 0.0 for g in GROUPS}, **self.lr}
        if self.decay not in ("cosine", "constant"):
            raise ValueError("decay must be 'cosine' or 'constant'")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def factor(self, it: int) -> float:
        if self.decay == "constant" or self.iterations <= 1:
            return 1.0
        c = 0.5 * (1 + math.cos(math.pi * it / (self.iterations - 1)))
        return self.min_factor + (1 - self.min_factor) * c


# ---------------------------------------------------------------- loss + gradient


def _check(term: str, *arrays) -> None:
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite gradient in loss term '{term}'")


def evaluate(avatar: Avatar, frames: list[Frame], weights: LossWeights,
             with_ssim: bool = False) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Total loss report and the gradient of the weighted objective."""
    grads = {k: np.zeros_like(v) for k, v in avatar.parameters().items()}
    report = LossReport()
    n_views = sum(len(f.views) for f in frames)
    if n_views == 0:
        raise ValueError("fit needs at least one view")
    bg, cg = avatar.body_gaussians, avatar.clothing_gaussians
    for t, fr in enumerate(frames):
        body_p, cloth_p = avatar.posed(fr.pose, t)
        layers = avatar.layers(body_p, cloth_p)
        desc = fr.pose.descriptor() if avatar.body_pose_matrix is not None else None
        for view in fr.views:
            res = render_all(layers, view.camera, desc)
            rep, g = appearance_losses(res.color, res.mask, res.label, view.image, view.mask,
                                       view.segmentation, weights, with_ssim)
            report.merge(rep, 1.0 / n_views)
            lg = backward_render(res, g["color"] / n_views, g["mask"] / n_views, g["label"] / n_views)
            _check("appearance", *(a for x in lg for a in (x.opacity, x.features, x.scales, x.offset)))
            for tag, x in zip(("body", "clothing"), lg):
                grads[f"{tag}.opacity"] += x.opacity
                grads[f"{tag}.features"] += x.features
                grads[f"{tag}.scales"] += x.scales
                grads[f"{tag}.offset"] += x.offset
                if x.pose_matrix is not None:
                    grads[f"{tag}_pose_matrix"] += x.pose_matrix
        # collision on posed geometry, pulled back to canonical state
        cv, gc, gb = collision_loss(cloth_p, avatar.body, body_p, weights.collision_eps)
        _check("collision", gc, gb)
        report.merge(LossReport({"collision": cv}, {"collision": weights.collision}), 1.0 / len(frames))
        gc *= weights.collision
        gb *= weights.collision
        gc /= len(frames)
        gb /= len(frames)
        pose_c = fr.pose.with_offsets(avatar.clothing_offsets[t])
        gpc, gwc = deform_vjp(avatar.clothing_positions, gc, avatar.rig, pose_c, avatar.clothing_weights)
        pose_b = fr.pose.with_offsets(avatar.body_offsets[t])
        gpb, _ = deform_vjp(avatar.body_positions, gb, avatar.rig, pose_b)
        grads["clothing_positions"] += gpc
        grads["clothing_offsets"][t] += gpc
        grads["clothing_weights"] += gwc
        grads["body_positions"] += gpb
        grads["body_offsets"][t] += gpb

    opac = np.concatenate([bg.opacity, cg.opacity])
    ov, og = opacity_loss(opac, 1.0)
    _check("opac", og)
    report.merge(LossReport({"opac": ov}, {"opac": weights.opac}))
    grads["body.opacity"] += weights.opac * og[:len(bg)]
    grads["clothing.opacity"] += weights.opac * og[len(bg):]

    grep, (gb, gc) = geometry_losses([avatar.body, avatar.clothing],
                                     [avatar.body_positions, avatar.clothing_positions], 0,
                                     avatar.body_initial, weights)
    _check("geometry", gb, gc)
    report.merge(grep)
    grads["body_positions"] += gb
    grads["clothing_positions"] += gc

    sv = 0.0
    for key in ("body_offsets", "clothing_offsets"):
        v, gs = offset_smoothness(list(getattr(avatar, key)))
        sv += v
        for t, g in enumerate(gs):
            grads[key][t] += weights.offset_smooth * g
    report.merge(LossReport({"offset_smooth": sv}, {"offset_smooth": weights.offset_smooth}))
    _check("offset_smooth", grads["body_offsets"], grads["clothing_offsets"])
    for k, v in report.terms.items():
        if not math.isfinite(v):
            raise NumericalError(f"non-finite value of loss term '{k}'")
    return report, grads


def _apply(avatar: Avatar, grads: dict[str, np.ndarray], lr: dict[str, float], f: float) -> None:
    for tag, mesh_key in (("body", "body"), ("clothing", "clothing")):
        gs = getattr(avatar, f"{tag}_gaussians")
        mesh = getattr(avatar, mesh_key)
        pos = getattr(avatar, f"{tag}_positions")
        gs.opacity = clamp_opacity(gs.opacity - f * lr["opacity"] * grads[f"{tag}.opacity"])
        gs.features = gs.features - f * lr["features"] * grads[f"{tag}.features"]
        gs.scales = np.maximum(gs.scales - f * lr["scales"] * grads[f"{tag}.scales"], MIN_SCALE)
        lim = max_offset(mesh, pos)
        gs.offset = np.clip(gs.offset - f * lr["offset"] * grads[f"{tag}.offset"], -lim, lim)
        pm = getattr(avatar, f"{tag}_pose_matrix")
        if pm is not None:
            setattr(avatar, f"{tag}_pose_matrix", pm - f * lr["pose_matrix"] * grads[f"{tag}_pose_matrix"])
    avatar.body_positions = avatar.body_positions - f * lr["body_vertices"] * grads["body_positions"]
    avatar.clothing_positions = avatar.clothing_positions - f * lr["clothing_vertices"] * grads["clothing_positions"]
    avatar.clothing_weights = project_simplex(
        avatar.clothing_weights - f * lr["clothing_weights"] * grads["clothing_weights"])
    avatar.body_offsets = avatar.body_offsets - f * lr["frame_offsets"] * grads["body_offsets"]
    avatar.clothing_offsets = avatar.clothing_offsets - f * lr["frame_offsets"] * grads["clothing_offsets"]


def fit(avatar: Avatar, frames: list[Frame], weights: LossWeights | None = None,
        schedule: Schedule | None = None, callback=None) -> tuple[Avatar, list[LossReport]]:
    """Plain gradient descent with per-group step sizes and cosine decay.

    Returns the fitted copy of ``avatar`` and one report per iteration,
    evaluated before that iteration's update, plus a final report.
    """
    weights = weights or LossWeights()
    schedule = schedule or Schedule()
    if not frames or sum(len(f.views) for f in frames) == 0:
        raise ValueError("fit needs at least one view")
    if len(avatar.body_offsets) < len(frames):
        raise ValueError("avatar has fewer offset frames than the dataset")
    state = avatar.copy()
    state.body_gaussians.opacity = clamp_opacity(state.body_gaussians.opacity)
    state.clothing_gaussians.opacity = clamp_opacity(state.clothing_gaussians.opacity)
    history: list[LossReport] = []
    if schedule.iterations == 0:
        return avatar.copy(), history
    for it in range(schedule.iterations):
        rep, grads = evaluate(state, frames, weights)
        history.append(rep)
        if callback is not None:
            callback(it, rep)
        _apply(state, grads, schedule.lr, schedule.factor(it))
    history.append(evaluate(state, frames, weights, with_ssim=True)[0])
    return state, history


def write_log(path: str | os.PathLike, history: list[LossReport]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        cols = list(history[0].row()) if history else [*TERMS, "ssim_metric", "total"]
        w.writerow(["iter", *cols])
        for i, rep in enumerate(history):
            row = rep.row()
            w.writerow([i, *(repr(float(row[c])) for c in cols)])


# ---------------------------------------------------------------- persistence


def save_avatar(root: str | os.PathLike, avatar: Avatar) -> None:
    """Write into ``root/gaussians`` and ``root/meshes``."""
    root = Path(root)
    (root / "gaussians").mkdir(parents=True, exist_ok=True)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    write_gaussians(root / "gaussians" / "body.txt", avatar.body_gaussians)
    write_gaussians(root / "gaussians" / "clothing.txt", avatar.clothing_gaussians)
    save_obj(root / "meshes" / "body.obj", avatar.body, avatar.body_positions)
    save_obj(root / "meshes" / "clothing.obj", avatar.clothing, avatar.clothing_positions)
    write_rig(root / "meshes" / "body_rig.txt", avatar.rig)
    write_rig(root / "meshes" / "clothing_rig.txt", avatar.rig.with_weights(avatar.clothing_weights))
    np.save(root / "meshes" / "body_offsets.npy", avatar.body_offsets)
    np.save(root / "meshes" / "clothing_offsets.npy", avatar.clothing_offsets)
    for tag in ("body", "clothing"):
        pm = getattr(avatar, f"{tag}_pose_matrix")
        if pm is not None:
            np.save(root / "gaussians" / f"{tag}_pose_matrix.npy", pm)


def load_avatar(root: str | os.PathLike) -> Avatar:
    root = Path(root)
    body = load_mesh(root / "meshes" / "body.obj", Layer.BODY)
    clothing = load_mesh(root / "meshes" / "clothing.obj", Layer.CLOTHING)
    rig = read_rig(root / "meshes" / "body_rig.txt", body.n_vertices)
    cw = read_rig(root / "meshes" / "clothing_rig.txt", clothing.n_vertices).weights
    pms = []
    for tag in ("body", "clothing"):
        p = root / "gaussians" / f"{tag}_pose_matrix.npy"
        pms.append(np.load(p) if p.exists() else None)
    return Avatar(body, clothing, rig, cw, read_gaussians(root / "gaussians" / "body.txt"),
                  read_gaussians(root / "gaussians" / "clothing.txt"), body.vertices.copy(),
                  clothing.vertices.copy(), body.vertices.copy(),
                  np.load(root / "meshes" / "body_offsets.npy"), np.load(root / "meshes" / "clothing_offsets.npy"),
                  pms[0], pms[1])
