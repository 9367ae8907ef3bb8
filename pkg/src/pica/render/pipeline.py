"""Scene-level rendering of one or more Gaussian layers and its backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gaussians import GaussianGeometry, GaussianSet, face_extents, gaussian_geometry
from ..mesh import TriMesh, face_frames
from .camera import Camera
from .projection import Splats, project_backward, project_gaussians
from .raster import RasterRecord, rasterize, rasterize_backward
from .shading import ColorModel, canonical_view_dirs

CHANNELS = ("color", "mask", "label")


@dataclass
class SceneLayer:
    gaussians: GaussianSet
    mesh: TriMesh
    positions: np.ndarray
    pose_matrix: np.ndarray | None = None


@dataclass
class RenderResult:
    color: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W)
    label: np.ndarray  # (H, W)
    record: RasterRecord
    geom: GaussianGeometry
    model: ColorModel
    dprime: np.ndarray
    view_u: np.ndarray
    raw: np.ndarray
    normals: np.ndarray
    extents: np.ndarray
    slices: list[slice]
    cam: Camera
    pose_descriptor: np.ndarray | None

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise ValueError(f"unknown channel {name!r}")
        return getattr(self, name)


@dataclass
class LayerGrads:
    opacity: np.ndarray
    features: np.ndarray
    scales: np.ndarray
    offset: np.ndarray
    pose_matrix: np.ndarray | None


def _stack_layers(layers: list[SceneLayer]):
    geoms, normals, exts, feats, poses, opac, labels, slices = [], [], [], [], [], [], [], []
    start = 0
    any_pose = any(l.pose_matrix is not None for l in layers)
    for layer in layers:
        gs = layer.gaussians
        geoms.append(gaussian_geometry(gs, layer.mesh, layer.positions))
        _, n = face_frames(layer.mesh, layer.positions)
        normals.append(n[gs.face])
        exts.append(face_extents(layer.mesh, np.asarray(layer.positions))[gs.face])
        feats.append(gs.features)
        opac.append(gs.opacity)
        labels.append(gs.label.astype(np.float64))
        if any_pose:
            poses.append(layer.pose_matrix)
        slices.append(slice(start, start + len(gs)))
        start += len(gs)
    geom = GaussianGeometry(*(np.concatenate([getattr(g, k) for g in geoms]) if geoms else np.zeros((0,))
                              for k in ("mean", "rotation", "scale", "covariance")))
    pose = None
    if any_pose:
        dims = {p.shape[2] for p in poses if p is not None}
        if len(dims) != 1:
            raise ValueError("pose matrices of all layers must share a descriptor size")
        d = dims.pop()
        pose = np.concatenate([p if p is not None else np.zeros((len(l.gaussians), 3, d))
                               for p, l in zip(poses, layers)])
    model = ColorModel.from_features(np.concatenate(feats), pose)
    return (geom, np.concatenate(normals), np.concatenate(exts), model,
            np.concatenate(opac), np.concatenate(labels), slices)


def render_all(layers: list[SceneLayer], cam: Camera,
               pose_descriptor: np.ndarray | None = None) -> RenderResult:
    """Render color, mask and label channels in a single compositing pass."""
    h, w = cam.height, cam.width
    if not layers or sum(len(l.gaussians) for l in layers) == 0:
        z = np.zeros((h, w))
        empty = Splats.from_2d(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros(0))
        rec = RasterRecord(empty, np.zeros((0, 5)), np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                           np.zeros((h, w), dtype=np.int64), np.ones((h, w)), w, h)
        return RenderResult(np.zeros((h, w, 3)), z, z.copy(), rec, None, None, None, None, None, None, None,
                            [], cam, pose_descriptor)
    geom, normals, exts, model, opacity, labels, slices = _stack_layers(layers)
    dprime, u = canonical_view_dirs(geom, cam)
    raw = model.raw(dprime, pose_descriptor)
    rgb = np.clip(raw, 0.0, 1.0)
    values = np.column_stack([rgb, np.ones(len(rgb)), labels])
    splats = project_gaussians(geom, cam, opacity)
    img, rec = rasterize(splats, values, w, h)
    return RenderResult(img[..., :3], img[..., 3], img[..., 4], rec, geom, model, dprime, u, raw,
                        normals, exts, slices, cam, pose_descriptor)


def render(layers: list[SceneLayer], cam: Camera, pose_descriptor: np.ndarray | None = None,
           channel: str = "color") -> np.ndarray:
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    return render_all(layers, cam, pose_descriptor).channel(channel)


def backward_render(result: RenderResult | None, grad_color: np.ndarray | None = None,
                    grad_mask: np.ndarray | None = None,
                    grad_label: np.ndarray | None = None) -> list[LayerGrads]:
    """Reverse-mode gradients of a pixel loss w.r.t. each layer's parameters.

    Inputs are dL/d(image buffers). Outputs per layer: opacity, flat color
    features, the two tangential scale factors, the normal offset, and the
    pose-correction matrix when present.
    """
    if result is None or result.record is None:
        raise ValueError("backward_render needs a recorded forward pass")
    if result.geom is None:
        return []
    h, w = result.cam.height, result.cam.width
    gimg = np.zeros((h, w, 5))
    if grad_color is not None:
        gimg[..., :3] = grad_color
    if grad_mask is not None:
        gimg[..., 3] = grad_mask
    if grad_label is not None:
        gimg[..., 4] = grad_label
    rg = rasterize_backward(result.record, gimg)

    d_feat, d_pose, d_dprime = result.model.backward(result.dprime, result.pose_descriptor,
                                                     result.raw, rg.values[:, :3])
    geom = result.geom
    d_mean, d_cov = project_backward(result.record.splats, result.cam, geom, rg.mean2d, rg.conic)
    # view-direction path: dprime = R^T u/|u|
    u = result.view_u
    nu = np.linalg.norm(u, axis=1)
    d = u / nu[:, None]
    d_d = np.einsum("nij,nj->ni", geom.rotation, d_dprime)
    d_mean += (d_d - d * np.sum(d * d_d, axis=1)[:, None]) / nu[:, None]

    r2, r3 = geom.rotation[:, :, 1], geom.rotation[:, :, 2]
    d_s2 = 2 * geom.scale[:, 1] * np.einsum("ni,nij,nj->n", r2, d_cov, r2)
    d_s3 = 2 * geom.scale[:, 2] * np.einsum("ni,nij,nj->n", r3, d_cov, r3)
    d_scales = np.column_stack([d_s2, d_s3]) * result.extents
    d_offset = np.sum(d_mean * result.normals, axis=1)

    out = []
    for sl in result.slices:
        out.append(LayerGrads(rg.opacity[sl].copy(), d_feat[sl].copy(), d_scales[sl].copy(),
                              d_offset[sl].copy(), None if d_pose is None else d_pose[sl].copy()))
    return out
