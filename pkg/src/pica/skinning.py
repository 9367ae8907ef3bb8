"""Linear blend skinning with canonical-space non-rigid offsets.

Rig file format (``#`` comments allowed)::

    bone <name> <parent> tx ty tz qx qy qz qw
    ...
    weights
    <vertex> <bone>:<weight> [<bone>:<weight> ...]

``parent`` is ``-1`` for roots; ``<bone>`` is a bone index or name. The
``tx..qw`` values of a bone record are its rest transform.

Animation file format::

    frame <t>
    <bone> tx ty tz qx qy qz qw
    ...

Each per-bone record in an animation is the skinning transform ``G`` that
maps canonical-space points to observed space.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import TriMesh, nearest_vertex

WEIGHT_TOL = 1e-6
RIGID_TOL = 1e-6


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int
    rest: np.ndarray


@dataclass(frozen=True, eq=False)
class SkinnedRig:
    bones: tuple[Bone, ...]
    weights: np.ndarray  # (V, B) dense, rows on the simplex

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bones", tuple(self.bones))
        if w.ndim != 2 or w.shape[1] != len(self.bones):
            raise ValueError(f"weights shape {w.shape} does not match {len(self.bones)} bones")
        for i, b in enumerate(self.bones):
            if b.parent >= i:
                raise ValueError(f"bone {b.name!r}: parent index must precede the bone")
        check_weights(w)

    @property
    def n_bones(self) -> int:
        return len(self.bones)

    def bone_index(self, key: str | int) -> int:
        if isinstance(key, (int, np.integer)) or str(key).lstrip("-").isdigit():
            return int(key)
        for i, b in enumerate(self.bones):
            if b.name == key:
                return i
        raise KeyError(f"unknown bone {key!r}")

    def with_weights(self, weights: np.ndarray) -> "SkinnedRig":
        return SkinnedRig(self.bones, weights)


def check_weights(w: np.ndarray, tol: float = WEIGHT_TOL) -> None:
    if np.any(w < -tol):
        raise ValueError("negative blend weight")
    err = np.abs(w.sum(axis=1) - 1.0)
    if len(err) and err.max() > tol:
        raise ValueError(f"blend weights of vertex {int(np.argmax(err))} do not sum to 1")


def single_bone_rig(n_vertices: int, name: str = "root") -> SkinnedRig:
    return SkinnedRig((Bone(name, -1, np.eye(4)),), np.ones((n_vertices, 1)))


@dataclass(frozen=True, eq=False)
class Pose:
    frame: int
    bone_transforms: np.ndarray  # (B, 4, 4)
    offsets: np.ndarray | None = field(default=None)

    def __post_init__(self):
        g = np.array(self.bone_transforms, dtype=np.float64).reshape(-1, 4, 4)
        object.__setattr__(self, "bone_transforms", g)
        r = g[:, :3, :3]
        eye = np.broadcast_to(np.eye(3), r.shape)
        if np.abs(np.swapaxes(r, 1, 2) @ r - eye).max(initial=0) > RIGID_TOL or \
                np.abs(np.linalg.det(r) - 1).max(initial=0) > RIGID_TOL:
            raise ValueError(f"frame {self.frame}: bone transforms must be rigid")

    @staticmethod
    def identity(n_bones: int, frame: int = 0) -> "Pose":
        return Pose(frame, np.tile(np.eye(4), (n_bones, 1, 1)))

    def with_offsets(self, offsets: np.ndarray | None) -> "Pose":
        return Pose(self.frame, self.bone_transforms, offsets)

    def descriptor(self) -> np.ndarray:
        """First two rotation columns of every bone, concatenated (6 per bone)."""
        r = self.bone_transforms[:, :3, :2]
        return np.swapaxes(r, 1, 2).reshape(-1)


def rigid(rotation: np.ndarray | None = None, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    m = np.eye(4)
    if rotation is not None:
        m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def blend_matrices(weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Per-vertex blended 3x4 affine maps ``sum_i w_i G_i``, shape (V, 3, 4)."""
    return np.einsum("vb,bij->vij", weights, transforms[:, :3, :])


def deform(positions: np.ndarray, rig: SkinnedRig, pose: Pose,
           weights: np.ndarray | None = None) -> np.ndarray:
    """Canonical to observed space: ``p' = sum_i w_i G_i (p + dp)``.

    ``weights`` overrides the rig's blend weights (used for the optimizable
    clothing weights).
    """
    p = np.asarray(positions, dtype=np.float64)
    w = rig.weights if weights is None else np.asarray(weights)
    if w.shape[0] != len(p):
        raise ValueError(f"{len(p)} vertices but {w.shape[0]} weight rows")
    if w.shape[1] != len(pose.bone_transforms):
        raise ValueError("pose bone count does not match weights")
    check_weights(w)
    if pose.offsets is not None:
        p = p + pose.offsets
    # blend the displacement G_i - I so identity bones add exactly zero
    rel = pose.bone_transforms - np.eye(4)
    m = blend_matrices(w, rel)
    return p + np.einsum("vij,vj->vi", m[:, :, :3], p) + m[:, :, 3]


def deform_jacobian(rig: SkinnedRig, pose: Pose, weights: np.ndarray | None = None) -> np.ndarray:
    """d p' / d dp for every vertex: ``sum_i w_i R_i``, shape (V, 3, 3)."""
    w = rig.weights if weights is None else np.asarray(weights)
    return blend_matrices(w, pose.bone_transforms)[:, :, :3]


def deform_vjp(positions: np.ndarray, grad_out: np.ndarray, rig: SkinnedRig, pose: Pose,
               weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient on observed positions back to (canonical point, weights).

    The first result also equals the gradient w.r.t. the offsets because
    both enter as ``p + dp``.
    """
    p = np.asarray(positions, dtype=np.float64)
    if pose.offsets is not None:
        p = p + pose.offsets
    jac = deform_jacobian(rig, pose, weights)
    g_p = np.einsum("vij,vi->vj", jac, grad_out)
    g = pose.bone_transforms
    per_bone = np.einsum("bij,vj->vbi", g[:, :3, :3], p) + g[None, :, :3, 3]
    g_w = np.einsum("vbi,vi->vb", per_bone, grad_out)
    return g_p, g_w


def init_blend_weights(clothing: TriMesh, body: TriMesh, body_rig: SkinnedRig,
                       body_positions: np.ndarray | None = None,
                       clothing_positions: np.ndarray | None = None) -> np.ndarray:
    """Copy each clothing vertex's weight row from its nearest body vertex."""
    bp = body.vertices if body_positions is None else body_positions
    if len(bp) == 0:
        raise ValueError("init_blend_weights: empty body mesh")
    if body_rig.weights.shape[0] != len(bp):
        raise ValueError("body rig does not cover every body vertex")
    cp = clothing.vertices if clothing_positions is None else clothing_positions
    idx, _ = nearest_vertex(cp, bp)
    return body_rig.weights[idx].copy()


def project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[1]
    u = -np.sort(-w, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(w)), rho] / (rho + 1)
    return np.maximum(w - theta[:, None], 0.0)


# ---------------------------------------------------------------- file formats


def _decode(vals: list[str]) -> np.ndarray:
    tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
    return rigid(Rotation.from_quat([qx, qy, qz, qw]).as_matrix(), (tx, ty, tz))


def _encode(m: np.ndarray) -> str:
    q = Rotation.from_matrix(m[:3, :3]).as_quat()
    return " ".join(repr(float(x)) for x in (*m[:3, 3], *q))


def read_rig(path: str | os.PathLike, n_vertices: int | None = None) -> SkinnedRig:
    bones: list[Bone] = []
    rows: dict[int, dict] = {}
    in_weights = False
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "bone":
                    bones.append(Bone(parts[1], int(parts[2]), _decode(parts[3:10])))
                elif parts[0] == "weights":
                    in_weights = True
                elif in_weights:
                    rows[int(parts[0])] = {k: float(v) for k, v in (t.split(":") for t in parts[1:])}
                else:
                    raise ValueError(f"unexpected record {parts[0]!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    names = {b.name: i for i, b in enumerate(bones)}
    nv = (max(rows) + 1 if rows else 0) if n_vertices is None else n_vertices
    w = np.zeros((nv, len(bones)))
    for v, m in rows.items():
        for k, val in m.items():
            w[v, names[k] if k in names else int(k)] = val
    return SkinnedRig(tuple(bones), w)


def write_rig(path: str | os.PathLike, rig: SkinnedRig) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for b in rig.bones:
            fh.write(f"bone {b.name} {b.parent} {_encode(b.rest)}\n")
        fh.write("weights\n")
        for v, row in enumerate(rig.weights):
            nz = np.flatnonzero(row)
            fh.write(f"{v} " + " ".join(f"{i}:{float(row[i])!r}" for i in nz) + "\n")


def read_animation(path: str | os.PathLike, n_bones: int) -> list[Pose]:
    frames: list[tuple[int, dict[int, np.ndarray]]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "frame":
                frames.append((int(parts[1]), {}))
            elif frames:
                frames[-1][1][int(parts[0])] = _decode(parts[1:8])
            else:
                raise ValueError(f"{path}:{lineno}: transform before first frame record")
    poses = []
    for t, tf in frames:
        g = np.tile(np.eye(4), (n_bones, 1, 1))
        for b, m in tf.items():
            g[b] = m
        poses.append(Pose(t, g))
    return poses


def write_animation(path: str | os.PathLike, poses: list[Pose]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for pose in poses:
            fh.write(f"frame {pose.frame}\n")
            for b, m in enumerate(pose.bone_transforms):
                fh.write(f"{b} {_encode(m)}\n")
