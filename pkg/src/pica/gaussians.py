"""Flat Gaussians anchored to mesh faces.

Every Gaussian lives on a host face: its mean is a barycentric point pushed
along the face normal, its rotation is the face frame and its scales are
the face's centroid-to-vertex distances times two per-Gaussian factors, with
a tiny fixed scale along the normal.

Text format (one record per line, ``#`` comments allowed)::

    face b1 b2 b3 delta s2 s3 alpha label f0 f1 ... f14

The 15 appearance values are base RGB followed by the 4x3 directional
coefficients (row-major, basis order ``1, dx, dy, dz``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .mesh import Layer, TriMesh, face_frames

FLAT_SCALE = 1e-5
OPACITY_EPS = 1e-4
INIT_SCALE = 0.3
INIT_OPACITY = 0.5
N_BASIS = 4
FEATURE_DIM = 3 + 3 * N_BASIS

# Fixed 13-point layout: centroid, three points pulled in from the vertices,
# then the nine interior points of the sixth-order barycentric lattice that
# are not the centroid.
_PULLED = [(0.8, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.1, 0.8)]
_LATTICE = [
    (4, 1, 1), (1, 4, 1), (1, 1, 4),
    (3, 2, 1), (3, 1, 2), (2, 3, 1), (1, 3, 2), (2, 1, 3), (1, 2, 3),
]
BARY_13 = np.array(
    [(1 / 3, 1 / 3, 1 / 3)] + _PULLED + [tuple(c / 6 for c in p) for p in _LATTICE]
)


def bary_pattern(per_face: int) -> np.ndarray:
    """Barycentric sample pattern with ``per_face`` points.

    Up to 13 points use a prefix of ``BARY_13`` (so 1 is the centroid);
    larger counts take the sub-triangle centroids of the smallest uniform
    subdivision that has enough of them.
    """
    if per_face < 1:
        raise ValueError("per_face must be >= 1")
    if per_face <= len(BARY_13):
        return BARY_13[:per_face].copy()
    m = int(np.ceil(np.sqrt(per_face)))
    pts = []
    for i in range(m):
        for j in range(m - i):
            pts.append((i + 1 / 3, j + 1 / 3))
            if i + j < m - 1:
                pts.append((i + 2 / 3, j + 2 / 3))
    uv = np.array(pts[:per_face]) / m
    return np.column_stack([uv[:, 0], uv[:, 1], 1.0 - uv[:, 0] - uv[:, 1]])


class AnchoredGaussian(NamedTuple):
    face: int
    bary: tuple[float, float, float]
    offset: float
    scales: tuple[float, float]
    opacity: float
    color_feature: np.ndarray
    layer_label: int


@dataclass
class GaussianSet:
    """Structure-of-arrays storage for the Gaussians on one mesh.

    ``face`` (N,), ``bary`` (N,3), ``offset`` (N,), ``scales`` (N,2),
    ``opacity`` (N,), ``features`` (N,15), ``label`` (N,) in {0,1}.
    """

    face: np.ndarray
    bary: np.ndarray
    offset: np.ndarray
    scales: np.ndarray
    opacity: np.ndarray
    features: np.ndarray
    label: np.ndarray

    def __len__(self) -> int:
        return len(self.face)

    def __getitem__(self, i: int) -> AnchoredGaussian:
        return AnchoredGaussian(
            int(self.face[i]), tuple(self.bary[i]), float(self.offset[i]), tuple(self.scales[i]),
            float(self.opacity[i]), self.features[i].copy(), int(self.label[i]),
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(*(np.array(getattr(self, k)) for k in _FIELDS))

    def take(self, idx) -> "GaussianSet":
        """Subset by index array, slice or boolean mask."""
        return GaussianSet(*(np.array(getattr(self, k)[idx]) for k in _FIELDS))

    def with_(self, **kw) -> "GaussianSet":
        return replace(self, **kw)

    @property
    def base_color(self) -> np.ndarray:
        return self.features[:, :3]

    @property
    def dir_coeffs(self) -> np.ndarray:
        return self.features[:, 3:].reshape(-1, N_BASIS, 3)

    def validate(self, mesh: TriMesh | None = None) -> None:
        if np.any(self.bary < 0) or np.any(np.abs(self.bary.sum(axis=1) - 1) > 1e-9):
            raise ValueError("barycentric weights must be non-negative and sum to 1")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        if np.any(self.opacity < OPACITY_EPS) or np.any(self.opacity > 1 - OPACITY_EPS):
            raise ValueError("opacity outside clamp range")
        if mesh is not None:
            if len(self) and self.face.max() >= mesh.n_faces:
                raise ValueError("face index out of range")
            want = 1 if mesh.layer == Layer.CLOTHING else 0
            if np.any(self.label != want):
                raise ValueError("layer labels do not match host mesh layer")


_FIELDS = ("face", "bary", "offset", "scales", "opacity", "features", "label")


def concat(sets: list[GaussianSet]) -> GaussianSet:
    return GaussianSet(*(np.concatenate([getattr(s, k) for s in sets]) for k in _FIELDS))


def sample_gaussians(mesh: TriMesh, per_face: int = 13) -> GaussianSet:
    pattern = bary_pattern(per_face)
    nf = mesh.n_faces
    n = nf * per_face
    features = np.zeros((n, FEATURE_DIM))
    features[:, :3] = 0.5
    return GaussianSet(
        face=np.repeat(np.arange(nf, dtype=np.int64), per_face),
        bary=np.tile(pattern, (nf, 1)),
        offset=np.zeros(n),
        scales=np.full((n, 2), INIT_SCALE),
        opacity=np.full(n, INIT_OPACITY),
        features=features,
        label=np.full(n, 1 if mesh.layer == Layer.CLOTHING else 0, dtype=np.int64),
    )


def clamp_opacity(o: np.ndarray) -> np.ndarray:
    return np.clip(o, OPACITY_EPS, 1.0 - OPACITY_EPS)


def max_offset(mesh: TriMesh, positions: np.ndarray | None = None) -> float:
    p = mesh.vertices if positions is None else positions
    e = mesh.edges
    return 0.5 * float(np.linalg.norm(p[e[:, 0]] - p[e[:, 1]], axis=1).mean())


# ---------------------------------------------------------------- geometry


@dataclass
class GaussianGeometry:
    """World-space geometry of a batch of Gaussians (leading axis N)."""

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    covariance: np.ndarray

    def __len__(self) -> int:
        return len(self.mean)

    def __getitem__(self, idx) -> "GaussianGeometry":
        return GaussianGeometry(self.mean[idx], self.rotation[idx], self.scale[idx], self.covariance[idx])


def gaussian_positions(gs: GaussianSet, mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    p = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    _, normals = face_frames(mesh, p)
    tri = p[mesh.faces[gs.face]]
    return np.einsum("nj,njk->nk", gs.bary, tri) + gs.offset[:, None] * normals[gs.face]


def gaussian_position(g: AnchoredGaussian, mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    p = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    one = TriMesh(p[mesh.faces[g.face]], [[0, 1, 2]], mesh.layer)
    _, n = face_frames(one)
    return np.asarray(g.bary) @ one.vertices + g.offset * n[0]


def face_extents(mesh: TriMesh, positions: np.ndarray) -> np.ndarray:
    """Centroid-to-first-vertex and centroid-to-second-vertex distances, (F, 2)."""
    tri = positions[mesh.faces]
    c = tri.mean(axis=1)
    return np.stack(
        [np.linalg.norm(tri[:, 0] - c, axis=1), np.linalg.norm(tri[:, 1] - c, axis=1)], axis=1
    )


def gaussian_geometry(gs: GaussianSet, mesh: TriMesh, positions: np.ndarray | None = None,
                      eps: float = FLAT_SCALE) -> GaussianGeometry:
    p = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    frames, normals = face_frames(mesh, p)
    tri = p[mesh.faces[gs.face]]
    mean = np.einsum("nj,njk->nk", gs.bary, tri) + gs.offset[:, None] * normals[gs.face]
    ext = face_extents(mesh, p)[gs.face]
    scale = np.column_stack([np.full(len(gs), eps), ext * gs.scales])
    rot = frames[gs.face]
    rs = rot * scale[:, None, :]
    cov = rs @ rs.transpose(0, 2, 1)
    return GaussianGeometry(mean, rot, scale, cov)


# ---------------------------------------------------------------- text I/O


def write_gaussians(path: str | os.PathLike, gs: GaussianSet) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# face b1 b2 b3 delta s2 s3 alpha label f...\n")
        for i in range(len(gs)):
            vals = [*gs.bary[i], gs.offset[i], *gs.scales[i], gs.opacity[i]]
            feats = " ".join(repr(float(x)) for x in gs.features[i])
            fh.write(f"{gs.face[i]} " + " ".join(repr(float(x)) for x in vals)
                     + f" {gs.label[i]} {feats}\n")


def read_gaussians(path: str | os.PathLike) -> GaussianSet:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 9:
                raise ValueError(f"{path}:{lineno}: expected at least 9 fields")
            rows.append(parts)
    if not rows:
        raise ValueError(f"{path}: no Gaussian records")
    nf = {len(r) - 9 for r in rows}
    if len(nf) != 1:
        raise ValueError(f"{path}: inconsistent feature lengths")
    arr = np.array([[float(x) for x in r] for r in rows])
    return GaussianSet(
        face=arr[:, 0].astype(np.int64),
        bary=arr[:, 1:4],
        offset=arr[:, 4],
        scales=arr[:, 5:7],
        opacity=arr[:, 7],
        features=arr[:, 9:],
        label=arr[:, 8].astype(np.int64),
    )
