"""Push clothing vertices out of the body by a margin."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from ..mesh import TriMesh, adjacency_matrix, nearest_vertex, vertex_normals

log = logging.getLogger(__name__)

MAX_ITERS = 50
SMOOTH_PASSES = 5
SMOOTH_STEP = 0.5
# violations smaller than this are rounding noise of the projection itself
SLACK = 1e-10


class CollisionWarning(UserWarning):
    pass


def _project(x: np.ndarray, body_positions: np.ndarray, normals: np.ndarray, eps: float,
             moved: np.ndarray) -> int:
    """Projection loop in place; returns the number of remaining violations."""
    for _ in range(MAX_ITERS):
        j, _ = nearest_vertex(x, body_positions)
        n = normals[j]
        margin = np.sum((x - body_positions[j]) * n, axis=1)
        bad = margin < eps - SLACK
        if not bad.any():
            return 0
        x[bad] += (eps - margin[bad])[:, None] * n[bad]
        moved |= bad
    j, _ = nearest_vertex(x, body_positions)
    margin = np.sum((x - body_positions[j]) * normals[j], axis=1)
    return int(np.count_nonzero(margin < eps - SLACK))


def resolve_collisions(clothing_positions: np.ndarray, body: TriMesh, body_positions: np.ndarray | None,
                       eps: float, clothing: TriMesh | None = None,
                       smooth_passes: int = SMOOTH_PASSES) -> np.ndarray:
    """Move violating clothing vertices along the nearest body normal to the margin.

    With the clothing mesh given, moved vertices then get ``smooth_passes``
    uniform Laplacian passes, each followed by a fresh projection so the
    margin still holds at the end. Warns with the violation count if the
    projection does not converge within 50 iterations.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    bp = body.vertices if body_positions is None else np.asarray(body_positions, dtype=np.float64)
    normals = vertex_normals(bp, body.faces)
    x = np.array(clothing_positions, dtype=np.float64)
    moved = np.zeros(len(x), dtype=bool)
    left = _project(x, bp, normals, eps, moved)
    if clothing is not None and moved.any():
        adj = adjacency_matrix(len(x), clothing.edges)
        deg = np.asarray(adj.sum(axis=1)).ravel()
        sel = moved & (deg > 0)
        for _ in range(smooth_passes):
            avg = (adj @ x)[sel] / deg[sel, None]
            x[sel] += SMOOTH_STEP * (avg - x[sel])
            left = _project(x, bp, normals, eps, moved)
    if left:
        warnings.warn(f"resolve_collisions: {left} vertices still violate the margin after "
                      f"{MAX_ITERS} iterations", CollisionWarning, stacklevel=2)
    return x


def margins(clothing_positions: np.ndarray, body: TriMesh, body_positions: np.ndarray | None = None) -> np.ndarray:
    bp = body.vertices if body_positions is None else np.asarray(body_positions, dtype=np.float64)
    j, _ = nearest_vertex(clothing_positions, bp)
    n = vertex_normals(bp, body.faces)[j]
    return np.sum((np.asarray(clothing_positions) - bp[j]) * n, axis=1)
