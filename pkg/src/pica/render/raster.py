"""Tile-binned front-to-back alpha compositing and its exact adjoint.

Splats are sorted once per image by depth (ties by index) and binned into
16x16 pixel tiles, so every tile list is in global depth order. At each
pixel center the weighted opacity ``alpha * exp(-0.5 d^T Q d)`` is
composited front to back; terms below 1/255 are skipped and a pixel stops
after the term that drops its transmittance under 1e-4.

The backward pass recomputes each pixel's contributor list and sweeps it
back to front, so fully opaque splats need no division by ``1 - alpha``.
Per-splat gradients are written to per-tile slots and reduced in a fixed
order, which keeps results bitwise reproducible under threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .projection import MIN_ALPHA, Splats

nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

TILE = 16
T_STOP = 1e-4


@nb.njit(cache=True)
def _bin(order, mean2d, radius, width, height, tile):
    tx = (width + tile - 1) // tile
    ty = (height + tile - 1) // tile
    counts = np.zeros(tx * ty + 1, dtype=np.int64)
    rect = np.empty((len(order), 4), dtype=np.int64)
    for k in range(len(order)):
        g = order[k]
        r = radius[g]
        x0 = max(int(np.floor((mean2d[g, 0] - r) / tile)), 0)
        x1 = min(int(np.floor((mean2d[g, 0] + r) / tile)), tx - 1)
        y0 = max(int(np.floor((mean2d[g, 1] - r) / tile)), 0)
        y1 = min(int(np.floor((mean2d[g, 1] + r) / tile)), ty - 1)
        rect[k, 0] = x0
        rect[k, 1] = x1
        rect[k, 2] = y0
        rect[k, 3] = y1
        for yy in range(y0, y1 + 1):
            for xx in range(x0, x1 + 1):
                counts[yy * tx + xx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], dtype=np.int64)
    for k in range(len(order)):
        for yy in range(rect[k, 2], rect[k, 3] + 1):
            for xx in range(rect[k, 0], rect[k, 1] + 1):
                t = yy * tx + xx
                ids[fill[t]] = order[k]
                fill[t] += 1
    return offsets, ids


@nb.njit(cache=True, parallel=True)
def _forward(offsets, ids, mean2d, conic, opacity, skip, values, width, height, tile, min_alpha, t_stop):
    tx = (width + tile - 1) // tile
    ntiles = len(offsets) - 1
    nch = values.shape[1]
    image = np.zeros((height, width, nch))
    trans = np.ones((height, width))
    last = np.zeros((height, width), dtype=np.int64)
    for t in nb.prange(ntiles):
        ty0 = (t // tx) * tile
        tx0 = (t % tx) * tile
        start, stop = offsets[t], offsets[t + 1]
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                x = px + 0.5
                y = py + 0.5
                T = 1.0
                end = start
                for k in range(start, stop):
                    g = ids[k]
                    dx = x - mean2d[g, 0]
                    dy = y - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy
                                    + conic[g, 2] * dy * dy)
                    end = k + 1
                    if power < skip[g]:
                        continue
                    a = opacity[g] * np.exp(power)
                    if a < min_alpha:
                        continue
                    w = a * T
                    for c in range(nch):
                        image[py, px, c] += w * values[g, c]
                    T *= 1.0 - a
                    if T < t_stop:
                        break
                trans[py, px] = T
                last[py, px] = end
    return image, trans, last


@nb.njit(cache=True, parallel=True)
def _backward(offsets, ids, last, mean2d, conic, opacity, skip, values, grad_img,
              width, height, tile, min_alpha):
    tx = (width + tile - 1) // tile
    ntiles = len(offsets) - 1
    nch = values.shape[1]
    # slot layout: values (nch), opacity, mean2d (2), conic (3)
    k_slots = nch + 6
    slots = np.zeros((len(ids), k_slots))
    for t in nb.prange(ntiles):
        ty0 = (t // tx) * tile
        tx0 = (t % tx) * tile
        start, stop = offsets[t], offsets[t + 1]
        n = stop - start
        kk = np.empty(n, dtype=np.int64)
        al = np.empty(n)
        tr = np.empty(n)
        gs = np.empty(n)
        S = np.empty(nch)
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                x = px + 0.5
                y = py + 0.5
                T = 1.0
                m = 0
                for k in range(start, last[py, px]):
                    g = ids[k]
                    dx = x - mean2d[g, 0]
                    dy = y - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy
                                    + conic[g, 2] * dy * dy)
                    if power < skip[g]:
                        continue
                    gv = np.exp(power)
                    a = opacity[g] * gv
                    if a < min_alpha:
                        continue
                    kk[m] = k
                    al[m] = a
                    tr[m] = T
                    gs[m] = gv
                    m += 1
                    T *= 1.0 - a
                for c in range(nch):
                    S[c] = 0.0
                for j in range(m - 1, -1, -1):
                    k = kk[j]
                    g = ids[k]
                    a = al[j]
                    Ti = tr[j]
                    d_a = 0.0
                    for c in range(nch):
                        gc = grad_img[py, px, c]
                        slots[k, c] += a * Ti * gc
                        d_a += Ti * gc * (values[g, c] - S[c])
                        S[c] = a * values[g, c] + (1.0 - a) * S[c]
                    slots[k, nch] += d_a * gs[j]
                    d_pow = d_a * a
                    dx = x - mean2d[g, 0]
                    dy = y - mean2d[g, 1]
                    slots[k, nch + 1] += d_pow * (conic[g, 0] * dx + conic[g, 1] * dy)
                    slots[k, nch + 2] += d_pow * (conic[g, 1] * dx + conic[g, 2] * dy)
                    slots[k, nch + 3] += -0.5 * d_pow * dx * dx
                    slots[k, nch + 4] += -d_pow * dx * dy
                    slots[k, nch + 5] += -0.5 * d_pow * dy * dy
    return slots


@nb.njit(cache=True)
def _reduce(ids, slots, n):
    out = np.zeros((n, slots.shape[1]))
    for k in range(len(ids)):
        g = ids[k]
        for c in range(slots.shape[1]):
            out[g, c] += slots[k, c]
    return out


@dataclass
class RasterRecord:
    """Forward-pass bookkeeping needed by :func:`rasterize_backward`."""

    splats: Splats
    values: np.ndarray
    offsets: np.ndarray
    ids: np.ndarray
    last: np.ndarray
    transmittance: np.ndarray
    width: int
    height: int


@dataclass
class RasterGrads:
    values: np.ndarray
    opacity: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray


def skip_threshold(opacity: np.ndarray) -> np.ndarray:
    """Exponent below which a splat's alpha is certainly under 1/255.

    A small safety margin keeps the cheap test conservative, the exact
    alpha comparison still decides borderline cases.
    """
    with np.errstate(divide="ignore"):
        return np.log(MIN_ALPHA / np.maximum(opacity, 1e-300)) - 1e-6


def depth_order(splats: Splats) -> np.ndarray:
    idx = np.flatnonzero(splats.valid)
    return idx[np.lexsort((idx, splats.depth[idx]))]


def rasterize(splats: Splats, values: np.ndarray, width: int, height: int) -> tuple[np.ndarray, RasterRecord]:
    """Composite per-splat ``values`` (N, C) into an (H, W, C) image."""
    values = np.asarray(values, dtype=np.float64)
    values = np.ascontiguousarray(values.reshape(len(splats), values.shape[-1] if values.ndim > 1 else 1))
    order = depth_order(splats)
    offsets, ids = _bin(order, splats.mean2d, splats.radius, width, height, TILE)
    image, trans, last = _forward(offsets, ids, splats.mean2d, splats.conic, splats.opacity,
                                  skip_threshold(splats.opacity), values, width, height, TILE, MIN_ALPHA, T_STOP)
    return image, RasterRecord(splats, values, offsets, ids, last, trans, width, height)


def rasterize_backward(record: RasterRecord | None, grad_image: np.ndarray) -> RasterGrads:
    if record is None:
        raise ValueError("backward pass needs the forward record")
    nch = record.values.shape[1]
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64).reshape(record.height, record.width, nch)
    s = record.splats
    slots = _backward(record.offsets, record.ids, record.last, s.mean2d, s.conic, s.opacity,
                      skip_threshold(s.opacity), record.values, grad_image, record.width, record.height, TILE, MIN_ALPHA)
    g = _reduce(record.ids, slots, len(s))
    return RasterGrads(g[:, :nch], g[:, nch], g[:, nch + 1:nch + 3], g[:, nch + 3:nch + 6])
