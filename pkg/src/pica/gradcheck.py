"""Central finite differences for checking analytic gradients."""

from __future__ import annotations

import numpy as np


def fd_gradient(f, x: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``index`` restricts the probe to a subset of flat positions; other
    entries of the result stay zero.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    idx = range(flat.size) if index is None else np.asarray(index).ravel()
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|, floor)`` over the flattened arrays."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)
