"""Material parameter estimation from a reconstructed clothing trajectory."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .forces import AccelerationPredictor
from .graph import HierarchicalGraph
from .params import PhysicalParams

log = logging.getLogger(__name__)

BOUND_FACTOR = 1e3


@dataclass
class ParamFit:
    rho: PhysicalParams
    objective: float
    evaluations: int


def _as_frames(traj, n: int | None = None) -> np.ndarray:
    a = np.asarray(traj, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("trajectory must have shape (T, V, 3)")
    if n is not None and a.shape[1] != n:
        raise ValueError(f"trajectory has {a.shape[1]} vertices, graph has {n}")
    return a


class OneStepObjective:
    """Sum over frames of squared one-step prediction errors.

    For each t in 0..T-2 the graph is set to the reconstructed p_t with
    velocity (p_t - p_{t-1}) / dt (p_{-1} = p_0), one semi-implicit Euler
    step is predicted, and its error against p_{t+1} is accumulated over
    free (non-pinned) nodes.
    """

    def __init__(self, trajectory, graph: HierarchicalGraph, predictor: AccelerationPredictor, dt: float,
                 body_trajectory=None):
        self.traj = _as_frames(trajectory, graph.n_clothing)
        if len(self.traj) < 2:
            raise ValueError("parameter fitting needs at least two frames")
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if body_trajectory is None:
            body = np.repeat(graph.body_positions[None], len(self.traj), axis=0)
        else:
            body = _as_frames(body_trajectory, graph.n_body)
            if len(body) != len(self.traj):
                raise ValueError("body and clothing trajectories differ in length")
        self.dt = dt
        self.predictor = predictor
        self.free = ~graph.pinned
        self.graphs = []
        for t in range(len(self.traj) - 1):
            prev = self.traj[t - 1] if t > 0 else self.traj[0]
            bprev = body[t - 1] if t > 0 else body[0]
            v = (self.traj[t] - prev) / dt
            self.graphs.append(graph.with_state(self.traj[t], v, body[t], (body[t] - bprev) / dt))
        self.evaluations = 0

    def __call__(self, rho: PhysicalParams) -> float:
        self.evaluations += 1
        dt = self.dt
        total = 0.0
        for t, g in enumerate(self.graphs):
            a = self.predictor(g, rho)
            v = g.clothing_velocities + a * dt
            p = g.clothing_positions + v * dt
            r = (self.traj[t + 1] - p)[self.free]
            total += float(np.sum(r * r))
        return total


def fit_physical_params(trajectory, graph: HierarchicalGraph, predictor: AccelerationPredictor, dt: float, *,
                        body_trajectory=None, init: PhysicalParams | None = None,
                        reference: PhysicalParams | None = None, max_evals: int = 4000,
                        restarts: int = 2) -> ParamFit:
    """Fit log(rho) by bounded Nelder-Mead on the one-step objective.

    The box is ``[1e-3, 1e3] x reference`` per component (``reference``
    defaults to the library defaults). Nelder-Mead restarts from its best
    point ``restarts`` times to escape a collapsed simplex.
    """
    obj = OneStepObjective(trajectory, graph, predictor, dt, body_trajectory)
    ref = (reference or PhysicalParams()).log()
    lo, hi = ref - math.log(BOUND_FACTOR), ref + math.log(BOUND_FACTOR)
    z0 = (init or PhysicalParams()).log()
    if np.any(z0 < lo) or np.any(z0 > hi):
        raise ValueError("initial parameters lie outside the search box")

    def f(z):
        val = obj(PhysicalParams.from_log(np.clip(z, lo, hi)))
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite objective at rho={np.exp(z)}")
        return val

    best_z, best_f = z0, f(z0)
    for _ in range(restarts + 1):
        res = minimize(f, best_z, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"xatol": 1e-10, "fatol": 1e-30, "maxfev": max_evals, "adaptive": True})
        if res.fun < best_f:
            best_z, best_f = np.clip(res.x, lo, hi), float(res.fun)
        log.info("rho fit: objective %.6g after %d evaluations", best_f, obj.evaluations)
    return ParamFit(PhysicalParams.from_log(best_z), best_f, obj.evaluations)
