"""Explicit time stepping of the clothing layer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..skinning import Pose, deform
from .forces import AccelerationPredictor, AnalyticPredictor
from .graph import DEFAULT_LEVELS, DEFAULT_THRESHOLD, HierarchicalGraph, build_graph
from .params import PhysicalParams

log = logging.getLogger(__name__)

MAX_SPEED = 100.0


class DivergenceError(FloatingPointError):
    """Raised when a clothing node exceeds the speed limit."""


@dataclass
class SimState:
    frame: int
    clothing_positions: np.ndarray
    clothing_velocities: np.ndarray
    body_positions: np.ndarray
    body_velocities: np.ndarray
    graph: HierarchicalGraph | None = None

    def __post_init__(self):
        for name in ("clothing_positions", "clothing_velocities", "body_positions", "body_velocities"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, a)
        if self.clothing_positions.shape != self.clothing_velocities.shape:
            raise ValueError("clothing positions and velocities differ in shape")
        if self.body_positions.shape != self.body_velocities.shape:
            raise ValueError("body positions and velocities differ in shape")

    @classmethod
    def from_graph(cls, graph: HierarchicalGraph, frame: int = 0) -> "SimState":
        return cls(frame, graph.clothing_positions.copy(), graph.clothing_velocities.copy(),
                   graph.body_positions.copy(), graph.body_velocities.copy(), graph)


def step(state: SimState, graph: HierarchicalGraph | None, predictor: AccelerationPredictor,
         rho: PhysicalParams, dt: float, *, body_positions: np.ndarray | None = None,
         pin_targets: np.ndarray | None = None) -> SimState:
    """Advance one step with semi-implicit Euler.

    ``v += a dt; p += v dt`` with accelerations predicted from the graph at
    the current state. Pinned nodes are moved to ``pin_targets`` (or held)
    and given the matching finite-difference velocity. Afterwards the body
    moves to ``body_positions`` (kinematic, default: static) and the graph
    is refreshed, including its clothing-to-body edges.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = graph if graph is not None else state.graph
    if g is None:
        raise ValueError("step needs a graph")
    if g.clothing_positions is not state.clothing_positions:
        g = g.with_state(state.clothing_positions, state.clothing_velocities,
                         state.body_positions, state.body_velocities)
    a = np.asarray(predictor(g, rho), dtype=np.float64)
    if a.shape != state.clothing_positions.shape:
        raise ValueError(f"predictor returned shape {a.shape}")
    v = state.clothing_velocities + a * dt
    p = state.clothing_positions + v * dt
    pin = g.pinned
    if pin.any():
        target = state.clothing_positions[pin] if pin_targets is None else np.asarray(pin_targets)[pin]
        v[pin] = (target - state.clothing_positions[pin]) / dt
        p[pin] = target
    speed = np.linalg.norm(v, axis=1)
    if not np.all(np.isfinite(speed)) or speed.max(initial=0.0) > MAX_SPEED:
        bad = int(np.argmax(np.where(np.isfinite(speed), speed, np.inf)))
        raise DivergenceError(f"frame {state.frame + 1}: clothing node {bad} reached speed "
                              f"{speed[bad]:.3g} m/s (limit {MAX_SPEED})")
    if body_positions is None:
        bp, bv = state.body_positions, np.zeros_like(state.body_positions)
    else:
        bp = np.asarray(body_positions, dtype=np.float64)
        bv = (bp - state.body_positions) / dt
    new_graph = g.with_state(p, v, bp, bv)
    return SimState(state.frame + 1, p, v, bp, bv, new_graph)


def simulate(avatar, animation: list[Pose], rho: PhysicalParams, dt: float = 1.0 / 30.0, *,
             predictor: AccelerationPredictor | None = None, substeps: int = 1,
             levels: int = DEFAULT_LEVELS, threshold: float = DEFAULT_THRESHOLD, pinned=None,
             initial_positions: np.ndarray | None = None, on_step=None) -> list[np.ndarray]:
    """Clothing vertex positions for every animation frame.

    The initial state is the skinned clothing of frame 0 (or
    ``initial_positions``) with velocity from the skinned difference of the
    first two frames. Body vertices follow skinning, interpolated linearly
    across ``substeps``; pinned clothing vertices follow their skinned
    positions. ``substeps`` is a minimum: it is raised when the predictor's
    ``stable_dt`` reports a smaller stable step. ``avatar`` needs ``body``, ``clothing``, ``rig``,
    ``clothing_weights``, ``body_positions`` and ``clothing_positions``.
    """
    if not animation:
        raise ValueError("simulate: empty animation")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    predictor = predictor or AnalyticPredictor()
    h = dt / substeps

    def skinned(pose):
        b = deform(avatar.body_positions, avatar.rig, pose)
        c = deform(avatar.clothing_positions, avatar.rig, pose, avatar.clothing_weights)
        return b, c

    body0, cloth0 = skinned(animation[0])
    start = cloth0 if initial_positions is None else np.asarray(initial_positions, dtype=np.float64)
    graph = build_graph(avatar.clothing, avatar.body, levels, threshold, rho,
                        clothing_positions=start, body_positions=body0,
                        rest_positions=avatar.clothing_positions, pinned=pinned)
    v0 = np.zeros_like(start)
    skins = [(body0, cloth0)]
    if len(animation) > 1:
        skins.append(skinned(animation[1]))
        v0 = (skins[1][1] - cloth0) / dt
    graph = graph.with_state(start, v0, body0, np.zeros_like(body0))
    limit = getattr(predictor, "stable_dt", None)
    if limit is not None:
        need = math.ceil(dt / limit(graph, rho) - 1e-9)
        if need > substeps:
            log.info("simulate: raising substeps from %d to %d for stability", substeps, need)
            substeps = need
            h = dt / substeps
    state = SimState.from_graph(graph, 0)
    out = [start.copy()]
    for t in range(1, len(animation)):
        if t >= len(skins):
            skins.append(skinned(animation[t]))
        (b_prev, c_prev), (b_next, c_next) = skins[t - 1], skins[t]
        for s in range(1, substeps + 1):
            w = s / substeps
            state = step(state, None, predictor, rho, h,
                         body_positions=(1 - w) * b_prev + w * b_next,
                         pin_targets=(1 - w) * c_prev + w * c_next)
            if on_step is not None:
                on_step(state)
        out.append(state.clothing_positions.copy())
    return out
