"""Clothing dynamics on a hierarchical graph, parameter fitting and collision handling."""

from .collisions import CollisionWarning, margins, resolve_collisions
from .forces import GRAVITY, AccelerationPredictor, AnalyticPredictor
from .graph import (
    DEFAULT_LEVELS, DEFAULT_THRESHOLD, HierarchicalGraph, build_graph, dihedral_angles, nearest_body_edges,
    update_body_edges, voronoi_areas,
)
from .integrate import DivergenceError, SimState, simulate, step
from .inverse import OneStepObjective, ParamFit, fit_physical_params
from .io import read_trajectory, write_obj_sequence, write_trajectory
from .params import PhysicalParams, read_params, write_params


def predict_accel(predictor: AccelerationPredictor, graph: HierarchicalGraph, rho: PhysicalParams):
    """Per-clothing-node accelerations from any predictor."""
    return predictor(graph, rho)


__all__ = [
    "CollisionWarning", "margins", "resolve_collisions",
    "GRAVITY", "AccelerationPredictor", "AnalyticPredictor", "predict_accel",
    "DEFAULT_LEVELS", "DEFAULT_THRESHOLD", "HierarchicalGraph", "build_graph", "dihedral_angles",
    "nearest_body_edges", "update_body_edges", "voronoi_areas",
    "DivergenceError", "SimState", "simulate", "step",
    "OneStepObjective", "ParamFit", "fit_physical_params",
    "read_trajectory", "write_obj_sequence", "write_trajectory",
    "PhysicalParams", "read_params", "write_params",
]
