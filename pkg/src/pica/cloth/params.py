"""Garment material parameters."""

from __future__ import annotations

import math
import os
from dataclasses import astuple, dataclass, fields

import numpy as np

NAMES = ("mass_density", "bending_coeff", "stretch_stiffness", "friction_coeff")


@dataclass(frozen=True)
class PhysicalParams:
    """Four positive material scalars.

    mass_density in kg/m^2, bending_coeff in J (energy per squared radian
    of dihedral deviation, per unit hinge weight), stretch_stiffness in N/m,
    friction_coeff dimensionless.
    """

    mass_density: float = 0.2
    bending_coeff: float = 1e-4
    stretch_stiffness: float = 10.0
    friction_coeff: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{f.name} must be finite and > 0, got {v}")
            object.__setattr__(self, f.name, v)

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "PhysicalParams":
        return cls(*(float(x) for x in np.asarray(a, dtype=np.float64).reshape(4)))

    def log(self) -> np.ndarray:
        return np.log(self.as_array())

    @classmethod
    def from_log(cls, z) -> "PhysicalParams":
        return cls.from_array(np.exp(np.asarray(z, dtype=np.float64)))


def write_params(path: str | os.PathLike, rho: PhysicalParams) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for name, v in zip(NAMES, rho.as_array()):
            fh.write(f"{name} {float(v)!r}\n")


def read_params(path: str | os.PathLike) -> PhysicalParams:
    """Four non-empty lines, each ``value`` or ``name value`` in canonical order."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if len(lines) != 4:
        raise ValueError(f"{path}: expected 4 parameter lines, got {len(lines)}")
    vals = []
    for name, parts in zip(NAMES, lines):
        if len(parts) == 2 and parts[0] != name:
            raise ValueError(f"{path}: expected {name!r}, got {parts[0]!r}")
        vals.append(float(parts[-1]))
    return PhysicalParams(*vals)
