"""Run configuration: one YAML file plus ``--section.key value`` overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .cloth.params import PhysicalParams
from .fitting import DEFAULT_LR, GROUPS
from .losses import LossWeights

MAX_SEED = 2 ** 32 - 1
CHANNELS = ("color", "mask", "label")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class Paths:
    body_mesh: str | None = None
    clothing_mesh: str | None = None
    rig: str | None = None
    animation: str | None = None
    dataset: str | None = None
    output: str = "out"
    avatar: str | None = None  # fitted avatar directory; defaults to output
    rho: str | None = None  # parameter file when physics.mode is "file"
    cameras: list[str] = field(default_factory=list)
    tryon_mesh: str | None = None
    tryon_gaussians: str | None = None
    tryon_weights: str | None = None
    initial_clothing: str | None = None  # OBJ or trajectory .bin (last frame) to start the simulation from


@dataclass
class ScheduleConfig:
    iterations: int = 80
    lr: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LR))
    decay: str = "cosine"
    min_factor: float = 0.1


@dataclass
class FitOptions:
    per_face: int = 13
    pose_matrix: bool = False


@dataclass
class Physics:
    mode: str = "default"  # default | file | fit | inline
    mass_density: float = PhysicalParams.mass_density
    bending_coeff: float = PhysicalParams.bending_coeff
    stretch_stiffness: float = PhysicalParams.stretch_stiffness
    friction_coeff: float = PhysicalParams.friction_coeff

    def params(self) -> PhysicalParams:
        return PhysicalParams(self.mass_density, self.bending_coeff, self.stretch_stiffness, self.friction_coeff)


@dataclass
class RenderOptions:
    channel: str = "color"
    width: int | None = None  # None keeps each camera's own size
    height: int | None = None
    format: str = "png"


@dataclass
class SimOptions:
    dt: float = 1.0 / 30.0
    substeps: int = 20
    levels: int = 3
    threshold: float = 0.03
    pinned: list[int] = field(default_factory=list)
    contact_stiffness: float = 10.0
    damping_time: float = 0.01
    drag: float = 3.0


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    fit: FitOptions = field(default_factory=FitOptions)
    physics: Physics = field(default_factory=Physics)
    render: RenderOptions = field(default_factory=RenderOptions)
    sim: SimOptions = field(default_factory=SimOptions)
    seed: int = 0
    threads: int | None = None
    base_dir: str = field(default=".", repr=False, compare=False)

    # ------------------------------------------------------------ (de)serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict | None, base_dir: str | os.PathLike = ".") -> "RunConfig":
        d = dict(d or {})
        sections = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(sections) - {"base_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kinds = {"paths": Paths, "weights": LossWeights, "schedule": ScheduleConfig, "fit": FitOptions,
                 "physics": Physics, "render": RenderOptions, "sim": SimOptions}
        kw = {}
        for name, typ in kinds.items():
            sub = d.get(name) or {}
            if not isinstance(sub, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(typ)}
            bad = set(sub) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kw[name] = typ(**sub)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        cfg = cls(**kw, seed=d.get("seed", 0), threads=d.get("threads"), base_dir=str(base_dir))
        cfg.check()
        return cfg

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def check(self) -> None:
        """Value checks that need no filesystem access."""
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 32-bit integer, got {self.seed!r}")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads must be a positive integer")
        if self.render.channel not in CHANNELS:
            raise ConfigError(f"render.channel must be one of {CHANNELS}")
        if self.render.format not in ("png", "ppm"):
            raise ConfigError("render.format must be png or ppm")
        if self.physics.mode not in ("default", "file", "fit", "inline"):
            raise ConfigError("physics.mode must be default, file, fit or inline")
        bad = set(self.schedule.lr) - set(GROUPS)
        if bad:
            raise ConfigError(f"unknown learning-rate groups {sorted(bad)}")
        if self.sim.dt <= 0 or self.sim.substeps < 1 or self.sim.threshold <= 0 or self.sim.levels < 0:
            raise ConfigError("sim.dt, sim.threshold must be > 0, substeps >= 1, levels >= 0")
        if self.sim.drag < 0 or self.sim.damping_time < 0 or self.sim.contact_stiffness < 0:
            raise ConfigError("sim.drag, sim.damping_time and sim.contact_stiffness must be >= 0")
        if self.fit.per_face < 1:
            raise ConfigError("fit.per_face must be >= 1")
        try:
            self.physics.params()
        except ValueError as exc:
            raise ConfigError(f"physics: {exc}") from exc

    # ------------------------------------------------------------ paths

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output(self) -> Path:
        return self.path(self.paths.output)

    @property
    def avatar_dir(self) -> Path:
        return self.path(self.paths.avatar) if self.paths.avatar else self.output

    def require(self, *names: str) -> None:
        """Fail unless each named path is set and exists."""
        missing = []
        for n in names:
            v = getattr(self.paths, n)
            if v is None or v == []:
                raise ConfigError(f"paths.{n} is required for this command")
            for item in (v if isinstance(v, list) else [v]):
                if not self.path(item).exists():
                    missing.append(f"paths.{n}={item}")
        if missing:
            raise ConfigError("missing files: " + ", ".join(missing))


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(d: dict, overrides: list[tuple[str, str]]) -> dict:
    """Set dotted keys (``schedule.iterations``) from string values parsed as YAML scalars."""
    out = yaml.safe_load(yaml.safe_dump(d)) or {}
    for key, text in overrides:
        parts = key.split(".")
        cur = out
        for p in parts[:-1]:
            nxt = cur.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key}: {p!r} is not a section")
            cur = nxt
        cur[parts[-1]] = _parse_value(text)
    return out


def load_config(path: str | os.PathLike | None, overrides: list[tuple[str, str]] = ()) -> RunConfig:
    if path is None:
        raw, base = {}, Path.cwd()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        with open(p, "r", encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{p}: {exc}") from exc
        base = p.parent
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return RunConfig.from_dict(apply_overrides(raw, list(overrides)), base)
