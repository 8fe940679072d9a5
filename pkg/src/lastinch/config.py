"""Scenario configuration files.

Configs are flat INI files (one level of sections). Keys ending in ``_mm`` are
converted to meters and keys ending in ``_deg`` to radians when read, so the
in-memory config only ever holds SI values under the suffix-free name.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, MissingArtifact
from .simgen import BUILTIN_CATEGORIES

TASKS = ("insertion", "standing", "assembly")
POLICIES = ("closed", "open", "centroid")
PREDICTORS = ("oracle", "matcher")
TASK_CATEGORY = {"insertion": "gears", "standing": "batteries", "assembly": "batteries"}


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment cell: task, instance, predictor, policy, noise and run count."""

    name: str = "scenario"
    task: str = "insertion"
    category: str = "gears"
    demo_model: str = ""
    model: str = ""
    scales: tuple = (1.0, 1.0, 1.0)
    predictor: str = "oracle"
    policy: str = "closed"
    seed: int = 0
    runs: int = 10
    # receptacle
    clearance: float = 5e-4
    platform_radius: float = 0.02
    # tracker
    sigma_trans: float = 0.0
    sigma_rot: float = 0.0
    latency_ticks: int = 0
    demo_sigma_trans: float = 0.0
    demo_sigma_rot: float = 0.0
    # disturbances
    grasp_slip_trans: float = 0.0
    grasp_slip_rot: float = 0.0
    contact_slip_trans: float = 0.0
    contact_slip_rot: float = 0.0
    push_tick: int = -1
    push_offset: tuple = (0.0, 0.0, 0.0)
    # controller
    goal_tol_trans: float = 5e-4
    goal_tol_rot: float = math.radians(0.5)
    max_step_trans: float = 1e-3
    max_step_rot: float = math.radians(1.0)
    timeout_ticks: int = 0
    # demo processing
    keypose_distance: float = 0.05
    d_min: float = 2e-3
    theta_min: float = math.radians(2.0)
    point_spacing: float = 3e-3
    lift_heights: tuple = (0.05, 0.1, 0.15, 0.2, 0.3)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.category not in BUILTIN_CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        if TASK_CATEGORY[self.task] != self.category:
            raise ConfigError(f"task {self.task} needs category {TASK_CATEGORY[self.task]}")
        models = BUILTIN_CATEGORIES[self.category]["models"]
        for m in (self.demo_model, self.model):
            if m and m not in models:
                raise ConfigError(f"unknown model {m!r} in category {self.category}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"predictor must be one of {PREDICTORS}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}")
        if len(self.scales) != 3 or min(self.scales) <= 0:
            raise ConfigError("scales must be three positive numbers")
        if not math.isclose(self.scales[0], self.scales[1], rel_tol=1e-12):
            raise ConfigError("round parts need equal x and y scales")
        if self.runs < 1 or self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("runs must be >= 1 and seed an unsigned 64-bit integer")
        nonneg = ("clearance", "sigma_trans", "sigma_rot", "demo_sigma_trans", "demo_sigma_rot",
                  "grasp_slip_trans", "grasp_slip_rot", "contact_slip_trans", "contact_slip_rot", "latency_ticks",
                  "timeout_ticks")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        positive = ("platform_radius", "goal_tol_trans", "goal_tol_rot", "max_step_trans", "max_step_rot",
                    "keypose_distance", "d_min", "theta_min", "point_spacing")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.task == "insertion" and self.clearance <= 0:
            raise ConfigError("insertion clearance must be positive")
        if len(self.push_offset) != 3:
            raise ConfigError("push offset needs three components")

    @property
    def demo_model_id(self):
        return self.demo_model or next(iter(BUILTIN_CATEGORIES[self.category]["models"]))

    @property
    def model_id(self):
        return self.model or self.demo_model_id

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


SECTION_KEYS = {
    "scenario": ("name", "task", "category", "predictor", "policy", "seed", "runs"),
    "instance": ("demo_model", "model", "scales"),
    "receptacle": ("clearance", "platform_radius"),
    "tracker": ("sigma_trans", "sigma_rot", "latency_ticks"),
    "demo": ("demo_sigma_trans", "demo_sigma_rot", "keypose_distance", "d_min", "theta_min", "point_spacing",
             "lift_heights"),
    "disturbance": ("grasp_slip_trans", "grasp_slip_rot", "contact_slip_trans", "contact_slip_rot", "push_tick",
                    "push_offset"),
    "control": ("goal_tol_trans", "goal_tol_rot", "max_step_trans", "max_step_rot", "timeout_ticks"),
}
VECTOR_KEYS = {"scales": 3, "push_offset": 3, "lift_heights": None}
# a unit suffix scales the value (every component for vector keys)
UNIT_SUFFIXES = {"_mm": 1e-3, "_deg": math.pi / 180.0}


def _coerce(name, value, default):
    try:
        if isinstance(default, bool):
            return str(value).strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(value)
        return str(value).strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot interpret {value!r}") from None


def _vector(name, raw, scale, n):
    try:
        vals = tuple(float(v) * scale for v in str(raw).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: expected numbers, got {raw!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(vals)}")
    return vals


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"config not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    defaults = {f.name: f.default for f in fields(ScenarioConfig)}
    values = {}
    for section in cp.sections():
        allowed = SECTION_KEYS.get(section)
        if allowed is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            base, scale = key, 1.0
            for suffix, factor in UNIT_SUFFIXES.items():
                if key.endswith(suffix):
                    base, scale = key[: -len(suffix)], factor
            if base not in allowed:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            if base in values:
                raise ConfigError(f"[{section}] {base} given twice")
            if base in VECTOR_KEYS:
                values[base] = _vector(key, raw, scale, VECTOR_KEYS[base])
            elif scale != 1.0:
                try:
                    values[base] = float(raw) * scale
                except ValueError:
                    raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None
            else:
                values[base] = _coerce(key, raw, defaults[base])
    if "category" not in values and "task" in values and values["task"] in TASK_CATEGORY:
        values["category"] = TASK_CATEGORY[values["task"]]
    values.setdefault("name", path.stem)
    return ScenarioConfig(**values)


def dump_config(cfg: ScenarioConfig) -> str:
    """Render a config back to text in SI units (no suffixes); ``load_config`` reads it back unchanged."""
    lines = []
    for section, keys in SECTION_KEYS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = getattr(cfg, k)
            if isinstance(v, tuple):
                v = " ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def builtin_config_dir() -> Path:
    return Path(__file__).parent / "configs"
