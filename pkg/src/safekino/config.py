"""Scenario configuration: JSON schema, strict validation and canonical serialization.

Infinite bounds are written as ``null``. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .controller import DEFAULT_Q_WEIGHTS, DEFAULT_R_WEIGHTS
from .dynamics import QuadrotorParams
from .environment import Aabb, Environment
from .planner import PlannerParams


class ConfigError(ValueError):
    """Invalid scenario file; ``line`` points at the offending key when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class TrajectorySettings:
    cruise_speed: float = 0.3
    acceleration: float = 1.0
    subgoal_search_radius: float = 0.2
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not self.cruise_speed > 0 or not self.acceleration > 0:
            raise ValueError("cruise_speed and acceleration must be positive")
        if not self.subgoal_search_radius >= 0:
            raise ValueError("subgoal_search_radius must be non-negative")


@dataclass(frozen=True)
class LqrWeights:
    q_weights: tuple[float, ...] = DEFAULT_Q_WEIGHTS
    r_weights: tuple[float, ...] = DEFAULT_R_WEIGHTS

    def __post_init__(self) -> None:
        if len(self.q_weights) != 12 or len(self.r_weights) != 4:
            raise ValueError("q_weights needs 12 entries and r_weights 4")
        if min(self.q_weights) < 0 or min(self.r_weights) <= 0:
            raise ValueError("q_weights must be >= 0 and r_weights > 0")


@dataclass(frozen=True)
class ConstraintBounds:
    state_lower: tuple[float, ...]
    state_upper: tuple[float, ...]
    input_lower: tuple[float, ...]
    input_upper: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.state_lower) != 12 or len(self.state_upper) != 12:
            raise ValueError("state bounds need 12 entries")
        if len(self.input_lower) != 4 or len(self.input_upper) != 4:
            raise ValueError("input bounds need 4 entries")
        if any(lo > hi for lo, hi in zip(self.state_lower, self.state_upper)):
            raise ValueError("state_lower exceeds state_upper")
        if any(lo > hi for lo, hi in zip(self.input_lower, self.input_upper)):
            raise ValueError("input_lower exceeds input_upper")


def default_bounds(params: QuadrotorParams) -> ConstraintBounds:
    lo = [-math.inf] * 12
    hi = [math.inf] * 12
    lo[6:9] = [-0.2, -0.05, -0.2]
    hi[6:9] = [0.2, 0.05, 0.2]
    return ConstraintBounds(tuple(lo), tuple(hi), (params.rotor_thrust_min,) * 4,
                            (params.rotor_thrust_max,) * 4)


@dataclass(frozen=True)
class FilterSettings:
    tolerance: float = 1e-6
    max_iterations: int = 20_000
    terminal_resolves: int = 1
    terminal_samples: int = 10_000
    margin: float = 0.0
    tightening: float = 0.0

    def __post_init__(self) -> None:
        if not self.tolerance > 0 or self.max_iterations < 1:
            raise ValueError("tolerance must be positive and max_iterations >= 1")
        if self.margin < 0 or self.tightening < 0 or self.terminal_resolves < 0:
            raise ValueError("margin, tightening and terminal_resolves must be >= 0")


@dataclass(frozen=True)
class MissionConfig:
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    horizon: int = 20
    control_frequency: float = 50.0
    goal_region_radius: float = 0.1
    max_windows: int = 60
    disturbance_bound: tuple[float, ...] = (0.0,) * 12

    def __post_init__(self) -> None:
        if len(self.start) != 3 or len(self.goal) != 3:
            raise ValueError("start and goal need 3 coordinates")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.control_frequency > 0:
            raise ValueError("control_frequency must be positive")
        if not self.goal_region_radius > 0:
            raise ValueError("goal_region_radius must be positive")
        if self.max_windows < 0:
            raise ValueError("max_windows must be >= 0")
        if len(self.disturbance_bound) != 12 or min(self.disturbance_bound) < 0:
            raise ValueError("disturbance_bound needs 12 non-negative entries")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_frequency


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    quadrotor: QuadrotorParams
    environment: Environment
    planner: PlannerParams
    trajectory: TrajectorySettings
    lqr: LqrWeights
    constraints: ConstraintBounds
    filter: FilterSettings
    mission: MissionConfig
    seed: int = 0
    output_dir: str = "runs"
    source: str | None = field(default=None, compare=False)


# ---------------------------------------------------------------------------
# (de)serialization

_SECTIONS = {
    "name": None,
    "quadrotor": ("mass", "inertia_diag", "arm_length", "torque_coefficient", "gravity",
                  "rotor_thrust_min", "rotor_thrust_max"),
    "environment": ("workspace_min", "workspace_max", "robot_radius", "obstacles"),
    "planner": ("max_iterations", "goal_tolerance", "steer_step", "gamma", "goal_bias",
                "rng_seed"),
    "trajectory": ("cruise_speed", "acceleration", "subgoal_search_radius", "yaw"),
    "lqr": ("q_weights", "r_weights"),
    "constraints": ("state_lower", "state_upper", "input_lower", "input_upper"),
    "filter": ("tolerance", "max_iterations", "terminal_resolves", "terminal_samples",
               "margin", "tightening"),
    "mission": ("start", "goal", "horizon", "control_frequency", "goal_region_radius",
                "max_windows", "disturbance_bound"),
    "seed": None,
    "output_dir": None,
}
_REQUIRED = ("name", "environment", "mission")


def _line_of(text: str | None, key: str) -> int | None:
    if text is None:
        return None
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _bounds(values, sign: float) -> tuple[float, ...]:
    return tuple(sign * math.inf if v is None else float(v) for v in values)


def _json_bound(v: float):
    return None if math.isinf(v) else v


def config_from_dict(data: dict[str, Any], text: str | None = None,
                     path: str | None = None) -> ScenarioConfig:
    def fail(message: str, key: str) -> ConfigError:
        return ConfigError(message, path, _line_of(text, key))

    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", path, 1)
    for key in data:
        if key not in _SECTIONS:
            raise fail(f"unknown key {key!r}", key)
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"missing required key {key!r}", path, 1)
    for section, allowed in _SECTIONS.items():
        if allowed is None or section not in data:
            continue
        if not isinstance(data[section], dict):
            raise fail(f"section {section!r} must be an object", section)
        for key in data[section]:
            if key not in allowed:
                raise fail(f"unknown key {section}.{key!r}", key)

    def build(section: str, factory):
        body = dict(data.get(section, {}))
        try:
            return factory(body)
        except (TypeError, ValueError, KeyError) as exc:
            anchor = next(iter(body), section) if body else section
            for key in body:
                if key in str(exc):
                    anchor = key
                    break
            raise fail(f"{section}: {exc}", anchor if anchor in str(exc) else section) from exc

    quad = build("quadrotor", lambda b: QuadrotorParams(**b))

    def make_env(b):
        obstacles = tuple(Aabb(o["min"], o["max"]) for o in b.pop("obstacles", []))
        return Environment(b.pop("workspace_min"), b.pop("workspace_max"), obstacles,
                           **b)

    env = build("environment", make_env)
    planner = build("planner", lambda b: PlannerParams(**b))
    traj = build("trajectory", lambda b: TrajectorySettings(**b))
    lqr = build("lqr", lambda b: LqrWeights(
        tuple(float(v) for v in b.get("q_weights", DEFAULT_Q_WEIGHTS)),
        tuple(float(v) for v in b.get("r_weights", DEFAULT_R_WEIGHTS))))

    def make_bounds(b):
        base = default_bounds(quad)
        return ConstraintBounds(
            _bounds(b["state_lower"], -1) if "state_lower" in b else base.state_lower,
            _bounds(b["state_upper"], 1) if "state_upper" in b else base.state_upper,
            _bounds(b["input_lower"], -1) if "input_lower" in b else base.input_lower,
            _bounds(b["input_upper"], 1) if "input_upper" in b else base.input_upper)

    bounds = build("constraints", make_bounds)
    filt = build("filter", lambda b: FilterSettings(**b))

    def make_mission(b):
        dist = b.pop("disturbance_bound", 0.0)
        if isinstance(dist, (int, float)):
            dist = [dist] * 12
        return MissionConfig(tuple(float(v) for v in b.pop("start")),
                             tuple(float(v) for v in b.pop("goal")),
                             disturbance_bound=tuple(float(v) for v in dist), **b)

    mission = build("mission", make_mission)
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise fail("seed must be an integer", "seed")
    name = data["name"]
    if not isinstance(name, str):
        raise fail("name must be a string", "name")
    return ScenarioConfig(name, quad, env, planner, traj, lqr, bounds, filt, mission, seed,
                          str(data.get("output_dir", "runs")), path)


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    q, env, pl, tr = cfg.quadrotor, cfg.environment, cfg.planner, cfg.trajectory
    b, f, m = cfg.constraints, cfg.filter, cfg.mission
    return {
        "name": cfg.name,
        "quadrotor": {
            "mass": q.mass, "inertia_diag": list(q.inertia_diag), "arm_length": q.arm_length,
            "torque_coefficient": q.torque_coefficient, "gravity": q.gravity,
            "rotor_thrust_min": q.rotor_thrust_min, "rotor_thrust_max": q.rotor_thrust_max,
        },
        "environment": {
            "workspace_min": env.workspace_min.tolist(),
            "workspace_max": env.workspace_max.tolist(),
            "robot_radius": env.robot_radius,
            "obstacles": [{"min": o.min.tolist(), "max": o.max.tolist()} for o in env.obstacles],
        },
        "planner": {
            "max_iterations": pl.max_iterations, "goal_tolerance": pl.goal_tolerance,
            "steer_step": pl.steer_step, "gamma": pl.gamma, "goal_bias": pl.goal_bias,
            "rng_seed": pl.rng_seed,
        },
        "trajectory": {
            "cruise_speed": tr.cruise_speed, "acceleration": tr.acceleration,
            "subgoal_search_radius": tr.subgoal_search_radius, "yaw": tr.yaw,
        },
        "lqr": {"q_weights": list(cfg.lqr.q_weights), "r_weights": list(cfg.lqr.r_weights)},
        "constraints": {
            "state_lower": [_json_bound(v) for v in b.state_lower],
            "state_upper": [_json_bound(v) for v in b.state_upper],
            "input_lower": [_json_bound(v) for v in b.input_lower],
            "input_upper": [_json_bound(v) for v in b.input_upper],
        },
        "filter": {
            "tolerance": f.tolerance, "max_iterations": f.max_iterations,
            "terminal_resolves": f.terminal_resolves, "terminal_samples": f.terminal_samples,
            "margin": f.margin, "tightening": f.tightening,
        },
        "mission": {
            "start": list(m.start), "goal": list(m.goal), "horizon": m.horizon,
            "control_frequency": m.control_frequency,
            "goal_region_radius": m.goal_region_radius, "max_windows": m.max_windows,
            "disturbance_bound": list(m.disturbance_bound),
        },
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str, path: str | None = None) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    return config_from_dict(data, text, path)


def load(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    return loads(text, str(path))


def replace_mission(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, mission=replace(cfg.mission, **changes))
