"""Windowed planning with safety assurance.

Each window plans a geometric path from the current position toward a spatial
subgoal, turns it into a T-sample reference, and executes T control steps of
LQR tracking (optionally passed through the safety filter) on the nonlinear
simulator. Windows repeat until the goal region is reached.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .config import ScenarioConfig
from .controller import LqrDesign, desired_input, lqr_gain
from .dynamics import ControlInput, LinearModel, State, chart_from_state, linearize_hover, step
from .environment import Environment, is_free
from .planner import (
    PlanningError,
    SmoothingCollision,
    Trajectory,
    piecewise_linear,
    plan,
    smooth,
)
from .safety_filter import (
    ConstraintSet,
    InputSet,
    SafetyFilter,
    TerminalSet,
    terminal_set_synthesis,
)

Array = NDArray[np.float64]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MissionComponents:
    config: ScenarioConfig
    model: LinearModel
    design: LqrDesign
    c_set: ConstraintSet
    filter_c_set: ConstraintSet
    u_set: InputSet
    terminal: TerminalSet

    def make_filter(self, horizon: int | None = None) -> SafetyFilter:
        f = self.config.filter
        return SafetyFilter(self.model, self.design, self.filter_c_set, self.u_set,
                            self.terminal, horizon or self.config.mission.horizon,
                            tightening=f.tightening, tolerance=f.tolerance,
                            max_iterations=f.max_iterations,
                            terminal_resolves=f.terminal_resolves)


def build_components(cfg: ScenarioConfig) -> MissionComponents:
    params = cfg.quadrotor
    model = linearize_hover(params, cfg.mission.dt)
    design = lqr_gain(model, cfg.lqr.q_weights, cfg.lqr.r_weights)
    b = cfg.constraints
    c_set = ConstraintSet(b.state_lower, b.state_upper)
    filter_c_set = c_set.tightened(cfg.filter.margin)
    u_set = InputSet(b.input_lower, b.input_upper)
    terminal = terminal_set_synthesis(design, filter_c_set, u_set, model,
                                      np.asarray(cfg.mission.disturbance_bound),
                                      samples=cfg.filter.terminal_samples, seed=cfg.seed)
    log.info("terminal set level %.6g", terminal.level)
    return MissionComponents(cfg, model, design, c_set, filter_c_set, u_set, terminal)


@dataclass
class StepRecord:
    step: int
    time: float
    window: int
    chart: Array
    u_des: Array
    u_safe: Array
    intervened: bool
    fallback: bool
    qp_iterations: int
    qp_objective: float


@dataclass
class Violation:
    step: int
    kind: str  # "constraint" or "collision"
    detail: str


@dataclass
class MissionResult:
    scenario: str
    filter_enabled: bool
    dt: float
    times: list[float] = field(default_factory=list)
    executed_trajectory: list[State] = field(default_factory=list)
    planned_segments: list[Trajectory] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    interventions: list[tuple[int, Array, Array]] = field(default_factory=list)
    fallback_steps: list[int] = field(default_factory=list)
    constraint_violations: list[Violation] = field(default_factory=list)
    reached_goal: bool = False
    aborted: bool = False
    windows: int = 0
    goal: Array = field(default_factory=lambda: np.zeros(3))
    constraint_lower: Array = field(default_factory=lambda: np.full(12, -np.inf))
    constraint_upper: Array = field(default_factory=lambda: np.full(12, np.inf))

    @property
    def positions(self) -> Array:
        return np.array([s.position for s in self.executed_trajectory]).reshape(-1, 3)

    @property
    def charts(self) -> Array:
        return np.array([chart_from_state(s) for s in self.executed_trajectory]).reshape(-1, 12)

    @property
    def goal_error(self) -> float:
        if not self.executed_trajectory:
            return float("nan")
        return float(np.linalg.norm(self.executed_trajectory[-1].position - self.goal))


def select_subgoal(env: Environment, position: Array, goal: Array, lookahead: float,
                   search_radius: float, rng: np.random.Generator,
                   attempts: int = 500) -> Array:
    """Point ``lookahead`` metres along the straight line to the goal, moved into
    free space by rejection sampling within ``search_radius`` when needed."""
    offset = goal - position
    dist = float(np.linalg.norm(offset))
    target = goal.copy() if dist <= lookahead else position + offset * (lookahead / dist)
    if is_free(env, target):
        return target
    for _ in range(attempts):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        candidate = target + direction * search_radius * rng.random() ** (1 / 3)
        if is_free(env, candidate):
            return candidate
    raise PlanningError(f"no free subgoal within {search_radius} m of {target}")


def window_reference(env: Environment, position: Array, goal: Array, cfg: ScenarioConfig,
                     window: int, rng: np.random.Generator) -> Trajectory:
    """Plan and time-parameterize one window; exactly ``horizon`` samples long."""
    mission, tr = cfg.mission, cfg.trajectory
    window_time = mission.horizon * mission.dt
    remaining = float(np.linalg.norm(goal - position))
    # the fraction window_time / (remaining / cruise) of the way to the goal
    lookahead = tr.cruise_speed * window_time
    subgoal = select_subgoal(env, position, goal, lookahead, tr.subgoal_search_radius, rng)
    if remaining <= lookahead and is_free(env, goal):
        subgoal = goal.copy()
    params = replace(cfg.planner, rng_seed=cfg.planner.rng_seed + cfg.seed * 7919 + window)
    try:
        path = plan(env, position, subgoal, params)
    except PlanningError:
        log.warning("window %d: planner failed, retrying with doubled budget", window)
        path = plan(env, position, subgoal,
                    replace(params, max_iterations=2 * params.max_iterations))
    try:
        traj = smooth(path, tr.cruise_speed, mission.dt, env, tr.acceleration, tr.yaw)
    except SmoothingCollision:
        traj = piecewise_linear(path, tr.cruise_speed, mission.dt, tr.acceleration, tr.yaw)
    return traj.fit(mission.horizon)


def run_mission(env: Environment, components: MissionComponents, filter_enabled: bool = True,
                rng_seed: int | None = None) -> MissionResult:
    cfg = components.config
    mission = cfg.mission
    params = cfg.quadrotor
    seed = cfg.seed if rng_seed is None else rng_seed
    if rng_seed is not None:
        cfg = replace(cfg, seed=rng_seed)
    rng = np.random.default_rng(seed)
    dist_rng = np.random.default_rng([seed, 1])
    start = np.asarray(mission.start, dtype=float)
    goal = np.asarray(mission.goal, dtype=float)
    if not is_free(env, start) or not is_free(env, goal):
        raise ValueError("start and goal must both be in free space")
    dt = mission.dt
    horizon = mission.horizon
    state = State.hover(start, cfg.trajectory.yaw)
    if not components.c_set.contains(chart_from_state(state)):
        raise ValueError("start state violates the constraint set")

    result = MissionResult(cfg.name, filter_enabled, dt, goal=goal,
                           constraint_lower=components.c_set.lower,
                           constraint_upper=components.c_set.upper)
    result.times.append(0.0)
    result.executed_trajectory.append(state)
    safety = components.make_filter(horizon) if filter_enabled else None
    bound = np.asarray(mission.disturbance_bound, dtype=float)
    disturbed = bool(np.any(bound > 0))

    k = 0
    if np.linalg.norm(state.position - goal) <= mission.goal_region_radius:
        result.reached_goal = True
        return result

    for window in range(mission.max_windows):
        try:
            ref = window_reference(env, state.position, goal, cfg, window, rng)
        except (PlanningError, ValueError) as exc:
            log.error("window %d aborted: %s", window, exc)
            result.aborted = True
            break
        result.planned_segments.append(ref)
        result.windows += 1
        for i in range(horizon):
            xi = chart_from_state(state)
            u_des = desired_input(components.design, xi, ref.reference(i)).thrusts
            fallback, iters, objective = False, 0, 0.0
            if safety is not None:
                window_refs = [ref.reference(i + n) for n in range(horizon + 1)]
                out = safety.filter(xi, u_des, window_refs)
                u_safe = out.u_safe.thrusts
                fallback = out.diagnostics.fallback
                iters = out.diagnostics.iterations
                objective = out.diagnostics.objective
                intervened = out.intervened
            else:
                u_safe = components.u_set.clamp(u_des)
                intervened = False
            d = dist_rng.uniform(-bound, bound) if disturbed else None
            state = step(state, ControlInput(u_safe), params, dt, d)
            k += 1
            result.times.append(k * dt)
            result.executed_trajectory.append(state)
            result.records.append(StepRecord(k, k * dt, window, chart_from_state(state), u_des,
                                             u_safe, intervened, fallback, iters, objective))
            if intervened:
                result.interventions.append((k - 1, u_des, u_safe))
            if fallback:
                result.fallback_steps.append(k - 1)
            _check_state(result, k, state, components.c_set, env)
        if np.linalg.norm(state.position - goal) <= mission.goal_region_radius:
            result.reached_goal = True
            break
    return result


def _check_state(result: MissionResult, k: int, state: State, c_set: ConstraintSet,
                 env: Environment) -> None:
    xi = chart_from_state(state)
    bad = c_set.violations(xi)
    if bad.size:
        names = ["x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r"]
        detail = ", ".join(f"{names[i]}={xi[i]:.4f}" for i in bad)
        result.constraint_violations.append(Violation(k, "constraint", detail))
    if not is_free(env, state.position):
        result.constraint_violations.append(
            Violation(k, "collision", f"position {np.round(state.position, 4).tolist()}"))


# ---------------------------------------------------------------------------
# comparison


def summarize(result: MissionResult) -> dict:
    charts = result.charts
    path_len = float(np.sum(np.linalg.norm(np.diff(result.positions, axis=0), axis=1))) \
        if len(charts) > 1 else 0.0
    steps = len(result.records)
    ang = charts[:, 6:9] if len(charts) else np.zeros((1, 3))
    return {
        "scenario": result.scenario,
        "filter_enabled": result.filter_enabled,
        "steps": steps,
        "windows": result.windows,
        "reached_goal": result.reached_goal,
        "aborted": result.aborted,
        "goal_error": result.goal_error,
        "path_length": path_len,
        "violation_count": len(result.constraint_violations),
        "constraint_violation_count": sum(v.kind == "constraint" for v in result.constraint_violations),
        "collision_count": sum(v.kind == "collision" for v in result.constraint_violations),
        "intervention_count": len(result.interventions),
        "intervention_density": len(result.interventions) / steps if steps else 0.0,
        "fallback_count": len(result.fallback_steps),
        "roll_min": float(ang[:, 0].min()), "roll_max": float(ang[:, 0].max()),
        "pitch_min": float(ang[:, 1].min()), "pitch_max": float(ang[:, 1].max()),
        "yaw_min": float(ang[:, 2].min()), "yaw_max": float(ang[:, 2].max()),
    }


_DELTA_KEYS = ("steps", "goal_error", "path_length", "violation_count",
               "constraint_violation_count", "collision_count", "intervention_count",
               "intervention_density", "fallback_count", "roll_min", "roll_max",
               "pitch_min", "pitch_max", "yaw_min", "yaw_max")


def compare_summaries(a: dict, b: dict) -> dict:
    """Side-by-side statistics plus ``b - a`` deltas; both runs must share a scenario."""
    if a["scenario"] != b["scenario"]:
        raise ValueError(f"scenario mismatch: {a['scenario']!r} vs {b['scenario']!r}")
    return {
        "scenario": a["scenario"],
        "a": a,
        "b": b,
        "delta": {key: b[key] - a[key] for key in _DELTA_KEYS},
    }


def compare_runs(a: MissionResult, b: MissionResult) -> dict:
    return compare_summaries(summarize(a), summarize(b))
