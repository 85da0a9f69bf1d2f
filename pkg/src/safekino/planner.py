"""Geometric RRT* over 3D positions and conversion of paths to timed references."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .environment import Environment, default_resolution, is_free, segment_free

Array = NDArray[np.float64]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL_PANELS = 4


class PlanningError(RuntimeError):
    """No tree node reached the goal region within the iteration budget."""


class SmoothingCollision(RuntimeError):
    """A resampled spline point left free space; use :func:`piecewise_linear`."""


@dataclass(frozen=True)
class PlannerParams:
    max_iterations: int = 1500
    goal_tolerance: float = 0.05
    steer_step: float = 0.2
    gamma: float = 1.5
    goal_bias: float = 0.1
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.goal_tolerance > 0:
            raise ValueError("goal_tolerance must be positive")
        if not self.steer_step > 0:
            raise ValueError("steer_step must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 <= self.goal_bias < 1:
            raise ValueError("goal_bias must lie in [0, 1)")


@dataclass(frozen=True)
class Path:
    waypoints: Array
    cost: float
    tree_nodes: Array | None = field(default=None, repr=False, compare=False)
    tree_parents: NDArray[np.int64] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints",
                           np.array(self.waypoints, dtype=float).reshape(-1, 3))

    @classmethod
    def from_waypoints(cls, waypoints) -> Path:
        pts = np.array(waypoints, dtype=float).reshape(-1, 3)
        return cls(pts, path_length(pts))


def path_length(waypoints: Array) -> float:
    return float(np.sum(np.linalg.norm(np.diff(waypoints, axis=0), axis=1)))


@dataclass(frozen=True)
class Trajectory:
    dt: float
    positions: Array
    velocities: Array
    yaw: Array

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def reference(self, index: int) -> Array:
        """Level chart reference for sample ``index``; past the end the terminal
        position is held at rest."""
        xi = np.zeros(12)
        if index < len(self):
            xi[0:3] = self.positions[index]
            xi[3:6] = self.velocities[index]
            xi[8] = self.yaw[index]
        else:
            xi[0:3] = self.positions[-1]
            xi[8] = self.yaw[-1]
        return xi

    def fit(self, count: int) -> Trajectory:
        """Exactly ``count`` samples: truncate, or extend by holding the end at rest."""
        if count <= len(self):
            return Trajectory(self.dt, self.positions[:count], self.velocities[:count],
                              self.yaw[:count])
        extra = count - len(self)
        return Trajectory(
            self.dt,
            np.vstack([self.positions, np.repeat(self.positions[-1:], extra, axis=0)]),
            np.vstack([self.velocities, np.zeros((extra, 3))]),
            np.concatenate([self.yaw, np.repeat(self.yaw[-1:], extra)]),
        )


# ---------------------------------------------------------------------------
# RRT*


def rewire_radius(n: int, params: PlannerParams) -> float:
    if n < 2:
        return params.steer_step
    return min(params.steer_step, params.gamma * (np.log(n) / n) ** (1.0 / 3.0))


def plan(env: Environment, start, goal, params: PlannerParams) -> Path:
    """RRT* from ``start`` to within ``goal_tolerance`` of ``goal``.

    The whole iteration budget is spent refining; the cheapest goal-region node
    is returned, followed by the exact goal when that last edge is free.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if not is_free(env, start):
        raise ValueError(f"start {start} is not in free space")
    if not is_free(env, goal):
        raise ValueError(f"goal {goal} is not in free space")
    if np.array_equal(start, goal):
        return Path(start[None, :], 0.0, start[None, :], np.array([-1]))

    res = default_resolution(env)
    rng = np.random.default_rng(params.rng_seed)
    cap = params.max_iterations + 1
    nodes = np.empty((cap, 3))
    parents = np.full(cap, -1, dtype=np.int64)
    costs = np.empty(cap)
    children: list[list[int]] = [[] for _ in range(cap)]
    nodes[0], costs[0] = start, 0.0
    count = 1
    lo, hi = env.sample_min, env.sample_max

    for _ in range(params.max_iterations):
        # fixed draw pattern per iteration keeps runs with different budgets aligned
        use_goal = rng.random() < params.goal_bias
        uniform = rng.uniform(lo, hi)
        target = goal if use_goal else uniform

        dists = np.linalg.norm(nodes[:count] - target, axis=1)
        nearest = int(np.argmin(dists))
        if dists[nearest] <= params.steer_step:
            new = target.copy()
        else:
            new = nodes[nearest] + (target - nodes[nearest]) * (params.steer_step / dists[nearest])
        if dists[nearest] == 0.0 or not segment_free(env, nodes[nearest], new, res):
            continue

        radius = rewire_radius(count + 1, params)
        to_new = np.linalg.norm(nodes[:count] - new, axis=1)
        near = np.flatnonzero(to_new <= radius)
        best_parent, best_cost = nearest, costs[nearest] + to_new[nearest]
        for j in near:
            c = costs[j] + to_new[j]
            if c < best_cost and segment_free(env, nodes[j], new, res):
                best_parent, best_cost = int(j), c

        idx = count
        nodes[idx], costs[idx], parents[idx] = new, best_cost, best_parent
        children[best_parent].append(idx)
        count += 1

        for j in near:
            if j == best_parent:
                continue
            c = best_cost + to_new[j]
            if c < costs[j] and segment_free(env, new, nodes[j], res):
                children[parents[j]].remove(int(j))
                parents[j] = idx
                children[idx].append(int(j))
                delta = costs[j] - c
                stack = [int(j)]
                while stack:
                    k = stack.pop()
                    costs[k] -= delta
                    stack.extend(children[k])

    return _extract(env, nodes[:count], parents[:count], costs[:count], goal, params, res)


def best_goal_cost(nodes: Array, costs: Array, goal: Array, tolerance: float) -> float:
    d = np.linalg.norm(nodes - goal, axis=1)
    inside = d <= tolerance
    if not np.any(inside):
        return np.inf
    return float(np.min(costs[inside] + d[inside]))


def _extract(env, nodes, parents, costs, goal, params, res) -> Path:
    d = np.linalg.norm(nodes - goal, axis=1)
    candidates = np.flatnonzero(d <= params.goal_tolerance)
    if candidates.size == 0:
        raise PlanningError(
            f"no node within {params.goal_tolerance} m of the goal after "
            f"{params.max_iterations} iterations")
    total = costs[candidates] + d[candidates]
    best = int(candidates[np.argmin(total)])
    chain = []
    k = best
    while k != -1:
        chain.append(nodes[k])
        k = parents[k]
    waypoints = np.array(chain[::-1])
    if d[best] > 0 and segment_free(env, waypoints[-1], goal, res):
        waypoints = np.vstack([waypoints, goal])
    return Path(waypoints, path_length(waypoints), nodes.copy(), parents.copy())


# ---------------------------------------------------------------------------
# time parameterization


def trapezoid_profile(length: float, cruise_speed: float, acceleration: float):
    """Arc-length ``s(t)`` and speed for a rest-to-rest trapezoid; returns (duration, fn)."""
    if length <= 0:
        return 0.0, lambda t: (0.0, 0.0)
    if length >= cruise_speed ** 2 / acceleration:
        v_peak = cruise_speed
        t_ramp = cruise_speed / acceleration
        duration = length / cruise_speed + t_ramp
    else:
        v_peak = np.sqrt(acceleration * length)
        t_ramp = v_peak / acceleration
        duration = 2 * t_ramp

    def profile(t: float) -> tuple[float, float]:
        if t <= 0:
            return 0.0, 0.0
        if t >= duration:
            return length, 0.0
        if t < t_ramp:
            return 0.5 * acceleration * t * t, acceleration * t
        if t > duration - t_ramp:
            tr = duration - t
            return length - 0.5 * acceleration * tr * tr, acceleration * tr
        return 0.5 * acceleration * t_ramp ** 2 + v_peak * (t - t_ramp), v_peak

    return duration, profile


class _ArcLengthSpline:
    """Cubic spline through waypoints with chord-length knots, queried by arc length."""

    def __init__(self, waypoints: Array):
        chords = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
        keep = np.concatenate([[True], chords > 1e-12])
        waypoints = waypoints[keep]
        chords = chords[keep[1:]]
        self.knots = np.concatenate([[0.0], np.cumsum(chords)])
        self.spline = CubicSpline(self.knots, waypoints, bc_type="natural")
        self.deriv = self.spline.derivative()
        seg = [self._segment_length(a, b) for a, b in zip(self.knots[:-1], self.knots[1:])]
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def _segment_length(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        # composite rule: a single panel loses ~1e-8 on tightly curved segments
        edges = np.linspace(a, b, _GL_PANELS + 1)
        half = 0.5 * (edges[1] - edges[0])
        lam = (half * _GL_NODES[None, :] + 0.5 * (edges[:-1] + edges[1:])[:, None]).ravel()
        speed = np.linalg.norm(self.deriv(lam), axis=1).reshape(_GL_PANELS, -1)
        return float(half * np.sum(speed @ _GL_WEIGHTS))

    def parameter(self, s: float) -> float:
        if s <= 0:
            return 0.0
        if s >= self.length:
            return float(self.knots[-1])
        k = min(int(np.searchsorted(self.cum, s, side="right")) - 1, len(self.knots) - 2)
        a, b = self.knots[k], self.knots[k + 1]
        rem = s - self.cum[k]
        return brentq(lambda lam: self._segment_length(a, lam) - rem, a, b, xtol=1e-14)

    def evaluate(self, s: float, speed: float) -> tuple[Array, Array]:
        lam = self.parameter(s)
        tangent = self.deriv(lam)
        norm = np.linalg.norm(tangent)
        vel = tangent / norm * speed if norm > 0 else np.zeros(3)
        return self.spline(lam), vel


def _resample(length, evaluate, cruise_speed, dt, acceleration, yaw) -> Trajectory:
    duration, profile = trapezoid_profile(length, cruise_speed, acceleration)
    count = int(np.ceil(duration / dt - 1e-12)) + 1
    positions = np.empty((count, 3))
    velocities = np.empty((count, 3))
    for i in range(count):
        s, speed = profile(i * dt)
        positions[i], velocities[i] = evaluate(s, speed)
    velocities[-1] = 0.0
    return Trajectory(dt, positions, velocities, np.full(count, float(yaw)))


def smooth(path: Path, cruise_speed: float, dt: float, env: Environment | None = None,
           acceleration: float = 1.0, yaw: float = 0.0) -> Trajectory:
    """Arc-length parameterized cubic spline with a rest-to-rest trapezoidal speed law.

    Raises :class:`SmoothingCollision` if any resampled point is not free in ``env``.
    """
    if not cruise_speed > 0 or not dt > 0 or not acceleration > 0:
        raise ValueError("cruise_speed, dt and acceleration must be positive")
    pts = path.waypoints
    if len(pts) == 1 or path_length(pts) == 0:
        return Trajectory(dt, pts[:1].copy(), np.zeros((1, 3)), np.full(1, float(yaw)))
    curve = _ArcLengthSpline(pts)
    traj = _resample(curve.length, curve.evaluate, cruise_speed, dt, acceleration, yaw)
    if env is not None and not np.all(env.free_mask(traj.positions)):
        raise SmoothingCollision("spline sample left free space")
    return traj


def piecewise_linear(path: Path, cruise_speed: float, dt: float,
                     acceleration: float = 1.0, yaw: float = 0.0) -> Trajectory:
    """Same speed law along the polyline itself; collision-valid whenever the path is."""
    if not cruise_speed > 0 or not dt > 0 or not acceleration > 0:
        raise ValueError("cruise_speed, dt and acceleration must be positive")
    pts = path.waypoints
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    pts = pts[keep]
    if len(pts) == 1:
        return Trajectory(dt, pts[:1].copy(), np.zeros((1, 3)), np.full(1, float(yaw)))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])

    def evaluate(s: float, speed: float) -> tuple[Array, Array]:
        k = min(max(int(np.searchsorted(cum, s, side="right")) - 1, 0), len(seg) - 1)
        direction = (pts[k + 1] - pts[k]) / seg[k]
        return pts[k] + direction * (s - cum[k]), direction * speed

    return _resample(float(cum[-1]), evaluate, cruise_speed, dt, acceleration, yaw)
