"""Axis-aligned workspace with box obstacles and sphere collision queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


@dataclass(frozen=True)
class Aabb:
    min: Array
    max: Array

    def __post_init__(self) -> None:
        lo = np.array(self.min, dtype=float).reshape(3)
        hi = np.array(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def distance(self, point: Array) -> float:
        """Euclidean distance from ``point`` to the box (0 inside)."""
        gap = np.maximum(np.maximum(self.min - point, 0.0), point - self.max)
        return float(np.linalg.norm(gap))

    @property
    def centroid(self) -> Array:
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True)
class Environment:
    workspace_min: Array
    workspace_max: Array
    obstacles: tuple[Aabb, ...] = field(default_factory=tuple)
    robot_radius: float = 0.06

    def __post_init__(self) -> None:
        lo = np.array(self.workspace_min, dtype=float).reshape(3)
        hi = np.array(self.workspace_max, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise ValueError("workspace_min must be < workspace_max componentwise")
        if not self.robot_radius >= 0:
            raise ValueError("robot_radius must be non-negative")
        object.__setattr__(self, "workspace_min", lo)
        object.__setattr__(self, "workspace_max", hi)
        object.__setattr__(self, "obstacles", tuple(
            o if isinstance(o, Aabb) else Aabb(*o) for o in self.obstacles))
        lows = np.array([o.min for o in self.obstacles]).reshape(-1, 3)
        highs = np.array([o.max for o in self.obstacles]).reshape(-1, 3)
        object.__setattr__(self, "_lows", lows)
        object.__setattr__(self, "_highs", highs)

    @property
    def sample_min(self) -> Array:
        return self.workspace_min + self.robot_radius

    @property
    def sample_max(self) -> Array:
        return self.workspace_max - self.robot_radius

    def obstacle_distance(self, points: Array) -> Array:
        """Euclidean distance from each point to the nearest box (inf without boxes)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not len(self.obstacles):
            return np.full(len(pts), np.inf)
        gap = np.maximum(np.maximum(self._lows[None] - pts[:, None], 0.0),
                         pts[:, None] - self._highs[None])
        return np.min(np.linalg.norm(gap, axis=2), axis=1)

    def free_mask(self, points: Array) -> NDArray[np.bool_]:
        """Vectorized :func:`is_free` over an ``(N, 3)`` array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = self.robot_radius
        ok = np.all((pts >= self.workspace_min + r) & (pts <= self.workspace_max - r), axis=1)
        return ok & (self.obstacle_distance(pts) > r)


def is_free(env: Environment, point) -> bool:
    """Inside the shrunk workspace and farther than the robot radius from every box."""
    return bool(env.free_mask(np.asarray(point, dtype=float).reshape(1, 3))[0])


def segment_samples(a, b, resolution: float) -> Array:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    count = max(int(np.ceil(length / resolution)), 1) + 1
    t = np.linspace(0.0, 1.0, count)[:, None]
    return a + t * (b - a)


def segment_free(env: Environment, a, b, resolution: float | None = None,
                 refine: int = 10) -> bool:
    """Every sample at spacing <= ``resolution`` along [a, b], endpoints included, is free.

    Clearance is 1-Lipschitz along the segment, so a collision can only hide
    between two samples next to one whose clearance is within half a spacing of
    the radius; those intervals are re-sampled ``refine`` times finer.
    """
    if resolution is None:
        resolution = default_resolution(env)
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    # canonical endpoint order keeps the query symmetric bit-for-bit
    if tuple(np.asarray(b, dtype=float)) < tuple(np.asarray(a, dtype=float)):
        a, b = b, a
    pts = segment_samples(a, b, resolution)
    if not np.all(env.free_mask(pts)):
        return False
    if len(pts) < 2 or refine <= 1:
        return True
    spacing = float(np.linalg.norm(pts[1] - pts[0]))
    near = np.flatnonzero(env.obstacle_distance(pts) <= env.robot_radius + 0.5 * spacing)
    if near.size == 0:
        return True
    starts = np.unique(np.clip(np.concatenate([near - 1, near]), 0, len(pts) - 2))
    t = np.linspace(0.0, 1.0, refine + 1)[1:-1]
    fine = pts[starts, None] + t[None, :, None] * (pts[starts + 1] - pts[starts])[:, None]
    return bool(np.all(env.free_mask(fine.reshape(-1, 3))))


def default_resolution(env: Environment) -> float:
    return env.robot_radius / 2 if env.robot_radius > 0 else 0.01
