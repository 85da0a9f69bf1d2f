from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safekino.environment import Aabb, Environment, is_free, segment_free

coord = st.floats(-0.5, 2.5, allow_nan=False)
point = st.tuples(coord, coord, coord)


def random_env(rng, boxes=5, radius=0.06) -> Environment:
    obstacles = []
    for _ in range(boxes):
        lo = rng.uniform(0, 1.6, size=3)
        obstacles.append(Aabb(lo, lo + rng.uniform(0.05, 0.4, size=3)))
    return Environment([0, 0, 0], [2, 2, 2], tuple(obstacles), radius)


def brute_force_free(env: Environment, p) -> bool:
    p = np.asarray(p, dtype=float)
    r = env.robot_radius
    if np.any(p < env.workspace_min + r) or np.any(p > env.workspace_max - r):
        return False
    for box in env.obstacles:
        inside = np.all((p >= box.min) & (p <= box.max))
        if inside:
            return False
        # distance to the closest point of each face rectangle
        best = np.inf
        for axis in range(3):
            for value in (box.min[axis], box.max[axis]):
                q = np.clip(p, box.min, box.max)
                q[axis] = value
                best = min(best, float(np.linalg.norm(p - q)))
        if best <= r:
            return False
    return True


def test_validation():
    with pytest.raises(ValueError):
        Environment([0, 0, 0], [1, 0, 1])
    with pytest.raises(ValueError):
        Environment([0, 0, 0], [1, 1, 1], (), -0.1)
    with pytest.raises(ValueError):
        Aabb([1, 0, 0], [0, 1, 1])


def test_interior_and_exterior_points():
    env = Environment([0, 0, 0], [2, 2, 2], (), 0.0)
    assert is_free(env, (1, 1, 1))
    assert not is_free(env, (3, 1, 1))


def test_matches_brute_force_oracle(rng):
    env = random_env(rng)
    pts = rng.uniform(-0.1, 2.1, size=(10_000, 3))
    mask = env.free_mask(pts)
    oracle = np.array([brute_force_free(env, p) for p in pts])
    assert np.array_equal(mask, oracle)
    assert 0 < mask.sum() < len(pts)


def test_segment_in_empty_workspace():
    env = Environment([0, 0, 0], [2, 2, 2], (), 0.06)
    assert segment_free(env, (0.2, 0.2, 0.2), (1.8, 1.7, 1.5))


def test_segment_through_obstacle_centroid():
    box = Aabb([0.9, 0.9, 0.9], [1.1, 1.1, 1.1])
    env = Environment([0, 0, 0], [2, 2, 2], (box,), 0.06)
    c = box.centroid
    assert not segment_free(env, c - [0.7, 0.3, 0.1], c + [0.7, 0.3, 0.1])


def test_segment_against_fine_oracle(rng):
    env = random_env(rng)
    res = env.robot_radius / 2
    disagreements = 0
    for _ in range(1000):
        a, b = rng.uniform(0.06, 1.94, size=(2, 3))
        length = np.linalg.norm(b - a)
        n = int(np.ceil(length / (res / 10))) + 1
        fine = bool(np.all(env.free_mask(a + np.linspace(0, 1, n)[:, None] * (b - a))))
        disagreements += segment_free(env, a, b, res) != fine
    assert disagreements == 0


@settings(max_examples=200)
@given(point, st.floats(0.0, 0.3), st.floats(0.0, 1.0))
def test_shrinking_radius_keeps_points_free(p, r, frac):
    box = Aabb([0.8, 0.8, 0.8], [1.2, 1.2, 1.2])
    big = Environment([0, 0, 0], [2, 2, 2], (box,), r)
    small = Environment([0, 0, 0], [2, 2, 2], (box,), r * frac)
    if is_free(big, p):
        assert is_free(small, p)


@settings(max_examples=200)
@given(point, point)
def test_segment_symmetry_and_degenerate(a, b):
    box = Aabb([0.8, 0.8, 0.8], [1.2, 1.2, 1.2])
    env = Environment([0, 0, 0], [2, 2, 2], (box,), 0.06)
    assert segment_free(env, a, b) == segment_free(env, b, a)
    assert segment_free(env, a, a) == is_free(env, a)
