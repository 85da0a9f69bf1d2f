from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from safekino import config
from safekino.environment import Aabb, Environment, is_free
from safekino.pipeline import (
    build_components,
    compare_runs,
    compare_summaries,
    run_mission,
    select_subgoal,
    summarize,
)
from safekino.planner import PlanningError

OPEN_ROOM = Environment([-1.0, -1.0, 0.0], [1.5, 1.0, 1.0], (), 0.06)


def open_room_config(maze_config, start, goal, **mission):
    cfg = replace(maze_config, name="open_room", environment=OPEN_ROOM)
    return config.replace_mission(cfg, start=tuple(start), goal=tuple(goal), **mission)


@pytest.fixture(scope="module")
def open_room(maze_config):
    cfg = open_room_config(maze_config, (0.0, 0.0, 0.5), (0.5, 0.0, 0.5))
    comps = build_components(cfg)
    return cfg, comps, run_mission(cfg.environment, comps, filter_enabled=True)


def test_start_equals_goal(maze_config):
    cfg = open_room_config(maze_config, (0.2, 0.0, 0.5), (0.2, 0.0, 0.5))
    result = run_mission(cfg.environment, build_components(cfg))
    assert result.reached_goal and result.windows == 0
    assert len(result.executed_trajectory) == 1 and not result.records


def test_open_room_reaches_goal(open_room):
    cfg, _, result = open_room
    assert result.reached_goal
    assert result.goal_error <= cfg.mission.goal_region_radius
    assert result.constraint_violations == []
    assert not result.aborted


def test_every_window_is_horizon_long(open_room):
    cfg, _, result = open_room
    horizon = cfg.mission.horizon
    assert len(result.records) == result.windows * horizon
    assert all(len(seg) == horizon for seg in result.planned_segments)
    assert [r.step for r in result.records] == list(range(1, len(result.records) + 1))


def test_position_continuity(maze_runs, maze_config):
    dt = maze_config.mission.dt
    for result in maze_runs:
        charts = result.charts
        # bound the step by the fastest speed actually reached at either end
        speed = np.linalg.norm(charts[:, 3:6], axis=1)
        jumps = np.linalg.norm(np.diff(charts[:, :3], axis=0), axis=1)
        vmax = float(speed.max())
        assert np.all(jumps <= vmax * dt * (1 + 1e-6))


def test_window_starts_at_previous_end(maze_runs, maze_config):
    horizon = maze_config.mission.horizon
    on, _ = maze_runs
    for j, seg in enumerate(on.planned_segments[1:], start=1):
        end_of_previous = on.executed_trajectory[j * horizon].position
        assert np.allclose(seg.positions[0], end_of_previous, atol=1e-12)


def test_maze_contrast(maze_runs):
    on, off = maze_runs
    assert on.reached_goal and on.constraint_violations == []
    assert len(on.interventions) > 0
    assert len(off.constraint_violations) >= 1
    assert not off.interventions
    comparison = compare_runs(off, on)
    assert comparison["delta"]["violation_count"] < 0
    assert comparison["b"]["intervention_density"] > 0


def test_filter_on_states_inside_constraints_or_fallback(maze_runs, components):
    on, _ = maze_runs
    fallbacks = set(on.fallback_steps)
    for rec in on.records:
        assert components.c_set.contains(rec.chart) or (rec.step - 1) in fallbacks


def test_deterministic(open_room):
    cfg, comps, first = open_room
    second = run_mission(cfg.environment, comps, filter_enabled=True)
    assert np.array_equal(first.charts, second.charts)
    assert np.array_equal([r.u_safe for r in first.records], [r.u_safe for r in second.records])
    assert summarize(first) == summarize(second)


def test_rejects_bad_start(maze_config, components):
    cfg = config.replace_mission(maze_config, start=(0.5, 0.0, 0.3))  # inside the wall
    comps = replace(components, config=cfg)
    with pytest.raises(ValueError):
        run_mission(cfg.environment, comps)


def test_compare_identical_is_zero(open_room):
    _, _, result = open_room
    comparison = compare_runs(result, result)
    assert all(v == 0 for v in comparison["delta"].values())


def test_compare_rejects_mismatch(open_room, maze_runs):
    _, _, result = open_room
    with pytest.raises(ValueError):
        compare_runs(result, maze_runs[0])
    with pytest.raises(ValueError):
        compare_summaries({"scenario": "a"}, {"scenario": "b"})


def test_subgoal_selection(rng):
    env = Environment([0, 0, 0], [2, 1, 1], (), 0.05)
    target = select_subgoal(env, np.array([0.2, 0.5, 0.5]), np.array([1.8, 0.5, 0.5]),
                            0.4, 0.2, rng)
    assert np.allclose(target, [0.6, 0.5, 0.5])
    near = select_subgoal(env, np.array([0.2, 0.5, 0.5]), np.array([0.3, 0.5, 0.5]),
                          0.4, 0.2, rng)
    assert np.allclose(near, [0.3, 0.5, 0.5])


def test_subgoal_moved_out_of_obstacle(rng):
    env = Environment([0, 0, 0], [2, 1, 1], (Aabb([0.55, 0.45, 0.45], [0.65, 0.55, 0.55]),), 0.02)
    target = select_subgoal(env, np.array([0.2, 0.5, 0.5]), np.array([1.8, 0.5, 0.5]),
                            0.4, 0.3, rng)
    assert is_free(env, target)
    assert np.linalg.norm(target - [0.6, 0.5, 0.5]) <= 0.3


def test_subgoal_failure(rng):
    env = Environment([0, 0, 0], [2, 1, 1], (Aabb([0.3, 0.0, 0.0], [0.9, 1.0, 1.0]),), 0.02)
    with pytest.raises(PlanningError):
        select_subgoal(env, np.array([0.1, 0.5, 0.5]), np.array([1.8, 0.5, 0.5]),
                       0.5, 0.05, rng, attempts=50)
