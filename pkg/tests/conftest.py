from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from safekino import config  # noqa: E402
from safekino.controller import lqr_gain  # noqa: E402
from safekino.dynamics import QuadrotorParams, linearize_hover  # noqa: E402
from safekino.pipeline import build_components, run_mission  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def maze_config():
    return config.load(SCENARIOS / "maze_iv.json")


@pytest.fixture(scope="session")
def params(maze_config) -> QuadrotorParams:
    return maze_config.quadrotor


@pytest.fixture(scope="session")
def model(params, maze_config):
    return linearize_hover(params, maze_config.mission.dt)


@pytest.fixture(scope="session")
def design(model, maze_config):
    return lqr_gain(model, maze_config.lqr.q_weights, maze_config.lqr.r_weights)


@pytest.fixture(scope="session")
def components(maze_config):
    return build_components(maze_config)


@pytest.fixture(scope="session")
def maze_runs(maze_config, components):
    on = run_mission(maze_config.environment, components, filter_enabled=True)
    off = run_mission(maze_config.environment, components, filter_enabled=False)
    return on, off


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
