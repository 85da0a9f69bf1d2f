from __future__ import annotations

import csv
import json

import pytest

from safekino.cli import CHART_NAMES, RUN_FILES, SERIES, main

from conftest import SCENARIOS

MAZE = str(SCENARIOS / "maze_iv.json")
HOVER = str(SCENARIOS / "hover.json")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def maze_dirs(tmp_path_factory):
    out = tmp_path_factory.mktemp("maze")
    code = main(["run", MAZE, "--filter", "both", "--out", str(out)])
    return code, out / "filter_on", out / "filter_off"


@pytest.fixture(scope="module")
def hover_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("hover")
    return main(["run", HOVER, "--out", str(out)]), out


def test_hover_run_exit_zero(hover_dir):
    code, out = hover_dir
    assert code == 0
    assert all((out / name).is_file() for name in RUN_FILES)
    assert read_csv(out / "interventions.csv") == [
        ["step", *(f"u_des_{i}" for i in range(4)), *(f"u_safe_{i}" for i in range(4))]]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["reached_goal"] and summary["steps"] == 0


def test_maze_exit_codes(maze_dirs):
    code, on, off = maze_dirs
    assert code == 2  # worst of the pair: the unfiltered run violates
    assert json.loads((on / "summary.json").read_text())["violation_count"] == 0
    assert json.loads((off / "summary.json").read_text())["violation_count"] >= 1


def test_maze_filter_off_alone_exits_two(tmp_path):
    assert main(["run", MAZE, "--filter", "off", "--out", str(tmp_path)]) == 2


def test_trajectory_csv_layout(maze_dirs):
    _, on, _ = maze_dirs
    rows = read_csv(on / "trajectory.csv")
    header = rows[0]
    assert header[:2] == ["step", "t"] and header[2:14] == CHART_NAMES
    assert header[-3:] == ["intervened", "fallback", "window"]
    summary = json.loads((on / "summary.json").read_text())
    assert len(rows) - 1 == summary["steps"]
    assert sum(int(r[header.index("intervened")]) for r in rows[1:]) \
        == summary["intervention_count"]
    assert len(read_csv(on / "interventions.csv")) - 1 == summary["intervention_count"]


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", MAZE, "--out", str(a)]) == 0
    assert main(["run", MAZE, "--out", str(b)]) == 0
    for name in RUN_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "name": "x",\n  "speed": 3\n}\n')
    assert main(["run", str(bad)]) == 1
    assert f"{bad}:3" in capsys.readouterr().err


def test_compare_identical_is_zero(maze_dirs, tmp_path):
    _, on, _ = maze_dirs
    assert main(["compare", str(on), str(on), "--out", str(tmp_path)]) == 0
    comparison = json.loads((tmp_path / "comparison.json").read_text())
    assert all(v == 0 for v in comparison["delta"].values())


def test_compare_on_vs_off(maze_dirs, tmp_path):
    _, on, off = maze_dirs
    assert main(["compare", str(off), str(on), "--out", str(tmp_path)]) == 0
    comparison = json.loads((tmp_path / "comparison.json").read_text())
    assert comparison["delta"]["violation_count"] < 0
    assert comparison["b"]["intervention_count"] > 0


def test_compare_mismatch_exits_one(maze_dirs, hover_dir, tmp_path):
    _, on, _ = maze_dirs
    _, hover = hover_dir
    assert main(["compare", str(on), str(hover), "--out", str(tmp_path)]) == 1
    assert main(["compare", str(on), str(tmp_path / "missing")]) == 1
    assert not (tmp_path / "comparison.json").exists()


def test_export_angles(maze_dirs, tmp_path):
    _, on, _ = maze_dirs
    out = tmp_path / "angles.csv"
    assert main(["export-series", str(on), "angles", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["t", "roll", "pitch", "yaw", "roll_min", "roll_max",
                       "pitch_min", "pitch_max", "yaw_min", "yaw_max"]
    steps = json.loads((on / "summary.json").read_text())["steps"]
    assert len(rows) - 1 == steps
    assert all(float(r[6]) == -0.05 and float(r[7]) == 0.05 for r in rows[1:])
    assert all(abs(float(r[2])) <= 0.05 for r in rows[1:])


def test_export_topview_within_workspace(maze_dirs, tmp_path, maze_config):
    _, on, _ = maze_dirs
    out = tmp_path / "top.csv"
    assert main(["export-series", str(on), "position_topview", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0][:3] == ["t", "x", "y"]
    env = maze_config.environment
    ys = [float(r[2]) for r in rows[1:]]
    assert env.workspace_min[1] <= min(ys) and max(ys) <= env.workspace_max[1]
    assert max(abs(y) for y in ys) <= max(abs(env.workspace_min[1]), abs(env.workspace_max[1]))


@pytest.mark.parametrize("series", sorted(SERIES))
def test_every_series_exports(maze_dirs, tmp_path, series):
    _, on, _ = maze_dirs
    out = tmp_path / f"{series}.csv"
    assert main(["export-series", str(on), series, "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len({len(r) for r in rows}) == 1


def test_export_empty_run_is_header_only(hover_dir, tmp_path):
    _, hover = hover_dir
    out = tmp_path / "angles.csv"
    assert main(["export-series", str(hover), "angles", "--out", str(out)]) == 0
    assert len(read_csv(out)) == 1


def test_export_unknown_series(maze_dirs, capsys):
    _, on, _ = maze_dirs
    assert main(["export-series", str(on), "bogus"]) == 1
    err = capsys.readouterr().err
    assert all(name in err for name in SERIES)
