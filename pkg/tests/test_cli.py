from __future__ import annotations

import csv
import json

import pytest

from crowdnav.cli import main, parse_seeds
from crowdnav.flow_map import load_map


@pytest.fixture(scope="module")
def corridor_map(tmp_path_factory):
    out = tmp_path_factory.mktemp("map")
    assert main(["map", "--scenario", "corridor", "--seed", "1", "--duration", "60", "-o", str(out)]) == 0
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_map_artifacts(corridor_map):
    for name in ("map.json", "quality.csv", "heatmap.pgm"):
        assert (corridor_map / name).exists()
    fmap = load_map((corridor_map / "map.json").read_bytes())
    assert not fmap.is_empty()
    q = rows(corridor_map / "quality.csv")
    assert list(q[0]) == ["t", "quality"]
    assert float(q[0]["t"]) == 0.0 and float(q[-1]["t"]) == 60.0
    assert (corridor_map / "heatmap.pgm").read_bytes().startswith(b"P5")


def test_map_is_byte_identical_on_rerun(corridor_map, tmp_path):
    assert main(["map", "--scenario", "corridor", "--seed", "1", "--duration", "60", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "map.json").read_bytes() == (corridor_map / "map.json").read_bytes()


def test_missing_scenario_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["map", "--scenario", str(missing), "-o", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_invalid_scenario_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": 1}')
    assert main(["map", "--scenario", str(bad), "-o", str(tmp_path)]) == 2


def test_navigate_fifty_rows(corridor_map, tmp_path):
    code = main(["navigate", "--scenario", "corridor", "--map", str(corridor_map / "map.json"),
                 "--localizer", "crowd", "--planner", "dstar", "--seeds", "1..50", "--budget", "1",
                 "-o", str(tmp_path)])
    assert code == 0
    runs = rows(tmp_path / "runs.csv")
    assert len(runs) == 50
    assert sorted(int(r["seed"]) for r in runs) == list(range(1, 51))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) >= {"scenario", "config", "success_rate", "ca_mean", "ca_std", "mse_mean"}
    assert summary["config"] == {"localizer": "crowd", "planner": "dstar_crowd"}


def test_navigate_crowd_without_map_exits_2(tmp_path):
    assert main(["navigate", "--scenario", "corridor", "--localizer", "crowd", "--seed", "1",
                 "-o", str(tmp_path)]) == 2


def test_baseline_navigation_needs_no_map(tmp_path):
    code = main(["navigate", "--scenario", "corridor", "--planner", "astar-shortest", "--localizer", "odometry",
                 "--seeds", "1,2", "--trajectories", "-o", str(tmp_path)])
    assert code == 0
    assert len(rows(tmp_path / "runs.csv")) == 2
    assert (tmp_path / "trajectory_seed1.csv").exists()


def test_plan_writes_path(corridor_map, tmp_path):
    code = main(["plan", "--scenario", "corridor", "--map", str(corridor_map / "map.json"), "--planner",
                 "astar-social", "-o", str(tmp_path)])
    assert code == 0
    path = rows(tmp_path / "path.csv")
    assert list(path[0]) == ["idx", "cell_i", "cell_j", "x", "y", "edge_cost"]
    assert (int(path[0]["cell_i"]), int(path[0]["cell_j"])) == (3, 3)
    assert (int(path[-1]["cell_i"]), int(path[-1]["cell_j"])) == (37, 3)


def test_localize(corridor_map, tmp_path):
    code = main(["localize", "--scenario", "corridor", "--map", str(corridor_map / "map.json"), "--seed", "3",
                 "--duration", "10", "-o", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "localization_summary.json").read_text())
    assert summary["runs"][0]["seed"] == 3
    assert len(rows(tmp_path / "localization_seed3.csv")) == 101


def test_replay_and_report(tmp_path):
    nav = tmp_path / "nav"
    assert main(["navigate", "--scenario", "corridor", "--seed", "1", "--trajectories", "-o", str(nav)]) == 0
    frames = tmp_path / "frames"
    assert main(["replay", "--log", str(nav / "trajectory_seed1.csv"), "--scenario", "corridor",
                 "-o", str(frames)]) == 0
    n_rows = len(rows(nav / "trajectory_seed1.csv"))
    assert len(list(frames.glob("frame_*.ppm"))) == n_rows
    rep = tmp_path / "rep"
    assert main(["report", str(nav / "runs.csv"), "-o", str(rep)]) == 0
    table = (rep / "table2.md").read_text()
    assert "| Odometry | A* (shortest) |" in table


def test_replay_empty_and_malformed(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["replay", "--log", str(empty), "-o", str(tmp_path / "f")]) == 0
    assert list((tmp_path / "f").glob("*.ppm")) == []
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["replay", "--log", str(bad), "-o", str(tmp_path / "g")]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario_path": "corridor", "seeds": [4], "stage": "map",
                               "eval": {"map_duration": 20}, "output_dir": str(tmp_path / "o")}))
    assert main(["map", "--config", str(cfg)]) == 0
    assert (tmp_path / "o" / "map.json").exists()
    assert main(["navigate", "--config", str(cfg)]) == 2  # stage mismatch
    cfg.write_text(json.dumps({"scenario_path": "corridor", "colour": "red"}))
    assert main(["map", "--config", str(cfg)]) == 2


def test_parse_seeds():
    assert parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert parse_seeds("3,1,2,2") == [1, 2, 3]
    assert parse_seeds("7") == [7]
    for bad in ("", "5..1", "a", "-1"):
        with pytest.raises(Exception):
            parse_seeds(bad)


def test_report_rejects_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "none.csv"), "-o", str(tmp_path)]) == 2
