from __future__ import annotations

import copy
import json

import pytest

from crowdnav.scenario import (
    SHIPPED, Circle, Rect, ScenarioError, load_scenario, scenario_from_dict, shipped_scenario,
)

MINIMAL = {
    "schema": 1,
    "name": "tiny",
    "extent": {"w": 10, "h": 10},
    "lanes": [{"waypoints": [[1, 5], [9, 5]], "rate": 0.5}],
    "density": 0.05,
    "robot": {"start": [1, 1, 0], "goal": [9, 9]},
    "seed": 1,
}


def with_change(path, value):
    data = copy.deepcopy(MINIMAL)
    node = data
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    return data


def test_minimal_config_loads():
    sc = load_scenario(json.dumps(MINIMAL))
    assert sc.name == "tiny" and len(sc.lanes) == 1
    assert sc.width == 10 and sc.height == 10
    assert sc.lanes[0].rate == 0.5 and not sc.lanes[0].bidirectional
    assert sc.n_agents == 5


def test_fountain_ships_with_paper_extent_and_density():
    sc = shipped_scenario("fountain")
    assert (sc.width, sc.height) == (50, 50)
    assert sc.density == pytest.approx(0.130)


@pytest.mark.parametrize("name,extent,density", [
    ("conference", (100, 50), 0.045), ("canteen", (100, 25), 0.081),
])
def test_other_analogs(name, extent, density):
    sc = shipped_scenario(name)
    assert (sc.width, sc.height) == extent
    assert sc.density == pytest.approx(density)


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_round_trip(name):
    sc = shipped_scenario(name)
    assert scenario_from_dict(json.loads(json.dumps(sc.to_dict()))) == sc


def test_waypoint_outside_extent_is_rejected():
    bad = with_change(["lanes", 0, "waypoints"], [[-1, 5], [9, 5]])
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(bad)
    assert err.value.field == "lanes[0].waypoints[0]"


@pytest.mark.parametrize("path,value,field", [
    (["extent", "w"], 0, "extent"),
    (["density"], -0.1, "density"),
    (["lanes", 0, "rate"], -1, "lanes[0].rate"),
    (["lanes", 0, "waypoints"], [[1, 1]], "lanes[0].waypoints"),
    (["lanes", 0, "waypoints"], [[1, 1], [1, 1]], "lanes[0]"),
    (["robot", "goal"], [11, 5], "robot.goal"),
    (["seed"], -3, "seed"),
    (["schema"], 2, "schema"),
])
def test_semantic_errors_name_the_field(path, value, field):
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(with_change(path, value))
    assert err.value.field == field


def test_unknown_keys_rejected():
    bad = copy.deepcopy(MINIMAL)
    bad["wind"] = 3
    with pytest.raises(ScenarioError, match="unknown"):
        scenario_from_dict(bad)
    bad = with_change(["lanes", 0, "speed"], 1.0)
    with pytest.raises(ScenarioError, match="unknown"):
        scenario_from_dict(bad)


def test_obstacles_parse_and_validate():
    data = copy.deepcopy(MINIMAL)
    data["obstacles"] = [{"type": "rect", "min": [2, 2], "max": [3, 4]},
                         {"type": "circle", "center": [7, 7], "radius": 1}]
    sc = scenario_from_dict(data)
    assert sc.obstacles == (Rect(2, 2, 3, 4), Circle(7, 7, 1))
    data["obstacles"] = [{"type": "circle", "center": [9.5, 7], "radius": 1}]
    with pytest.raises(ScenarioError, match="outside"):
        scenario_from_dict(data)
    data["obstacles"] = [{"type": "triangle"}]
    with pytest.raises(ScenarioError):
        scenario_from_dict(data)


def test_parse_error_reports_line():
    text = '{\n  "schema": 1,\n  "name": oops\n}'
    with pytest.raises(ScenarioError) as err:
        load_scenario(text)
    assert err.value.line == 3


def test_missing_required_key():
    bad = copy.deepcopy(MINIMAL)
    del bad["robot"]
    with pytest.raises(ScenarioError, match="missing"):
        scenario_from_dict(bad)


def test_unknown_shipped_name():
    with pytest.raises(KeyError):
        shipped_scenario("atrium")
