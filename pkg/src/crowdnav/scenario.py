"""Scenario description and the versioned JSON loader."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema", "name", "extent", "obstacles", "lanes", "density", "robot", "seed"}
_REQUIRED_TOP = _TOP_KEYS - {"obstacles"}


class ScenarioError(ValueError):
    """Raised for malformed or semantically invalid scenario files."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float


Obstacle = Rect | Circle


@dataclass(frozen=True)
class Lane:
    waypoints: tuple[tuple[float, float], ...]
    rate: float = 1.0
    bidirectional: bool = False

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.waypoints, self.waypoints[1:]))


@dataclass(frozen=True)
class Scenario:
    name: str
    width: float
    height: float
    obstacles: tuple[Obstacle, ...] = ()
    lanes: tuple[Lane, ...] = ()
    density: float = 0.0
    robot_start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    robot_goal: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def n_agents(self) -> int:
        """Fixed crowd population implied by the density target."""
        if not self.lanes:
            return 0
        return int(round(self.density * self.area))

    def inside(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def to_dict(self) -> dict[str, Any]:
        obstacles = []
        for ob in self.obstacles:
            if isinstance(ob, Rect):
                obstacles.append({"type": "rect", "min": [ob.x0, ob.y0], "max": [ob.x1, ob.y1]})
            else:
                obstacles.append({"type": "circle", "center": [ob.cx, ob.cy], "radius": ob.r})
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "extent": {"w": self.width, "h": self.height},
            "obstacles": obstacles,
            "lanes": [
                {"waypoints": [list(p) for p in ln.waypoints], "rate": ln.rate,
                 "bidirectional": ln.bidirectional}
                for ln in self.lanes
            ],
            "density": self.density,
            "robot": {"start": list(self.robot_start), "goal": list(self.robot_goal)},
            "seed": self.seed,
        }


def _num(value: Any, fld: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("expected a number", fld)
    if not math.isfinite(value):
        raise ScenarioError("expected a finite number", fld)
    return float(value)


def _point(value: Any, fld: str, n: int = 2) -> tuple[float, ...]:
    if not isinstance(value, list) or len(value) != n:
        raise ScenarioError(f"expected a list of {n} numbers", fld)
    return tuple(_num(v, f"{fld}[{k}]") for k, v in enumerate(value))


def _check_keys(obj: Any, allowed: set[str], required: set[str], fld: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError("expected an object", fld)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ScenarioError(f"unknown key(s) {unknown}", fld)
    missing = sorted(required - set(obj))
    if missing:
        raise ScenarioError(f"missing key(s) {missing}", fld)


def _parse_obstacle(obj: Any, fld: str) -> Obstacle:
    if not isinstance(obj, dict) or "type" not in obj:
        raise ScenarioError("obstacle needs a 'type'", fld)
    kind = obj["type"]
    if kind == "rect":
        _check_keys(obj, {"type", "min", "max"}, {"type", "min", "max"}, fld)
        x0, y0 = _point(obj["min"], f"{fld}.min")
        x1, y1 = _point(obj["max"], f"{fld}.max")
        if x1 <= x0 or y1 <= y0:
            raise ScenarioError("rect max must exceed min", fld)
        return Rect(x0, y0, x1, y1)
    if kind == "circle":
        _check_keys(obj, {"type", "center", "radius"}, {"type", "center", "radius"}, fld)
        cx, cy = _point(obj["center"], f"{fld}.center")
        r = _num(obj["radius"], f"{fld}.radius")
        if r <= 0:
            raise ScenarioError("radius must be positive", f"{fld}.radius")
        return Circle(cx, cy, r)
    raise ScenarioError(f"unknown obstacle type {kind!r}", f"{fld}.type")


def scenario_from_dict(data: Any) -> Scenario:
    _check_keys(data, _TOP_KEYS, _REQUIRED_TOP, "<root>")
    if data["schema"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema {data['schema']!r}, expected {SCHEMA_VERSION}", "schema")
    name = data["name"]
    if not isinstance(name, str) or not name:
        raise ScenarioError("expected a non-empty string", "name")
    _check_keys(data["extent"], {"w", "h"}, {"w", "h"}, "extent")
    w = _num(data["extent"]["w"], "extent.w")
    h = _num(data["extent"]["h"], "extent.h")
    if w <= 0 or h <= 0:
        raise ScenarioError("extent must be positive", "extent")

    def inside(x: float, y: float) -> bool:
        return 0.0 <= x <= w and 0.0 <= y <= h

    obstacles = []
    raw_obs = data.get("obstacles", [])
    if not isinstance(raw_obs, list):
        raise ScenarioError("expected a list", "obstacles")
    for k, ob in enumerate(raw_obs):
        parsed = _parse_obstacle(ob, f"obstacles[{k}]")
        if isinstance(parsed, Rect):
            ok = inside(parsed.x0, parsed.y0) and inside(parsed.x1, parsed.y1)
        else:
            ok = inside(parsed.cx - parsed.r, parsed.cy - parsed.r) and inside(parsed.cx + parsed.r, parsed.cy + parsed.r)
        if not ok:
            raise ScenarioError("obstacle outside extent", f"obstacles[{k}]")
        obstacles.append(parsed)

    if not isinstance(data["lanes"], list):
        raise ScenarioError("expected a list", "lanes")
    lanes = []
    for k, ln in enumerate(data["lanes"]):
        fld = f"lanes[{k}]"
        _check_keys(ln, {"waypoints", "rate", "bidirectional"}, {"waypoints"}, fld)
        wps = ln["waypoints"]
        if not isinstance(wps, list) or len(wps) < 2:
            raise ScenarioError("lane needs at least two waypoints", f"{fld}.waypoints")
        pts = tuple(_point(p, f"{fld}.waypoints[{m}]") for m, p in enumerate(wps))
        for m, (x, y) in enumerate(pts):
            if not inside(x, y):
                raise ScenarioError("waypoint outside extent", f"{fld}.waypoints[{m}]")
        rate = _num(ln.get("rate", 1.0), f"{fld}.rate")
        if rate < 0:
            raise ScenarioError("rate must be >= 0", f"{fld}.rate")
        bidir = ln.get("bidirectional", False)
        if not isinstance(bidir, bool):
            raise ScenarioError("expected a boolean", f"{fld}.bidirectional")
        lane = Lane(pts, rate, bidir)
        if lane.length <= 0:
            raise ScenarioError("lane has zero length", fld)
        lanes.append(lane)

    density = _num(data["density"], "density")
    if density < 0:
        raise ScenarioError("density must be >= 0", "density")

    _check_keys(data["robot"], {"start", "goal"}, {"start", "goal"}, "robot")
    start = _point(data["robot"]["start"], "robot.start", 3)
    goal = _point(data["robot"]["goal"], "robot.goal")
    if not inside(start[0], start[1]):
        raise ScenarioError("robot start outside extent", "robot.start")
    if not inside(*goal):
        raise ScenarioError("robot goal outside extent", "robot.goal")

    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed must be a non-negative integer", "seed")

    return Scenario(
        name=name, width=w, height=h, obstacles=tuple(obstacles), lanes=tuple(lanes),
        density=density, robot_start=start, robot_goal=goal, seed=seed,
    )


def load_scenario(config_text: str) -> Scenario:
    """Parse and validate scenario JSON text."""
    try:
        data = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return scenario_from_dict(data)


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


SHIPPED = ("fountain", "conference", "canteen", "corridor")


def shipped_scenario_path(name: str) -> Path:
    if name not in SHIPPED:
        raise KeyError(f"no shipped scenario named {name!r}; choose from {SHIPPED}")
    return Path(str(resources.files("crowdnav") / "scenarios" / f"{name}.json"))


def shipped_scenario(name: str) -> Scenario:
    return load_scenario_file(shipped_scenario_path(name))
