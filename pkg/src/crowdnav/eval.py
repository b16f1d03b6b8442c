"""Metrics and the experiment protocol: mapping sessions, localization runs, navigation episodes."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .flow_map import CrowdFlowMap, MapperConfig, map_quality
from .geometry import rotate
from .localizer import CrowdLocalizer, LocalizerConfig
from .planner import AvoidState, DStarLite, GridPath, PlannerConfig, cells_cost, follow, plan_astar, smooth_points
from .scenario import Scenario
from .crowd_sim import SimParams, World

LOCALIZERS = ("odometry", "crowd")
PLANNERS = ("astar_shortest", "astar_social", "dstar_crowd")
TRAJ_HEADER = ["t", "true_x", "true_y", "true_th", "odom_x", "odom_y", "odom_th",
               "est_x", "est_y", "est_th", "cmd_vx", "cmd_vy"]


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- metrics
def localization_mse(est_traj, true_traj) -> float:
    """Mean squared position error; rows are (t, x, y, ...), estimate interpolated onto true stamps."""
    est = np.asarray(est_traj, dtype=float)
    tru = np.asarray(true_traj, dtype=float)
    if est.ndim != 2 or tru.ndim != 2 or est.shape[1] < 3 or tru.shape[1] < 3:
        raise ValueError("trajectories must be (n, >=3) arrays of t, x, y")
    inside = (tru[:, 0] >= est[0, 0]) & (tru[:, 0] <= est[-1, 0]) if len(est) else np.zeros(len(tru), bool)
    if inside.sum() < 2 or len(est) < 2:
        raise ValueError("need at least two overlapping samples")
    t = tru[inside, 0]
    ex = np.interp(t, est[:, 0], est[:, 1])
    ey = np.interp(t, est[:, 0], est[:, 2])
    return float(np.mean((ex - tru[inside, 1]) ** 2 + (ey - tru[inside, 2]) ** 2))


def detect_ca_actions(trajectory, t_traj: float = 0.5, a_thres: float = 0.15) -> int:
    """Count collision-avoidance events in a uniformly sampled (t, x, y) trajectory.

    Acceleration magnitudes are averaged over sliding windows of ``t_traj``;
    every maximal run of windows above ``a_thres`` is one event.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[1] < 3:
        raise ValueError("trajectory must be an (n, 3) array of t, x, y")
    if len(traj) < 3:
        return 0
    dts = np.diff(traj[:, 0])
    dt = float(np.median(dts))
    if dt <= 0 or np.max(np.abs(dts - dt)) > 1e-6 * max(1.0, dt):
        raise ValueError("trajectory must be sampled at a fixed time step")
    if dt > t_traj / 2 + 1e-12:
        raise ValueError("sampling step must not exceed t_traj / 2")
    win = int(round(t_traj / dt))
    if traj[-1, 0] - traj[0, 0] < t_traj or len(traj) < win:
        return 0
    pos = traj[:, 1:3]
    vel = np.gradient(pos, dt, axis=0)
    acc = np.gradient(vel, dt, axis=0)
    mag = np.hypot(acc[:, 0], acc[:, 1])
    csum = np.concatenate([[0.0], np.cumsum(mag)])
    means = (csum[win:] - csum[:-win]) / win
    above = means > a_thres
    return int(above[0]) + int(np.count_nonzero(above[1:] & ~above[:-1]))


# -------------------------------------------------------------------- tours
def _free_grid(world: World, resolution: float = 1.0, clearance: float = 0.8) -> tuple[CrowdFlowMap, np.ndarray]:
    sc = world.scenario
    grid = CrowdFlowMap.for_extent(sc.width, sc.height, MapperConfig(resolution=resolution))
    ii, jj = np.meshgrid(np.arange(grid.width), np.arange(grid.height), indexing="ij")
    centers = np.stack([(ii + 0.5) * resolution, (jj + 0.5) * resolution], axis=-1).reshape(-1, 2)
    d, _ = world.obstacle_distance(centers)
    blocked = (d < clearance).reshape(grid.width, grid.height)
    return grid, blocked


def _nearest_free(blocked: np.ndarray, cell: tuple[int, int]) -> tuple[int, int]:
    if not blocked[cell]:
        return cell
    free = np.argwhere(~blocked)
    k = int(np.argmin(np.hypot(free[:, 0] - cell[0], free[:, 1] - cell[1])))
    return (int(free[k, 0]), int(free[k, 1]))


def build_tour(scenario: Scenario, spacing: float = 8.0, margin: float = 3.0) -> np.ndarray:
    """Closed lawnmower loop over the scene, routed around obstacles on a 1 m grid."""
    world = World(scenario, populate=False)
    grid, blocked = _free_grid(world)
    w, h = scenario.width, scenario.height
    rows = list(np.arange(margin, h - margin + 1e-9, spacing))
    if h - margin - rows[-1] > spacing / 2:
        rows.append(h - margin)
    corners = []
    for k, y in enumerate(rows):
        xs = (margin, w - margin) if k % 2 == 0 else (w - margin, margin)
        corners += [(xs[0], y), (xs[1], y)]
    corners.append(corners[0])
    cells = [_nearest_free(blocked, grid.cell_index(min(x, w - 1e-6), min(y, h - 1e-6))) for x, y in corners]
    pts: list[tuple[float, float]] = [grid.cell_center(*cells[0])]
    for a, b in zip(cells, cells[1:]):
        if a == b:
            continue
        path = plan_astar(grid, a, b, social=False, blocked=blocked)
        if path is None:
            raise ConfigError(f"tour leg {a} -> {b} is not connected in scenario {scenario.name!r}")
        pts.extend(map(tuple, path.world_points[1:]))
    return np.array(pts, dtype=float)


class TourDriver:
    """Pure-pursuit along a closed polyline using the true pose (tele-operation stand-in)."""

    def __init__(self, points: np.ndarray, speed: float = 1.0, lookahead: float = 1.5, loop: bool = True):
        self.points = np.asarray(points, dtype=float)
        self.speed = speed
        self.lookahead = lookahead
        self.loop = loop
        self.k = 0

    def command(self, pos: np.ndarray) -> np.ndarray:
        n = len(self.points)
        for _ in range(n):
            if math.dist(self.points[self.k], pos) >= self.lookahead:
                break
            if self.k == n - 1:
                if not self.loop:
                    break
                self.k = 0
            else:
                self.k += 1
        d = self.points[self.k] - pos
        norm = math.hypot(d[0], d[1])
        if norm < 1e-9:
            return np.zeros(2)
        return d / norm * min(self.speed, norm if not self.loop else self.speed)


def _place_robot(world: World, pose) -> None:
    pose = np.asarray(pose, dtype=float)
    world.robot.true_pose = pose.copy()
    world.robot.odom_pose = pose.copy()


def _warm_up(world: World) -> None:
    for _ in range(world.params.window_steps):
        world.step()


# --------------------------------------------------------------- sessions
@dataclass
class MappingResult:
    map: CrowdFlowMap
    quality_series: list[tuple[float, float]]
    final_reference: object = None


def mapping_session(scenario: Scenario, seed: int, tour_policy: str | np.ndarray = "lawnmower",
                    duration_s: float = 600.0, mapper: MapperConfig | None = None,
                    sample_period: float = 10.0, params: SimParams | None = None,
                    fuse_period: float = 1.0) -> MappingResult:
    """Drive a tour with ground-truth pose and fuse sensed crowd flow into a fresh map."""
    mapper = mapper or MapperConfig()
    world = World(scenario, seed, params)
    tour = build_tour(scenario) if isinstance(tour_policy, str) else np.asarray(tour_policy, dtype=float)
    if isinstance(tour_policy, str) and tour_policy != "lawnmower":
        raise ConfigError(f"unknown tour policy {tour_policy!r}")
    heading = math.atan2(tour[1, 1] - tour[0, 1], tour[1, 0] - tour[0, 0]) if len(tour) > 1 else 0.0
    _place_robot(world, (tour[0, 0], tour[0, 1], heading))
    _warm_up(world)
    fmap = CrowdFlowMap.for_extent(scenario.width, scenario.height, mapper)
    driver = TourDriver(tour)
    p = world.params
    n_steps = int(round(duration_s / p.dt))
    sample_every = int(round(sample_period / p.dt))
    fuse_every = max(1, int(round(fuse_period / p.dt)))
    series = []
    reference = world.birdview()
    series.append((0.0, map_quality(fmap, reference) if len(reference) else 0.0))
    for k in range(1, n_steps + 1):
        world.robot.commanded_velocity = driver.command(world.robot.true_pose[:2])
        world.step()
        if k % fuse_every == 0:
            fmap.fuse(world.sense().to_world(world.robot.true_pose))
        if k % sample_every == 0 or k == n_steps:
            fmap.refresh_due(force=True)
            reference = world.birdview()
            t = round(k * p.dt, 9)
            if series and t <= series[-1][0]:
                continue
            series.append((t, map_quality(fmap, reference) if len(reference) else 0.0))
    fmap.refresh_due(force=True)
    return MappingResult(fmap, series, reference)


@dataclass
class LocalizationResult:
    scenario: str
    seed: int
    mse_crowd: float
    mse_odometry: float
    trajectory: np.ndarray  # TRAJ_HEADER columns
    filter_log: np.ndarray  # t, est_x, est_y, est_th, ess, n_obs


def localization_run(scenario: Scenario, seed: int, fmap: CrowdFlowMap, duration_s: float = 300.0,
                     config: LocalizerConfig | None = None, params: SimParams | None = None,
                     tour: np.ndarray | None = None) -> LocalizationResult:
    """Tele-operated tour; the crowd filter and raw odometry are scored against ground truth."""
    config = config or LocalizerConfig()
    world = World(scenario, seed, params)
    tour = build_tour(scenario) if tour is None else tour
    heading = math.atan2(tour[1, 1] - tour[0, 1], tour[1, 0] - tour[0, 0])
    _place_robot(world, (tour[0, 0], tour[0, 1], heading))
    _warm_up(world)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    loc = CrowdLocalizer(fmap, world.robot.odom_pose, rng, config)
    driver = TourDriver(tour)
    p = world.params
    update_steps = max(1, int(round(config.update_period / p.dt)))
    rows, flog = [], []
    t0 = world.t
    est = loc.estimate()
    rows.append(_traj_row(0.0, world, est, np.zeros(2)))
    flog.append([0.0, *est, loc.ess, 0])
    for k in range(1, int(round(duration_s / p.dt)) + 1):
        cmd = driver.command(world.robot.true_pose[:2])
        world.robot.commanded_velocity = cmd
        world.step()
        loc.predict(world.last_odom_delta)
        n_obs = 0
        if k % update_steps == 0:
            obs = world.sense()
            n_obs = len(obs)
            loc.update(obs)
        est = loc.estimate()
        t = round(world.t - t0, 9)
        rows.append(_traj_row(t, world, est, cmd))
        flog.append([t, *est, loc.ess, n_obs])
    traj = np.array(rows)
    true = traj[:, [0, 1, 2]]
    return LocalizationResult(
        scenario.name, seed,
        localization_mse(traj[:, [0, 7, 8]], true),
        localization_mse(traj[:, [0, 4, 5]], true),
        traj, np.array(flog),
    )


def _traj_row(t: float, world: World, est, cmd) -> list[float]:
    rb = world.robot
    return [t, *rb.true_pose, *rb.odom_pose, *est, float(cmd[0]), float(cmd[1])]


# --------------------------------------------------------------- episodes
@dataclass
class EpisodeConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    t_traj: float = 0.5
    a_thres: float = 0.15
    budget_factor: float = 2.0
    goal_radius: float = 1.5  # true-position arrival tolerance
    ground_truth_pose: bool = False  # plan and follow with the true pose


@dataclass
class RunReport:
    scenario: str
    seed: int
    localizer: str
    planner: str
    success: bool
    mse: float
    ca_actions: int
    map_quality_series: list = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)
    failure: str = ""
    duration: float = 0.0
    path_length: float = 0.0

    def row(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "localizer": self.localizer, "planner": self.planner,
            "success": int(self.success), "failure": self.failure, "mse": f"{self.mse:.6f}",
            "ca_actions": self.ca_actions, "duration": f"{self.duration:.1f}", "path_length": f"{self.path_length:.3f}",
        }


REPORT_FIELDS = ["scenario", "seed", "localizer", "planner", "success", "failure", "mse", "ca_actions",
                 "duration", "path_length"]


def normalize_planner(name: str) -> str:
    aliases = {"astar-shortest": "astar_shortest", "astar-social": "astar_social", "dstar": "dstar_crowd",
               "dstar-crowd": "dstar_crowd", "crowdplanner": "dstar_crowd"}
    name = aliases.get(name, name)
    if name not in PLANNERS:
        raise ConfigError(f"unknown planner {name!r}")
    return name


def _hazards(world: World, pose: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pedestrians, nearest obstacle points and obstacle outline samples sensed around the robot,

    expressed in the frame of ``pose``.
    """
    sensed = (world.nearby_pedestrians(radius), world.nearby_obstacle_points(radius),
              world.nearby_obstacle_outline(radius))
    return tuple(rotate(p, pose[2]) + pose[:2] for p in sensed)


OFF_PATH = 1.5  # cells; farther from the executed path than this triggers an A* replan


def _polyline_distance(points: np.ndarray, xy) -> float:
    p = np.asarray(xy, dtype=float)
    if len(points) == 1:
        return float(math.hypot(*(points[0] - p)))
    a, b = points[:-1], points[1:]
    seg = b - a
    ll = np.einsum("ij,ij->i", seg, seg)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.clip(np.where(ll > 0, np.einsum("ij,ij->i", p - a, seg) / ll, 0.0), 0.0, 1.0)
    proj = a + u[:, None] * seg
    return float(np.min(np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])))


class _Navigator:
    """Plans on the flow map and keeps the current path fresh."""

    def __init__(self, kind: str, fmap: CrowdFlowMap, goal_xy, cfg: PlannerConfig):
        self.kind = kind
        self.cfg = cfg
        self.map = fmap.copy() if kind == "dstar_crowd" else fmap
        self.goal_xy = np.asarray(goal_xy, dtype=float)
        self.goal_cell = self._clamp_cell(self.goal_xy)
        self.state: DStarLite | None = None
        self.path: GridPath | None = None
        self.points: np.ndarray | None = None
        self.last_plan_t = -math.inf
        self.last_cell = None
        self.pending: set = set()
        self.replans = 0

    def _clamp_cell(self, xy) -> tuple[int, int]:
        m = self.map
        i = min(max(int(math.floor((xy[0] - m.origin[0]) / m.resolution)), 0), m.width - 1)
        j = min(max(int(math.floor((xy[1] - m.origin[1]) / m.resolution)), 0), m.height - 1)
        return (i, j)

    def _set_path(self, path: GridPath | None, cell) -> None:
        self.path = path
        if path is None or len(path.cells) < 2:
            self.points = self.goal_xy[None, :].copy()
        else:
            pts = path.world_points.copy()
            pts[-1] = self.goal_xy
            self.points = smooth_points(pts, self.cfg.smooth_window)

    def _on_path(self, xy) -> bool:
        """Whether ``xy`` lies within OFF_PATH metres of the executed (smoothed) polyline."""
        if self.path is None or self.points is None:
            return False
        return _polyline_distance(self.points, xy) <= OFF_PATH * self.map.resolution

    def _anchor(self, xy, cell):
        if not self._on_path(xy):
            return cell
        pts = self.path.world_points
        d = np.hypot(pts[:, 0] - xy[0], pts[:, 1] - xy[1])
        return self.path.cells[int(len(d) - 1 - np.argmin(d[::-1]))]

    def _still_optimal(self, path: GridPath | None, cell) -> bool:
        if path is None or self.path is None or cell not in self.path.cells:
            return False
        rest = self.path.cells[self.path.cells.index(cell):]
        return cells_cost(self.state.edge, rest) <= path.total_cost + 1e-9

    def observe(self, obs_world) -> None:
        if self.kind != "dstar_crowd" or len(obs_world) == 0:
            return
        self.pending.update(self.map.fuse(obs_world))

    def update(self, t: float, pose: np.ndarray) -> np.ndarray:
        cell = self._clamp_cell(pose[:2])
        if cell == self.goal_cell:
            self.points = self.goal_xy[None, :].copy()
            self.last_cell = cell
            return self.points
        if self.kind == "dstar_crowd":
            path_cells = set(self.path.cells) if self.path is not None else set()
            due = (t - self.last_plan_t >= self.cfg.replan_period or cell != self.last_cell
                   or bool(self.pending & path_cells))
            if self.state is None:
                self.state = DStarLite(self.map, cell, self.goal_cell, self.cfg.weights, self.cfg.cost_cell)
                self._set_path(self.state.path(), cell)
                self.pending.clear()
                self.last_plan_t = t
                self.replans += 1
            elif due:
                changed = sorted(self.pending)
                self.pending.clear()
                # Near the current path, search from the closest path cell so that a still-optimal
                # path is kept and the executed route does not flip between equal-cost ties.
                anchor = self._anchor(pose[:2], cell)
                path = self.state.replan(changed, anchor)
                if not self._still_optimal(path, anchor):
                    self._set_path(path, anchor)
                self.last_plan_t = t
                self.replans += 1
        else:
            # The map is static for the A* planners, so a path stays optimal while the robot tracks it.
            if self.points is None or (cell != self.last_cell and not self._on_path(pose[:2])):
                social = self.kind == "astar_social"
                self._set_path(plan_astar(self.map, cell, self.goal_cell, self.cfg.weights, social,
                                          self.cfg.cost_cell), cell)
                self.last_plan_t = t
                self.replans += 1
        self.last_cell = cell
        return self.points


def run_episode(scenario: Scenario, seed: int, localizer: str = "odometry", planner: str = "astar_shortest",
                fmap: CrowdFlowMap | None = None, budget_s: float | None = None,
                config: EpisodeConfig | None = None, params: SimParams | None = None,
                record: bool = False):
    """Closed loop sense -> localize -> plan -> follow -> step.  Returns a RunReport

    (and the trajectory log when ``record`` is set).
    """
    wall0 = time.perf_counter()
    cfg = config or EpisodeConfig()
    planner = normalize_planner(planner)
    if localizer not in LOCALIZERS:
        raise ConfigError(f"unknown localizer {localizer!r}")
    needs_map = localizer == "crowd" or planner != "astar_shortest"
    if needs_map and (fmap is None or fmap.is_empty()):
        raise ConfigError(f"localizer={localizer!r} planner={planner!r} needs a crowd-flow map")
    plan_map = fmap if fmap is not None else CrowdFlowMap.for_extent(scenario.width, scenario.height)

    world = World(scenario, seed, params)
    _warm_up(world)
    p = world.params
    start = world.robot.true_pose.copy()
    goal = np.array(scenario.robot_goal, dtype=float)
    if budget_s is None:
        gi, gj = plan_map.cell_index(*goal) or (0, 0)
        si, sj = plan_map.cell_index(*start[:2]) or (0, 0)
        shortest = max(abs(gi - si), abs(gj - sj)) + (math.sqrt(2) - 1) * min(abs(gi - si), abs(gj - sj))
        budget_s = cfg.budget_factor * max(shortest * plan_map.resolution, math.dist(goal, start[:2])) / cfg.planner.v_max

    filt = None
    if localizer == "crowd":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        filt = CrowdLocalizer(fmap, world.robot.odom_pose, rng, cfg.localizer)
    nav = _Navigator(planner, plan_map, goal, cfg.planner)
    update_steps = max(1, int(round(cfg.localizer.update_period / p.dt)))
    sense_radius = cfg.planner.avoid_range + 0.5

    def belief() -> np.ndarray:
        if cfg.ground_truth_pose:
            return world.robot.true_pose.copy()
        return filt.estimate() if filt is not None else world.robot.odom_pose.copy()

    t0 = world.t
    avoid = AvoidState()
    rows = []
    est = belief()
    # Flying start: the robot enters the episode already cruising along its first plan, so
    # getting up to speed is not scored as an avoidance manoeuvre.
    cruise = follow(nav.update(0.0, est), est, config=cfg.planner)
    world.robot.velocity = rotate(rotate(cruise, -est[2]), world.robot.true_pose[2])
    rows.append(_traj_row(0.0, world, est, cruise))
    success, failure = False, "timeout"
    n_steps = int(math.ceil(budget_s / p.dt))
    for k in range(1, n_steps + 1):
        t = round(world.t - t0, 9)
        points = nav.update(t, est)
        peds, obst, outline = _hazards(world, est, sense_radius)
        cmd = follow(points, est, peds, obst, cfg.planner,
                     pedestrian_clearance=world.params.agent_radius + world.robot.radius,
                     obstacle_clearance=world.robot.radius, outline=outline, state=avoid)
        # The command is issued in the believed frame; the robot executes it in its body frame.
        body = rotate(cmd, -est[2])
        world.robot.commanded_velocity = rotate(body, world.robot.true_pose[2])
        world.step()
        sensed = None
        if k % update_steps == 0 or (planner == "dstar_crowd" and k % p.window_steps == 0):
            sensed = world.sense()
        if filt is not None:
            filt.predict(world.last_odom_delta)
            if k % update_steps == 0:
                filt.update(sensed)
        est = belief()
        if planner == "dstar_crowd" and k % p.window_steps == 0:
            nav.observe(sensed.to_world(est))
        rows.append(_traj_row(round(world.t - t0, 9), world, est, cmd))
        if world.min_pedestrian_clearance() < 0 or world.robot_hits_obstacle():
            failure = "collision"
            break
        if math.dist(world.robot.true_pose[:2], goal) < cfg.goal_radius:
            success, failure = True, ""
            break
    traj = np.array(rows)
    xy = traj[:, 1:3]
    report = RunReport(
        scenario=scenario.name, seed=seed, localizer=localizer, planner=planner, success=success,
        mse=localization_mse(traj[:, [0, 7, 8]], traj[:, [0, 1, 2]]) if len(traj) >= 2 else 0.0,
        ca_actions=detect_ca_actions(traj[:, [0, 1, 2]], cfg.t_traj, cfg.a_thres),
        wall_time=time.perf_counter() - wall0, failure=failure, duration=float(traj[-1, 0]),
        path_length=float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0,
    )
    if record:
        return report, traj
    return report


# ------------------------------------------------------------------ batches
def _episode_job(args):
    scenario, seed, localizer, planner, map_bytes, budget_s, cfg, params = args
    from .flow_map import load_map
    fmap = load_map(map_bytes) if map_bytes is not None else None
    return run_episode(scenario, seed, localizer, planner, fmap, budget_s, cfg, params)


def max_workers() -> int:
    env = os.environ.get("CROWDNAV_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError as exc:
            raise ConfigError("CROWDNAV_THREADS must be an integer") from exc
    return cap


def run_batch(scenario: Scenario, seeds, localizer: str, planner: str, fmap: CrowdFlowMap | None = None,
              budget_s: float | None = None, config: EpisodeConfig | None = None,
              params: SimParams | None = None, workers: int | None = None) -> list[RunReport]:
    seeds = sorted(int(s) for s in seeds)
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(seeds) <= 1:
        reports = [run_episode(scenario, s, localizer, planner, fmap, budget_s, config, params) for s in seeds]
    else:
        from .flow_map import save_map
        blob = save_map(fmap) if fmap is not None else None
        jobs = [(scenario, s, localizer, planner, blob, budget_s, config, params) for s in seeds]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_episode_job, jobs))
    return sorted(reports, key=lambda r: r.seed)


def summarize(reports: list[RunReport]) -> dict:
    if not reports:
        raise ValueError("no reports to summarize")
    ca = np.array([r.ca_actions for r in reports], dtype=float)
    first = reports[0]
    return {
        "scenario": first.scenario,
        "config": {"localizer": first.localizer, "planner": first.planner},
        "runs": len(reports),
        "success_rate": float(np.mean([r.success for r in reports])),
        "ca_mean": float(ca.mean()),
        "ca_std": float(ca.std()),
        "mse_mean": float(np.mean([r.mse for r in reports])),
    }


def reports_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in sorted(reports, key=lambda r: (r.scenario, r.localizer, r.planner, r.seed)):
        writer.writerow(r.row())
    return buf.getvalue()


def read_reports_csv(text: str) -> list[RunReport]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(RunReport(row["scenario"], int(row["seed"]), row["localizer"], row["planner"],
                             bool(int(row["success"])), float(row["mse"]), int(row["ca_actions"]),
                             failure=row.get("failure", ""), duration=float(row.get("duration", 0.0)),
                             path_length=float(row.get("path_length", 0.0))))
    return out


_PLANNER_LABEL = {"astar_shortest": "A* (shortest)", "astar_social": "A* (social)", "dstar_crowd": "CrowdPlanner"}
_LOCALIZER_LABEL = {"odometry": "Odometry", "crowd": "CrowdLocalizer"}


def table2(summaries: list[dict]) -> str:
    """Markdown table: one row per (localizer, planner), success rate and #CA mean (std) per scenario."""
    scenarios = sorted({s["scenario"] for s in summaries})
    configs = sorted({(s["config"]["localizer"], s["config"]["planner"]) for s in summaries},
                     key=lambda c: (LOCALIZERS.index(c[0]), PLANNERS.index(c[1])))
    head = "| Localizer | Planner | " + " | ".join(f"{s} success | {s} #CA" for s in scenarios) + " |"
    sep = "|" + "---|" * (2 + 2 * len(scenarios))
    lines = [head, sep]
    idx = {(s["scenario"], s["config"]["localizer"], s["config"]["planner"]): s for s in summaries}
    for loc, pl in configs:
        cells = []
        for sc in scenarios:
            s = idx.get((sc, loc, pl))
            if s is None:
                cells += ["-", "-"]
            else:
                cells += [f"{100 * s['success_rate']:.0f}%", f"{s['ca_mean']:.2f} ({s['ca_std']:.2f})"]
        lines.append(f"| {_LOCALIZER_LABEL[loc]} | {_PLANNER_LABEL[pl]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def trajectory_csv(traj: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_HEADER)
    for row in traj:
        w.writerow([f"{v:.6f}" for v in row])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def report_dict(r: RunReport) -> dict:
    d = asdict(r)
    d.pop("wall_time")
    return d
