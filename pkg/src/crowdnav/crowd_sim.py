"""Deterministic 2D crowd simulator.

Pedestrians follow waypoint lanes under a social-force model; the robot is a
holonomic disc with a heading that turns toward its direction of travel.
All randomness comes from a ``numpy.random.SeedSequence`` so that a world is
reproducible bit-for-bit from ``(scenario, seed)`` and the command sequence.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (compose, relative, rotate, segments_hit_circle, segments_hit_rect,
                       wrap_angle)
from .scenario import Circle, Rect, Scenario


@dataclass
class SimParams:
    dt: float = 0.1
    window_steps: int = 10  # observation window = window_steps * dt = 1 s
    goal_gain: float = 2.0  # 1/s
    repulsion_a: float = 2.0  # m/s^2
    repulsion_b: float = 0.3  # m
    interaction_cutoff: float = 3.0
    speed_min: float = 0.8
    speed_max: float = 1.4
    agent_radius: float = 0.25
    respawn_jitter: float = 0.5
    waypoint_tolerance: float = 1.0
    robot_radius: float = 0.2
    robot_personal_space: float = 0.4  # extra radius pedestrians keep from the robot
    perception_range: float = 5.0
    robot_turn_rate: float = 2.0  # rad/s
    robot_max_accel: float = 2.0  # m/s^2
    odom_trans_coef: float = 0.05
    odom_rot_coef: float = 0.05
    odom_rot_trans_coef: float = 0.002
    max_observed_speed: float = 3.0
    contact_passes: int = 4


@dataclass
class AgentState:
    id: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    preferred_speed: float
    radius: float
    lane_index: int
    waypoint_index: int


@dataclass
class RobotState:
    true_pose: np.ndarray
    odom_pose: np.ndarray
    commanded_velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.2
    perception_range: float = 5.0


@dataclass(frozen=True)
class MovementObservation:
    start: tuple[float, float]
    length: float
    direction: float
    pedestrian_id: int
    t: float
    frame: str = "world"


@dataclass
class Observations:
    """Array-backed batch of movement observations sharing one frame and stamp."""

    starts: np.ndarray
    lengths: np.ndarray
    directions: np.ndarray
    ids: np.ndarray
    t: float
    frame: str = "world"
    window: float = 1.0

    @classmethod
    def empty(cls, t: float = 0.0, frame: str = "world", window: float = 1.0) -> Observations:
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), t, frame, window)

    @classmethod
    def from_list(cls, obs: list[MovementObservation], window: float = 1.0) -> Observations:
        if not obs:
            return cls.empty(window=window)
        return cls(
            np.array([o.start for o in obs], dtype=float).reshape(-1, 2),
            np.array([o.length for o in obs], dtype=float),
            np.array([o.direction for o in obs], dtype=float),
            np.array([o.pedestrian_id for o in obs], dtype=np.int64),
            float(obs[0].t), obs[0].frame, window,
        )

    def __len__(self) -> int:
        return len(self.lengths)

    def __iter__(self) -> Iterator[MovementObservation]:
        for k in range(len(self)):
            yield MovementObservation(
                (float(self.starts[k, 0]), float(self.starts[k, 1])), float(self.lengths[k]),
                float(self.directions[k]), int(self.ids[k]), self.t, self.frame,
            )

    def velocities(self) -> np.ndarray:
        dirs = np.stack([np.cos(self.directions), np.sin(self.directions)], axis=-1)
        return dirs * (self.lengths / self.window)[:, None]

    def to_world(self, pose) -> Observations:
        """Express robot-frame observations in the world frame given a robot pose."""
        pose = np.asarray(pose, dtype=float)
        c, s = math.cos(pose[2]), math.sin(pose[2])
        x, y = self.starts[:, 0], self.starts[:, 1]
        starts = np.stack([pose[0] + c * x - s * y, pose[1] + s * x + c * y], axis=-1)
        return Observations(starts, self.lengths.copy(), wrap_angle(self.directions + pose[2]),
                            self.ids.copy(), self.t, "world", self.window)

    def subset(self, mask: np.ndarray) -> Observations:
        return Observations(self.starts[mask], self.lengths[mask], self.directions[mask], self.ids[mask],
                            self.t, self.frame, self.window)


class _Routes:
    """Flattened waypoint tables for every (lane, travel direction) pair."""

    def __init__(self, scenario: Scenario):
        pts, nrm, offs, lens, lanes, closed = [], [], [], [], [], []
        base = 0
        for li, lane in enumerate(scenario.lanes):
            fwd = np.array(lane.waypoints, dtype=float)
            variants = [fwd, fwd[::-1].copy()] if lane.bidirectional else [fwd]
            for w in variants:
                seg = np.diff(w, axis=0)
                seg_len = np.hypot(seg[:, 0], seg[:, 1])
                seg_dir = seg / np.where(seg_len > 0, seg_len, 1.0)[:, None]
                n = np.stack([-seg_dir[:, 1], seg_dir[:, 0]], axis=-1)
                n = np.vstack([n[:1], n])  # normal of the segment arriving at each waypoint
                pts.append(w)
                nrm.append(n)
                offs.append(base)
                lens.append(len(w))
                lanes.append(li)
                closed.append(bool(np.allclose(w[0], w[-1])))
                base += len(w)
        self.points = np.vstack(pts) if pts else np.zeros((0, 2))
        self.normals = np.vstack(nrm) if nrm else np.zeros((0, 2))
        self.offset = np.array(offs, dtype=np.int64)
        self.count = np.array(lens, dtype=np.int64)
        self.lane = np.array(lanes, dtype=np.int64)
        self.closed = np.array(closed, dtype=bool)

    def __len__(self) -> int:
        return len(self.offset)

    def waypoints(self, r: int) -> np.ndarray:
        return self.points[self.offset[r]:self.offset[r] + self.count[r]]


class World:
    """Mutable simulation state; advance with :meth:`step`."""

    def __init__(self, scenario: Scenario, seed: int | None = None, params: SimParams | None = None,
                 populate: bool = True):
        self.scenario = scenario
        self.params = params or SimParams()
        self.seed = scenario.seed if seed is None else int(seed)
        ss = np.random.SeedSequence(self.seed)
        crowd_ss, odom_ss = ss.spawn(2)
        self.rng = np.random.default_rng(crowd_ss)
        self.odom_rng = np.random.default_rng(odom_ss)
        p = self.params
        self.t = 0.0
        self.steps = 0
        self._routes = _Routes(scenario)
        self._rects = np.array([o.as_tuple() for o in scenario.obstacles if isinstance(o, Rect)],
                               dtype=float).reshape(-1, 4)
        self._circles = np.array([(o.cx, o.cy, o.r) for o in scenario.obstacles if isinstance(o, Circle)],
                                 dtype=float).reshape(-1, 3)
        self._outline = np.zeros((0, 2))
        self._outline_spacing = None
        start = np.array(scenario.robot_start, dtype=float)
        start[2] = wrap_angle(start[2])
        self.robot = RobotState(start.copy(), start.copy(), radius=p.robot_radius,
                                perception_range=p.perception_range)
        self.last_true_delta = np.zeros(3)
        self.last_odom_delta = np.zeros(3)
        self.robot_active = True
        self._next_id = 0
        n = scenario.n_agents if populate else 0
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.pref = np.zeros(0)
        self.radius = np.zeros(0)
        self.route = np.zeros(0, dtype=np.int64)
        self.wp = np.zeros(0, dtype=np.int64)
        self.offset = np.zeros(0)
        self.ids = np.zeros(0, dtype=np.int64)
        self.age = np.zeros(0, dtype=np.int64)
        if n > 0 and len(self._routes):
            self._populate(n)
        self._history = np.repeat(self.pos[None], p.window_steps + 1, axis=0)

    # ------------------------------------------------------------------ setup
    def _route_shares(self, n: int) -> np.ndarray:
        # Little's law: population on a route ~ rate * traversal time.
        sc = self.scenario
        weights = []
        for r in range(len(self._routes)):
            lane = sc.lanes[self._routes.lane[r]]
            split = 0.5 if lane.bidirectional else 1.0
            weights.append(lane.rate * lane.length * split)
        w = np.array(weights, dtype=float)
        if w.sum() <= 0:
            return np.zeros(len(w), dtype=np.int64)
        raw = n * w / w.sum()
        counts = np.floor(raw).astype(np.int64)
        rest = n - counts.sum()
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rest]] += 1
        return counts

    def _populate(self, n: int) -> None:
        p = self.params
        counts = self._route_shares(n)
        pos, vel, pref, route, wp, off = [], [], [], [], [], []
        for r, cnt in enumerate(counts):
            w = self._routes.waypoints(r)
            seg = np.diff(w, axis=0)
            seg_len = np.hypot(seg[:, 0], seg[:, 1])
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            for _ in range(cnt):
                for _attempt in range(30):
                    s = self.rng.uniform(0.0, cum[-1])
                    k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1))
                    u = (s - cum[k]) / seg_len[k] if seg_len[k] > 0 else 0.0
                    d = seg[k] / seg_len[k]
                    o = self.rng.uniform(-p.respawn_jitter, p.respawn_jitter)
                    xy = w[k] + u * seg[k] + o * np.array([-d[1], d[0]])
                    xy = self._clamp_point(xy, p.agent_radius)
                    if self._free(xy, pos, 2 * p.agent_radius):
                        break
                v0 = self.rng.uniform(p.speed_min, p.speed_max)
                pos.append(xy)
                vel.append(v0 * d)
                pref.append(v0)
                route.append(r)
                wp.append(k + 1)
                off.append(o)
        self.pos = np.array(pos, dtype=float).reshape(-1, 2)
        self.vel = np.array(vel, dtype=float).reshape(-1, 2)
        self.pref = np.array(pref, dtype=float)
        self.radius = np.full(len(pos), p.agent_radius)
        self.route = np.array(route, dtype=np.int64)
        self.wp = np.array(wp, dtype=np.int64)
        self.offset = np.array(off, dtype=float)
        self.ids = np.arange(len(pos), dtype=np.int64)
        self._next_id = len(pos)
        self.age = np.zeros(len(pos), dtype=np.int64)

    def _free(self, xy: np.ndarray, others: list, min_dist: float) -> bool:
        if self._inside_obstacle(xy[None], self.params.agent_radius)[0]:
            return False
        if not others:
            return True
        arr = np.asarray(others)
        return bool(np.min(np.hypot(*(arr - xy).T)) >= min_dist)

    def add_agent(self, position, velocity, preferred_speed: float, route: int = 0, waypoint: int = 1,
                  offset: float = 0.0, radius: float | None = None) -> int:
        """Insert a pedestrian by hand (used by tests and custom setups)."""
        aid = self._next_id
        self._next_id += 1
        self.pos = np.vstack([self.pos, np.asarray(position, dtype=float)[None]])
        self.vel = np.vstack([self.vel, np.asarray(velocity, dtype=float)[None]])
        self.pref = np.append(self.pref, float(preferred_speed))
        self.radius = np.append(self.radius, self.params.agent_radius if radius is None else radius)
        self.route = np.append(self.route, route)
        self.wp = np.append(self.wp, waypoint)
        self.offset = np.append(self.offset, offset)
        self.ids = np.append(self.ids, aid)
        self.age = np.append(self.age, 0)
        hist = np.repeat(self.pos[-1:][None], self._history.shape[0], axis=0)
        self._history = np.concatenate([self._history, hist], axis=1)
        return aid

    # ------------------------------------------------------------ accessors
    @property
    def n_agents(self) -> int:
        return len(self.pos)

    def agents(self) -> list[AgentState]:
        return [
            AgentState(int(self.ids[k]), (float(self.pos[k, 0]), float(self.pos[k, 1])),
                       (float(self.vel[k, 0]), float(self.vel[k, 1])), float(self.pref[k]),
                       float(self.radius[k]), int(self._routes.lane[self.route[k]]) if len(self._routes) else 0,
                       int(self.wp[k]))
            for k in range(self.n_agents)
        ]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.pos, self.vel, self.pref, self.wp, self.ids, self.robot.true_pose,
                    self.robot.odom_pose, self.robot.velocity):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.steps).encode())
        return h.hexdigest()

    # --------------------------------------------------------- obstacles
    def _clamp_point(self, xy: np.ndarray, margin: float) -> np.ndarray:
        sc = self.scenario
        return np.array([min(max(xy[0], margin), sc.width - margin), min(max(xy[1], margin), sc.height - margin)])

    def obstacle_distance(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance to the nearest obstacle surface and the outward normal there."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        n = len(pts)
        best = np.full(n, np.inf)
        normal = np.zeros((n, 2))
        rows = np.arange(n)
        px, py = pts[:, 0:1], pts[:, 1:2]
        if len(self._rects):
            x0, y0, x1, y1 = (self._rects[:, k] for k in range(4))
            dx = np.clip(px, x0, x1) - px
            dy = np.clip(py, y0, y1) - py
            d = np.hypot(dx, dy)
            gaps = np.stack([px - x0, x1 - px, py - y0, y1 - py], axis=-1)  # (n, R, 4)
            face = np.argmin(gaps, axis=-1)
            inside = d == 0.0
            d = np.where(inside, -np.take_along_axis(gaps, face[..., None], -1)[..., 0], d)
            k = np.argmin(d, axis=1)
            dk = d[rows, k]
            faces = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
            out = np.stack([-dx[rows, k], -dy[rows, k]], axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out = out / np.where(dk > 0, dk, 1.0)[:, None]
            best = dk
            normal = np.where(inside[rows, k][:, None], faces[face[rows, k]], out)
        if len(self._circles):
            cx, cy, r = (self._circles[:, k] for k in range(3))
            ddx, ddy = px - cx, py - cy
            dc = np.hypot(ddx, ddy)
            d = dc - r
            k = np.argmin(d, axis=1)
            dk = d[rows, k]
            safe = np.where(dc[rows, k] > 0, dc[rows, k], 1.0)
            nk = np.stack([ddx[rows, k] / safe, ddy[rows, k] / safe], axis=-1)
            nk[dc[rows, k] == 0] = (1.0, 0.0)
            better = dk < best
            best = np.where(better, dk, best)
            normal = np.where(better[:, None], nk, normal)
        return best, normal

    def _inside_obstacle(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        d, _ = self.obstacle_distance(pts)
        return d < margin

    def robot_hits_obstacle(self) -> bool:
        d, _ = self.obstacle_distance(self.robot.true_pose[None, :2])
        return bool(d[0] < self.robot.radius)

    def visible(self, origin: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """True where the straight segment origin -> target is not blocked by an obstacle."""
        targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        a = np.repeat(np.asarray(origin, dtype=float)[None, :2], len(targets), axis=0)
        blocked = np.zeros(len(targets), dtype=bool)
        for rect in self._rects:
            blocked |= segments_hit_rect(a, targets, rect)
        for cx, cy, r in self._circles:
            blocked |= segments_hit_circle(a, targets, (cx, cy), r)
        return ~blocked

    # ------------------------------------------------------------- dynamics
    def _targets(self) -> np.ndarray:
        idx = self._routes.offset[self.route] + self.wp
        return self._routes.points[idx] + self.offset[:, None] * self._routes.normals[idx]

    def _forces(self) -> np.ndarray:
        p = self.params
        n = self.n_agents
        tgt = self._targets()
        g = tgt - self.pos
        gd = np.hypot(g[:, 0], g[:, 1])
        ghat = g / np.where(gd > 1e-9, gd, 1.0)[:, None]
        acc = p.goal_gain * (self.pref[:, None] * ghat - self.vel)

        if n > 1:
            pairs = cKDTree(self.pos).query_pairs(p.interaction_cutoff, output_type="ndarray")
            if len(pairs):
                a, b = pairs[:, 0], pairs[:, 1]
                diff = self.pos[a] - self.pos[b]
                d = np.hypot(diff[:, 0], diff[:, 1])
                mag = p.repulsion_a * np.exp((self.radius[a] + self.radius[b] - d) / p.repulsion_b)
                f = diff * (mag / np.maximum(d, 1e-9))[:, None]
                for axis in (0, 1):
                    acc[:, axis] += np.bincount(a, f[:, axis], minlength=n) - np.bincount(b, f[:, axis], minlength=n)

        if self.robot_active:
            diff = self.pos - self.robot.true_pose[:2]
            d = np.hypot(diff[:, 0], diff[:, 1])
            rr = self.radius + self.robot.radius + p.robot_personal_space
            near = d < p.interaction_cutoff + p.robot_personal_space
            mag = np.where(near, p.repulsion_a * np.exp((rr - d) / p.repulsion_b), 0.0)
            unit = np.divide(diff, d[:, None], out=np.zeros_like(diff), where=d[:, None] > 0)
            acc += mag[:, None] * unit

        if len(self._rects) or len(self._circles):
            d, nrm = self.obstacle_distance(self.pos)
            near = d < p.interaction_cutoff
            mag = np.where(near, p.repulsion_a * np.exp(np.minimum(self.radius - d, 5.0) / p.repulsion_b), 0.0)
            acc += mag[:, None] * nrm
        return acc

    def _advance_waypoints(self) -> None:
        p = self.params
        tgt = self._targets()
        idx = self._routes.offset[self.route] + self.wp
        prev_idx = idx - 1
        seg = self._routes.points[idx] - self._routes.points[prev_idx]
        rel = self.pos - tgt
        dist = np.hypot(rel[:, 0], rel[:, 1])
        passed = np.einsum("ij,ij->i", rel, seg) > 0.0
        reached = (dist < p.waypoint_tolerance) | passed
        if not reached.any():
            return
        self.wp = np.where(reached, self.wp + 1, self.wp)
        done = self.wp >= self._routes.count[self.route]
        closed = self._routes.closed[self.route]
        self.wp = np.where(done & closed, 1, self.wp)
        for k in np.nonzero(done & ~closed)[0]:
            self._respawn(int(k))

    def _respawn(self, k: int) -> None:
        p = self.params
        w = self._routes.waypoints(int(self.route[k]))
        seg = w[1] - w[0]
        d = seg / np.hypot(*seg)
        nrm = np.array([-d[1], d[0]])
        # Occupants to keep clear of, with the centre distance each one needs.
        others = np.delete(self.pos, k, axis=0)
        need = np.delete(self.radius, k) + self.radius[k]
        if self.robot_active:
            others = np.vstack([others, self.robot.true_pose[:2]])
            need = np.append(need, self.radius[k] + self.robot.radius + p.robot_personal_space)
        best, best_gap = None, -math.inf
        for attempt in range(12):
            o = self.rng.uniform(-p.respawn_jitter, p.respawn_jitter)
            # Search farther down the lane when the entrance is congested.
            along = self.rng.uniform(0.0, p.respawn_jitter * (1 + attempt // 4))
            cand = self._clamp_point(w[0] + along * d + o * nrm, self.radius[k])
            gap = np.min(np.hypot(*(others - cand).T) - need) if len(others) else math.inf
            if gap > best_gap:
                best, best_gap, best_o = cand, gap, o
            if gap >= 0.0:
                break
        xy, o = best, best_o
        self.pos[k] = xy
        self.pref[k] = self.rng.uniform(p.speed_min, p.speed_max)
        self.vel[k] = self.pref[k] * d
        self.offset[k] = o
        self.wp[k] = 1
        self.ids[k] = self._next_id
        self._next_id += 1
        self.age[k] = 0
        self._history[:, k] = xy

    def _resolve_contacts(self) -> None:
        p = self.params
        sc = self.scenario
        n = self.n_agents
        # A few Jacobi passes: one pass can leave overlaps where several agents pile up.
        for _ in range(p.contact_passes if n > 1 else 0):
            reach = 0.6 * 2.0 * float(self.radius.max())
            pairs = cKDTree(self.pos).query_pairs(reach, output_type="ndarray")
            if not len(pairs):
                break
            a, b = pairs[:, 0], pairs[:, 1]
            diff = self.pos[a] - self.pos[b]
            d = np.hypot(diff[:, 0], diff[:, 1])
            deficit = np.clip(0.6 * (self.radius[a] + self.radius[b]) - d, 0.0, None)
            push = 0.5 * diff * (deficit / np.maximum(d, 1e-9))[:, None]
            shift = np.zeros_like(self.pos)
            for axis in (0, 1):
                shift[:, axis] = np.bincount(a, push[:, axis], minlength=n) - np.bincount(b, push[:, axis], minlength=n)
            self.pos = self.pos + shift
        if len(self._rects) or len(self._circles):
            d, nrm = self.obstacle_distance(self.pos)
            pen = np.clip(self.radius - d, 0.0, None)
            if pen.any():
                self.pos = self.pos + pen[:, None] * nrm
                inward = np.einsum("ij,ij->i", self.vel, nrm)
                self.vel = self.vel - np.where(pen > 0, np.minimum(inward, 0.0), 0.0)[:, None] * nrm
        r = self.radius
        self.pos[:, 0] = np.clip(self.pos[:, 0], r, sc.width - r)
        self.pos[:, 1] = np.clip(self.pos[:, 1], r, sc.height - r)

    def _step_robot(self, dt: float) -> None:
        p = self.params
        rb = self.robot
        prev = rb.true_pose.copy()
        dv = rb.commanded_velocity - rb.velocity
        dv_norm = math.hypot(dv[0], dv[1])
        max_dv = p.robot_max_accel * dt
        if dv_norm > max_dv:
            dv = dv * (max_dv / dv_norm)
        rb.velocity = rb.velocity + dv
        x = prev[0] + rb.velocity[0] * dt
        y = prev[1] + rb.velocity[1] * dt
        th = prev[2]
        speed = math.hypot(rb.velocity[0], rb.velocity[1])
        if speed > 0.05:
            want = math.atan2(rb.velocity[1], rb.velocity[0])
            turn = float(wrap_angle(want - th))
            lim = p.robot_turn_rate * dt
            th = float(wrap_angle(th + max(-lim, min(lim, turn))))
        rb.true_pose = np.array([x, y, th])
        delta = relative(prev, rb.true_pose)
        self.last_true_delta = delta
        trans = math.hypot(delta[0], delta[1])
        rot = abs(delta[2])
        noise = self.odom_rng.standard_normal(3)
        sd = np.array([p.odom_trans_coef * trans, p.odom_trans_coef * trans,
                       p.odom_rot_coef * rot + p.odom_rot_trans_coef * trans])
        noisy = delta + sd * noise
        self.last_odom_delta = noisy
        rb.odom_pose = compose(rb.odom_pose, noisy)

    def step(self, dt: float | None = None) -> World:
        dt = self.params.dt if dt is None else float(dt)
        if not 0.0 < dt <= 0.2:
            raise ValueError(f"dt must lie in (0, 0.2], got {dt}")
        p = self.params
        if self.n_agents:
            acc = self._forces()
            vel = self.vel + acc * dt
            sp = np.hypot(vel[:, 0], vel[:, 1])
            cap = 2.0 * self.pref
            vel = np.where((sp > cap)[:, None], vel * (cap / np.maximum(sp, 1e-12))[:, None], vel)
            self.vel = vel
            self.pos = self.pos + vel * dt
            self._resolve_contacts()
            self._advance_waypoints()
            self.age += 1
        self._step_robot(dt)
        self._history = np.roll(self._history, -1, axis=0)
        self._history[-1] = self.pos
        self.steps += 1
        self.t = self.steps * p.dt if dt == p.dt else self.t + dt
        return self

    # -------------------------------------------------------------- sensing
    def _window_observations(self) -> tuple[np.ndarray, Observations]:
        p = self.params
        if self.steps < p.window_steps:
            raise ValueError("world has less than one observation window of history")
        old = self._history[0]
        new = self._history[-1]
        disp = new - old
        length = np.hypot(disp[:, 0], disp[:, 1])
        window = p.window_steps * p.dt
        ok = (self.age >= p.window_steps) & (length / window <= p.max_observed_speed)
        obs = Observations(old.copy(), length, np.arctan2(disp[:, 1], disp[:, 0]), self.ids.copy(),
                           self.t, "world", window)
        return ok, obs

    def birdview(self) -> Observations:
        ok, obs = self._window_observations()
        return obs.subset(ok)

    def sense(self) -> Observations:
        """Pedestrians in range and in line of sight, expressed in the robot body frame."""
        ok, obs = self._window_observations()
        rb = self.robot
        rel = self.pos - rb.true_pose[:2]
        dist = np.hypot(rel[:, 0], rel[:, 1])
        ok &= dist <= rb.perception_range
        if ok.any() and (len(self._rects) or len(self._circles)):
            idx = np.nonzero(ok)[0]
            ok[idx] &= self.visible(rb.true_pose[:2], self.pos[idx])
        obs = obs.subset(ok)
        th = rb.true_pose[2]
        c, s = math.cos(-th), math.sin(-th)
        d = obs.starts - rb.true_pose[:2]
        local = np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=-1)
        return Observations(local, obs.lengths, wrap_angle(obs.directions - th), obs.ids, obs.t, "robot",
                            obs.window)

    def nearby_pedestrians(self, radius: float) -> np.ndarray:
        """Robot-frame positions of visible pedestrians within ``radius`` (current time)."""
        rb = self.robot
        rel = self.pos - rb.true_pose[:2]
        dist = np.hypot(rel[:, 0], rel[:, 1]) if self.n_agents else np.zeros(0)
        ok = dist <= radius
        if ok.any() and (len(self._rects) or len(self._circles)):
            idx = np.nonzero(ok)[0]
            ok[idx] &= self.visible(rb.true_pose[:2], self.pos[idx])
        return rotate(rel[ok], -rb.true_pose[2]).reshape(-1, 2)

    def nearby_obstacle_points(self, radius: float) -> np.ndarray:
        """Robot-frame nearest surface point of every obstacle within ``radius`` of the robot."""
        rb = self.robot
        xy = rb.true_pose[:2]
        pts = []
        for x0, y0, x1, y1 in self._rects:
            c = np.array([min(max(xy[0], x0), x1), min(max(xy[1], y0), y1)])
            if math.hypot(*(c - xy)) <= radius:
                pts.append(c)
        for cx, cy, r in self._circles:
            v = xy - np.array([cx, cy])
            d = math.hypot(v[0], v[1])
            if d - r <= radius:
                pts.append(np.array([cx, cy]) + (v / d * r if d > 0 else np.array([r, 0.0])))
        if not pts:
            return np.zeros((0, 2))
        return rotate(np.array(pts) - xy, -rb.true_pose[2]).reshape(-1, 2)

    def nearby_obstacle_outline(self, radius: float, spacing: float = 0.2) -> np.ndarray:
        """Robot-frame samples of obstacle outlines within ``radius``, like a short-range scan."""
        if self._outline_spacing != spacing:
            self._outline = _outline_samples(self._rects, self._circles, spacing)
            self._outline_spacing = spacing
        rb = self.robot
        p = self._outline - rb.true_pose[:2]
        p = p[np.hypot(p[:, 0], p[:, 1]) <= radius]
        return rotate(p, -rb.true_pose[2]).reshape(-1, 2)

    def min_pedestrian_clearance(self) -> float:
        """Smallest robot-pedestrian centre distance minus the summed radii."""
        if not self.n_agents:
            return math.inf
        rel = self.pos - self.robot.true_pose[:2]
        return float(np.min(np.hypot(rel[:, 0], rel[:, 1]) - self.radius - self.robot.radius))


def step_world(world: World, dt: float = 0.1) -> World:
    return world.step(dt)


def sense_pedestrians(world: World) -> list[MovementObservation]:
    return list(world.sense())


def birdview_observations(world: World) -> list[MovementObservation]:
    return list(world.birdview())


def read_odometry(world: World) -> tuple[float, float, float]:
    """Noisy body-frame increment of the most recent step."""
    if world.steps == 0:
        raise ValueError("no step taken yet")
    d = world.last_odom_delta
    return (float(d[0]), float(d[1]), float(d[2]))


def _outline_samples(rects, circles, spacing: float) -> np.ndarray:
    pts = [np.zeros((0, 2))]
    for x0, y0, x1, y1 in rects:
        corners = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)])
        for a, b in zip(corners, corners[1:]):
            n = max(1, int(math.ceil(math.dist(a, b) / spacing)))
            pts.append(a + np.linspace(0.0, 1.0, n, endpoint=False)[:, None] * (b - a))
    for cx, cy, r in circles:
        n = max(8, int(math.ceil(2 * math.pi * r / spacing)))
        ang = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        pts.append(np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)]))
    return np.concatenate(pts)
