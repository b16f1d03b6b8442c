"""Particle-filter localization against a crowd-flow map.

Each particle is scored by how well the pedestrian movement directions seen
from that pose agree with the flow directions stored in the map cells the
observations fall into.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow_map import CrowdFlowMap, FlowCell, min_angle_to_bins
from .geometry import angdiff, wrap_angle
from .crowd_sim import Observations


@dataclass
class MatchParams:
    gamma: float = 0.5
    weight_floor: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.weight_floor <= 0:
            raise ValueError("weight_floor must be positive")


@dataclass
class MotionNoise:
    trans_coef: float = 0.05
    rot_coef: float = 0.05
    rot_trans_coef: float = 0.002
    inflation: float = 1.5


@dataclass
class LocalizerConfig:
    n_particles: int = 500
    match: MatchParams = field(default_factory=MatchParams)
    noise: MotionNoise = field(default_factory=MotionNoise)
    ess_threshold: float = 0.5
    init_std_xy: float = 1.0
    init_std_th: float = 0.2
    update_period: float = 1.0  # seconds between measurement updates


@dataclass
class ParticleSet:
    poses: np.ndarray  # (n, 3)
    weights: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.weights)

    def copy(self) -> ParticleSet:
        return ParticleSet(self.poses.copy(), self.weights.copy())

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def match_score(theta_m, n, gamma: float):
    """Discounted match score from the minimal angular gap and the cell's direction count."""
    qhat = (math.pi - np.asarray(theta_m, dtype=float)) / math.pi
    n = np.asarray(n)
    return np.where(n > 0, qhat / (1.0 + (np.maximum(n, 1) - 1) * gamma), 0.0)


def flow_match_score(observed_direction: float, cell: FlowCell, gamma: float = 0.5) -> float:
    if not cell.components:
        return 0.0
    theta_m = min(abs(float(angdiff(observed_direction, c.angle))) for c in cell.components)
    n = len(cell.components)
    return float((math.pi - theta_m) / math.pi / (1.0 + (n - 1) * gamma))


def init_particles(pose, n: int, rng: np.random.Generator, std_xy: float = 1.0, std_th: float = 0.2) -> ParticleSet:
    pose = np.asarray(pose, dtype=float)
    noise = rng.standard_normal((n, 3)) * np.array([std_xy, std_xy, std_th])
    poses = pose[None, :] + noise
    poses[:, 2] = wrap_angle(poses[:, 2])
    return ParticleSet(poses, np.full(n, 1.0 / n))


def predict(particles: ParticleSet, odom_delta, noise: MotionNoise | None, rng: np.random.Generator | None = None
            ) -> ParticleSet:
    """Move every particle by the body-frame increment plus scaled Gaussian noise."""
    d = np.asarray(odom_delta, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("odometry increment must be finite")
    n = len(particles)
    delta = np.broadcast_to(d, (n, 3)).copy()
    if noise is not None and rng is not None:
        trans = math.hypot(d[0], d[1])
        rot = abs(d[2])
        k = noise.inflation
        sd = k * np.array([noise.trans_coef * trans, noise.trans_coef * trans,
                           noise.rot_coef * rot + noise.rot_trans_coef * trans])
        if sd.any():
            delta += rng.standard_normal((n, 3)) * sd
    p = particles.poses
    c, s = np.cos(p[:, 2]), np.sin(p[:, 2])
    out = np.empty_like(p)
    out[:, 0] = p[:, 0] + c * delta[:, 0] - s * delta[:, 1]
    out[:, 1] = p[:, 1] + s * delta[:, 0] + c * delta[:, 1]
    out[:, 2] = wrap_angle(p[:, 2] + delta[:, 2])
    return ParticleSet(out, particles.weights.copy())


def raw_weights(particles: ParticleSet, observations: Observations, fmap: CrowdFlowMap,
                params: MatchParams) -> np.ndarray:
    """Per-particle floored geometric mean of the observation match scores."""
    p = particles.poses
    obs = observations
    c, s = np.cos(p[:, 2])[:, None], np.sin(p[:, 2])[:, None]
    ox, oy = obs.starts[:, 0][None, :], obs.starts[:, 1][None, :]
    wx = p[:, 0:1] + c * ox - s * oy
    wy = p[:, 1:2] + s * ox + c * oy
    wdir = wrap_angle(obs.directions[None, :] + p[:, 2:3])
    i, j, ok = fmap.cell_indices(np.stack([wx, wy], axis=-1))
    i = np.where(ok, i, 0)
    j = np.where(ok, j, 0)
    masks = fmap.bin_mask[i, j]  # (P, K, 8)
    n_dirs = masks.sum(axis=-1)
    theta_m = min_angle_to_bins(wdir, masks)
    q = match_score(theta_m, n_dirs, params.gamma)
    q = np.where(ok, np.maximum(q, params.weight_floor), params.weight_floor)
    geo = np.exp(np.mean(np.log(q), axis=1))
    return np.maximum(params.weight_floor, geo)


def weigh(particles: ParticleSet, observations, fmap: CrowdFlowMap, params: MatchParams | None = None,
          accumulate: bool = True) -> ParticleSet:
    """Reweight particles by flow agreement; untouched when there are no observations.

    With ``accumulate`` the new likelihood multiplies the current weights
    (standard sequential importance weighting); otherwise it replaces them.
    """
    params = params or MatchParams()
    obs = observations if isinstance(observations, Observations) else Observations.from_list(list(observations))
    if len(obs) == 0:
        return particles.copy()
    if obs.frame not in ("robot",):
        raise ValueError("weigh expects robot-frame observations")
    raw = raw_weights(particles, obs, fmap, params)
    w = raw * particles.weights if accumulate else raw
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        w = np.full(len(w), 1.0 / len(w))
    else:
        w = w / total
    return ParticleSet(particles.poses.copy(), w)


def systematic_indices(weights: np.ndarray, u0: float) -> np.ndarray:
    """Systematic resampling: ancestor index for each of n strata, offset u0 in [0, 1)."""
    n = len(weights)
    positions = (u0 + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample(particles: ParticleSet, ess_threshold: float, rng: np.random.Generator) -> ParticleSet:
    n = len(particles)
    if particles.ess >= ess_threshold * n:
        return particles.copy()
    idx = systematic_indices(particles.weights, float(rng.uniform()))
    return ParticleSet(particles.poses[idx].copy(), np.full(n, 1.0 / n))


def estimate_pose(particles: ParticleSet) -> np.ndarray:
    w = particles.weights
    p = particles.poses
    x = float(np.dot(w, p[:, 0]))
    y = float(np.dot(w, p[:, 1]))
    th = math.atan2(float(np.dot(w, np.sin(p[:, 2]))), float(np.dot(w, np.cos(p[:, 2]))))
    return np.array([x, y, float(wrap_angle(th))])


class CrowdLocalizer:
    """Stateful filter wrapper: feed odometry every step, observations when available."""

    def __init__(self, fmap: CrowdFlowMap, initial_pose, rng: np.random.Generator,
                 config: LocalizerConfig | None = None):
        if fmap.is_empty():
            raise ValueError("crowd localization needs a non-empty flow map")
        self.map = fmap
        self.config = config or LocalizerConfig()
        self.rng = rng
        c = self.config
        self.particles = init_particles(initial_pose, c.n_particles, rng, c.init_std_xy, c.init_std_th)
        self.last_n_obs = 0

    def predict(self, odom_delta) -> None:
        self.particles = predict(self.particles, odom_delta, self.config.noise, self.rng)

    def update(self, observations: Observations) -> None:
        self.last_n_obs = len(observations)
        if len(observations) == 0:
            return
        self.particles = weigh(self.particles, observations, self.map, self.config.match)
        self.particles = resample(self.particles, self.config.ess_threshold, self.rng)

    @property
    def ess(self) -> float:
        return self.particles.ess

    def estimate(self) -> np.ndarray:
        return estimate_pose(self.particles)
