from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdnav.flow_map import CrowdFlowMap, FlowCell, FlowComponent
from crowdnav.localizer import (
    CrowdLocalizer, LocalizerConfig, MatchParams, MotionNoise, ParticleSet, estimate_pose, flow_match_score,
    init_particles, match_score, predict, resample, systematic_indices, weigh,
)
from crowdnav.crowd_sim import Observations
from oracles import systematic_reference

PROP = settings(max_examples=1000, deadline=None)


def cell_with(*bins):
    return FlowCell(components=[FlowComponent(b, 1.0, 1) for b in bins])


def robot_obs(starts, directions):
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    n = len(starts)
    return Observations(starts, np.ones(n), np.asarray(directions, dtype=float), np.arange(n), 0.0, "robot", 1.0)


def east_map(w=10, h=10):
    m = CrowdFlowMap(w, h)
    for i in range(w):
        for j in range(h):
            m.set_components(i, j, [FlowComponent(0, 1.0, 5)])
    return m


# ------------------------------------------------------------ matching
@pytest.mark.parametrize("theta_m,n,gamma,expected", [
    (0.0, 1, 0.5, 1.0), (0.0, 1, 0.0, 1.0), (math.pi, 1, 0.5, 0.0), (math.pi, 4, 0.3, 0.0),
    (0.0, 2, 0.5, 2.0 / 3.0), (math.pi / 2, 1, 0.5, 0.5), (0.0, 3, 0.5, 0.5),
])
def test_match_score_examples(theta_m, n, gamma, expected):
    assert float(match_score(theta_m, n, gamma)) == pytest.approx(expected, abs=1e-12)


def test_flow_match_score_uses_bin_centers_and_count():
    assert flow_match_score(0.0, cell_with(0)) == pytest.approx(1.0)
    assert flow_match_score(0.0, cell_with(0, 4)) == pytest.approx(2.0 / 3.0)
    assert flow_match_score(math.pi / 2, cell_with(0)) == pytest.approx(0.5)
    assert flow_match_score(0.1, cell_with(0)) == pytest.approx((math.pi - 0.1) / math.pi)


def test_flow_match_score_empty_cell_is_zero():
    assert flow_match_score(0.3, FlowCell()) == 0.0


def test_match_params_validation():
    with pytest.raises(ValueError):
        MatchParams(gamma=1.5)
    with pytest.raises(ValueError):
        MatchParams(weight_floor=0.0)


@PROP
@given(st.floats(-10, 10), st.lists(st.integers(0, 7), min_size=1, max_size=8, unique=True), st.floats(0, 1))
def test_score_is_bounded(direction, bins, gamma):
    q = flow_match_score(direction, cell_with(*bins), gamma)
    assert 0.0 <= q <= 1.0


@PROP
@given(st.floats(0, math.pi), st.floats(0, math.pi), st.integers(1, 8), st.floats(0, 1))
def test_score_non_increasing_in_theta(a, b, n, gamma):
    lo, hi = sorted((a, b))
    assert match_score(hi, n, gamma) <= match_score(lo, n, gamma) + 1e-15


@PROP
@given(st.floats(0, math.pi * 0.999), st.integers(1, 7), st.floats(0.01, 1))
def test_score_strictly_decreasing_in_n(theta, n, gamma):
    assert match_score(theta, n + 1, gamma) < match_score(theta, n, gamma)


@PROP
@given(st.floats(0, math.pi), st.integers(1, 8), st.floats(0, 1))
def test_score_reduces_to_qhat(theta, n, gamma):
    qhat = (math.pi - theta) / math.pi
    assert float(match_score(theta, 1, gamma)) == pytest.approx(qhat, abs=1e-12)
    assert float(match_score(theta, n, 0.0)) == pytest.approx(qhat, abs=1e-12)


@PROP
@given(st.floats(-math.pi, math.pi), st.integers(0, 7), st.floats(0, 1))
def test_score_symmetric_about_the_bin(theta, b, gamma):
    beta = b * math.pi / 4
    cell = cell_with(b)
    assert flow_match_score(theta, cell, gamma) == pytest.approx(flow_match_score(2 * beta - theta, cell, gamma),
                                                                abs=1e-9)


# ------------------------------------------------------------- predict
def test_zero_delta_without_noise_keeps_particles():
    p = ParticleSet(np.array([[1.0, 2.0, 0.3], [-1.0, 0.0, -2.0]]), np.array([0.4, 0.6]))
    out = predict(p, (0.0, 0.0, 0.0), None)
    np.testing.assert_array_equal(out.poses, p.poses)
    np.testing.assert_array_equal(out.weights, p.weights)


def test_delta_is_applied_in_particle_frame():
    p = ParticleSet(np.array([[0.0, 0.0, math.pi / 2]]), np.ones(1))
    out = predict(p, (1.0, 0.0, 0.0), None)
    np.testing.assert_allclose(out.poses[0], [0.0, 1.0, math.pi / 2], atol=1e-12)


def test_predict_rejects_non_finite_delta():
    p = ParticleSet(np.zeros((1, 3)), np.ones(1))
    with pytest.raises(ValueError):
        predict(p, (float("nan"), 0.0, 0.0), None)


def test_noisy_predict_mean_displacement():
    rng = np.random.default_rng(7)
    n = 1000
    p = ParticleSet(np.zeros((n, 3)), np.full(n, 1.0 / n))
    noise = MotionNoise()
    out = predict(p, (1.0, 0.0, 0.0), noise, rng)
    sd_xy = noise.inflation * noise.trans_coef * 1.0
    sd_th = noise.inflation * noise.rot_trans_coef * 1.0
    mean = out.poses[:, :2].mean(axis=0)
    # heading noise also leaks into y; bound it with the combined first-order std
    assert abs(mean[0] - 1.0) <= 3 * sd_xy / math.sqrt(n)
    assert abs(mean[1]) <= 3 * math.hypot(sd_xy, sd_th) / math.sqrt(n)
    assert out.poses[:, 0].std() == pytest.approx(sd_xy, rel=0.15)


# --------------------------------------------------------------- weigh
def test_particle_at_true_pose_gets_the_maximal_weight():
    m = east_map()
    truth = np.array([5.0, 5.0, 0.3])
    rng = np.random.default_rng(0)
    poses = np.vstack([truth, truth + rng.normal(0, [1.0, 1.0, 0.8], (49, 3))])
    p = ParticleSet(poses, np.full(50, 1 / 50))
    # one pedestrian 2 m ahead moving east in the world, seen from the true pose
    o = robot_obs([(2.0, 0.0)], [-0.3])
    out = weigh(p, o, m, MatchParams(weight_floor=1e-3))
    assert out.weights[0] == out.weights.max()


def test_no_observations_leaves_weights_untouched():
    p = ParticleSet(np.zeros((3, 3)), np.array([0.2, 0.3, 0.5]))
    out = weigh(p, robot_obs(np.zeros((0, 2)), []), east_map())
    np.testing.assert_array_equal(out.weights, p.weights)


def test_two_particles_match_and_mismatch():
    m = east_map()
    p = ParticleSet(np.array([[5.0, 5.0, 0.0], [5.0, 5.0, math.pi]]), np.array([0.5, 0.5]))
    out = weigh(p, robot_obs([(0.5, 0.0)], [0.0]), m, MatchParams(weight_floor=1e-3))
    eps = 1e-3 / (1 + 1e-3)
    np.testing.assert_allclose(out.weights, [1 - eps, eps], rtol=1e-12)


def test_off_map_observation_scores_the_floor():
    m = east_map(3, 3)
    p = ParticleSet(np.array([[1.5, 1.5, 0.0], [20.0, 20.0, 0.0]]), np.array([0.5, 0.5]))
    out = weigh(p, robot_obs([(0.0, 0.0)], [0.0]), m, MatchParams(weight_floor=0.01))
    np.testing.assert_allclose(out.weights, [1 / 1.01, 0.01 / 1.01])


def test_geometric_mean_combines_observations():
    m = east_map()
    p = ParticleSet(np.array([[5.0, 5.0, 0.0], [5.0, 5.0, math.pi / 2]]), np.array([0.5, 0.5]))
    o = robot_obs([(0.5, 0.0), (0.0, 0.5)], [0.0, math.pi / 2])
    out = weigh(p, o, m, MatchParams(weight_floor=1e-3))
    # particle 0: scores 1 and 0.5; particle 1: 0.5 and 0 -> floor
    raw = np.array([math.sqrt(0.5), max(1e-3, math.sqrt(0.5 * 1e-3))])
    np.testing.assert_allclose(out.weights, raw / raw.sum())


def test_weigh_requires_robot_frame():
    p = ParticleSet(np.zeros((2, 3)), np.full(2, 0.5))
    o = Observations(np.zeros((1, 2)), np.ones(1), np.zeros(1), np.zeros(1, dtype=int), 0.0, "world", 1.0)
    with pytest.raises(ValueError):
        weigh(p, o, east_map())


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.floats(1e-4, 0.2))
def test_weigh_normalizes_and_respects_the_floor(seed, n_obs, floor):
    rng = np.random.default_rng(seed)
    m = CrowdFlowMap(6, 6)
    for i in range(6):
        for j in range(6):
            if rng.random() < 0.7:
                bins = sorted(set(rng.integers(0, 8, rng.integers(1, 4)).tolist()))
                m.set_components(i, j, [FlowComponent(b, 1.0, 1) for b in bins])
    n = 20
    poses = np.column_stack([rng.uniform(-1, 7, n), rng.uniform(-1, 7, n), rng.uniform(-math.pi, math.pi, n)])
    p = ParticleSet(poses, np.full(n, 1.0 / n))
    o = robot_obs(rng.uniform(-3, 3, (n_obs, 2)), rng.uniform(-math.pi, math.pi, n_obs))
    out = weigh(p, o, m, MatchParams(weight_floor=floor))
    assert out.weights.sum() == pytest.approx(1.0)
    assert np.all(out.weights >= floor / (n * 1.0) - 1e-12)


# ------------------------------------------------------------ resample
def test_uniform_weights_do_not_resample():
    p = ParticleSet(np.arange(30, dtype=float).reshape(10, 3), np.full(10, 0.1))
    out = resample(p, 0.5, np.random.default_rng(0))
    np.testing.assert_array_equal(out.poses, p.poses)


def test_degenerate_weights_copy_the_single_particle():
    poses = np.arange(15, dtype=float).reshape(5, 3)
    w = np.zeros(5)
    w[3] = 1.0
    out = resample(ParticleSet(poses, w), 0.5, np.random.default_rng(1))
    assert np.all(out.poses == poses[3])
    np.testing.assert_allclose(out.weights, 0.2)


def test_three_particle_multiplicities_match_the_oracle():
    w = np.array([0.5, 0.3, 0.2])
    rng = np.random.default_rng(42)
    u0 = float(np.random.default_rng(42).uniform())
    out = resample(ParticleSet(np.arange(9, dtype=float).reshape(3, 3), w), 1.0, rng)
    expected = systematic_reference(w, u0)
    np.testing.assert_array_equal(out.poses[:, 0], np.arange(9, dtype=float).reshape(3, 3)[expected, 0])
    # u0 < 1/3 -> (0, 0, 1); otherwise (0, 1, 2)
    assert expected in ([0, 0, 1], [0, 1, 2])


@PROP
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30).filter(lambda w: sum(w) > 1e-6),
       st.floats(0.0, 0.999999))
def test_systematic_indices_match_the_oracle(weights, u0):
    w = np.array(weights) / np.sum(weights)
    got = systematic_indices(w, u0).tolist()
    assert len(got) == len(w)
    assert got == systematic_reference(w.tolist(), u0)


def test_resample_preserves_count_and_weighted_mean():
    rng = np.random.default_rng(5)
    n = 500
    poses = np.column_stack([rng.normal(0, 2, n), rng.normal(0, 2, n), np.zeros(n)])
    w = rng.exponential(size=n) ** 3
    w /= w.sum()
    target = float(np.dot(w, poses[:, 0]))
    means = []
    for seed in range(50):
        out = resample(ParticleSet(poses, w), 1.0, np.random.default_rng(seed))
        assert len(out) == n
        means.append(out.poses[:, 0].mean())
    spread = math.sqrt(np.dot(w, (poses[:, 0] - target) ** 2) / n)
    assert abs(np.mean(means) - target) < 3 * spread / math.sqrt(50) + 1e-9


# ------------------------------------------------------------ estimate
def test_estimate_identical_particles():
    p = ParticleSet(np.tile([1.0, -2.0, 0.5], (4, 1)), np.full(4, 0.25))
    np.testing.assert_allclose(estimate_pose(p), [1.0, -2.0, 0.5])


def test_estimate_uses_circular_mean():
    p = ParticleSet(np.array([[0, 0, math.radians(175)], [0, 0, math.radians(-175)]]), np.array([0.5, 0.5]))
    assert abs(abs(estimate_pose(p)[2]) - math.pi) < 1e-9


def test_estimate_weighted_mean():
    p = ParticleSet(np.array([[0.0, 0, 0], [10.0, 0, 0]]), np.array([0.9, 0.1]))
    assert estimate_pose(p)[0] == pytest.approx(1.0)


# --------------------------------------------------------- filter object
def test_init_particles_spread():
    p = init_particles((3.0, 4.0, 0.1), 2000, np.random.default_rng(0))
    np.testing.assert_allclose(p.poses[:, :2].std(axis=0), [1.0, 1.0], rtol=0.1)
    assert p.poses[:, 2].std() == pytest.approx(0.2, rel=0.1)
    assert p.weights.sum() == pytest.approx(1.0)


def test_localizer_requires_a_map():
    with pytest.raises(ValueError):
        CrowdLocalizer(CrowdFlowMap(3, 3), (0, 0, 0), np.random.default_rng(0))


def test_localizer_recovers_heading_from_flow():
    m = east_map(20, 20)
    truth = np.array([10.0, 10.0, 0.0])
    loc = CrowdLocalizer(m, truth + [0.0, 0.0, 0.4], np.random.default_rng(3),
                         LocalizerConfig(n_particles=300, init_std_th=0.4))
    for _ in range(20):
        loc.predict((0.0, 0.0, 0.0))
        loc.update(robot_obs([(2.0, 0.0), (-1.0, 1.0), (0.0, -2.0)], [0.0, 0.0, 0.0]))
    assert abs(loc.estimate()[2]) < 0.15


def test_localizer_defaults():
    c = LocalizerConfig()
    assert (c.n_particles, c.match.gamma, c.ess_threshold, c.init_std_xy, c.init_std_th) == (500, 0.5, 0.5, 1.0, 0.2)
    assert c.noise.inflation == 1.5
