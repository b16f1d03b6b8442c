from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from crowdnav.geometry import compose
from crowdnav.scenario import Circle, Lane, Rect, Scenario, shipped_scenario
from crowdnav.crowd_sim import (
    SimParams, World, birdview_observations, read_odometry, sense_pedestrians, step_world,
)


def open_field(lanes=(), obstacles=(), density=0.0, start=(1.0, 1.0, 0.0)) -> Scenario:
    return Scenario("field", 40.0, 40.0, tuple(obstacles), tuple(lanes), density, start, (39.0, 39.0), 1)


def bare_world(scenario: Scenario, **params) -> World:
    w = World(scenario, 0, SimParams(**params), populate=False)
    w.robot_active = False
    return w


def test_single_agent_relaxes_to_preferred_speed():
    sc = open_field([Lane(((2.0, 20.0), (38.0, 20.0)))])
    w = bare_world(sc)
    w.add_agent((2.0, 20.0), (0.0, 0.0), 1.2)
    for _ in range(50):
        w.step()
    speed = math.hypot(*w.vel[0])
    assert speed == pytest.approx(1.2, rel=0.01)
    assert w.vel[0, 0] > 0 and abs(w.vel[0, 1]) < 1e-9


def test_head_on_agents_stay_mirror_symmetric():
    sc = open_field([Lane(((2.0, 20.0), (38.0, 20.0)), bidirectional=True)])
    w = bare_world(sc)
    w.add_agent((15.0, 20.0), (1.0, 0.0), 1.0, route=0, waypoint=1)
    w.add_agent((25.0, 20.0), (-1.0, 0.0), 1.0, route=1, waypoint=1)
    for _ in range(60):
        w.step()
        assert w.pos[0, 0] + w.pos[1, 0] == pytest.approx(40.0, abs=1e-9)
        assert w.pos[0, 1] == pytest.approx(w.pos[1, 1], abs=1e-9)
        assert w.vel[0, 0] == pytest.approx(-w.vel[1, 0], abs=1e-9)


def test_seeded_run_is_bit_identical():
    sc = shipped_scenario("fountain")
    digests = []
    for _ in range(2):
        w = World(sc, 42)
        w.robot.commanded_velocity = np.array([0.5, 0.2])
        for _ in range(100):
            step_world(w, 0.1)
        digests.append(w.digest())
    assert digests[0] == digests[1]
    assert World(sc, 43).digest() != World(sc, 42).digest()


def test_step_rejects_bad_dt():
    w = bare_world(open_field())
    for dt in (0.0, -0.1, 0.25):
        with pytest.raises(ValueError):
            w.step(dt)


def _observer(target_xy, obstacles=()):
    sc = open_field([Lane(((1.0, 1.0), (39.0, 1.0)))], obstacles, start=(20.0, 20.0, 0.3))
    w = bare_world(sc)
    w.add_agent(target_xy, (0.0, 0.0), 1.0)
    w.pref[:] = 0.0  # keep the pedestrian still
    for _ in range(w.params.window_steps):
        w.step()
    return w


def test_range_cut():
    assert len(sense_pedestrians(_observer((26.0, 20.0)))) == 0
    assert len(sense_pedestrians(_observer((24.0, 20.0)))) == 1


def test_occlusion():
    wall = Rect(21.0, 18.0, 22.0, 22.0)
    assert len(sense_pedestrians(_observer((24.0, 20.0), [wall]))) == 0
    assert len(birdview_observations(_observer((24.0, 20.0), [wall]))) == 1


def test_observation_length_and_direction():
    sc = open_field([Lane(((1.0, 1.0), (39.0, 1.0)))])
    w = bare_world(sc)
    w.add_agent((5.0, 5.0), (0.0, 0.0), 1.0)
    for k in range(w.params.window_steps):
        w.step()
        w.pos[0] = (5.0 + 0.1 * (k + 1), 5.0)
        w._history[-1] = w.pos
    obs = birdview_observations(w)
    assert len(obs) == 1
    assert obs[0].length == pytest.approx(1.0)
    assert obs[0].direction == pytest.approx(0.0)
    assert obs[0].start == pytest.approx((5.0, 5.0))


def test_history_required():
    w = World(shipped_scenario("fountain"), 1)
    with pytest.raises(ValueError):
        w.sense()


def test_birdview_counts():
    w = bare_world(open_field([Lane(((1.0, 1.0), (39.0, 1.0)))]))
    for _ in range(10):
        w.step()
    assert birdview_observations(w) == []
    sc = open_field([Lane(((1.0, 20.0), (39.0, 20.0)))])
    w = bare_world(sc)
    for k in range(7):
        w.add_agent((2.0 + 3.0 * k, 20.0), (1.0, 0.0), 1.0)
    for _ in range(w.params.window_steps):
        w.step()
    obs = birdview_observations(w)
    assert len(obs) == 7
    assert sorted(o.pedestrian_id for o in obs) == list(range(7))


def test_birdview_skips_agents_without_a_full_window():
    w = World(shipped_scenario("conference"), 3)
    for _ in range(w.params.window_steps):
        w.step()
    assert len(birdview_observations(w)) == int(np.sum(w.age >= w.params.window_steps))


@pytest.mark.parametrize("name", ["fountain", "canteen"])
def test_sensing_is_subset_of_birdview(name):
    w = World(shipped_scenario(name), 5)
    w.robot.commanded_velocity = np.array([0.7, 0.3])
    for _ in range(30):
        w.step()
    local = w.sense().to_world(w.robot.true_pose)
    bird = {int(i): k for k, i in enumerate(w.birdview().ids)}
    full = w.birdview()
    assert len(local) > 0
    for k, pid in enumerate(local.ids):
        j = bird[int(pid)]
        np.testing.assert_allclose(local.starts[k], full.starts[j], atol=1e-9)
        assert local.lengths[k] == pytest.approx(full.lengths[j])
        assert math.cos(local.directions[k] - full.directions[j]) == pytest.approx(1.0)


def test_stationary_robot_reads_zero_odometry():
    w = bare_world(open_field())
    with pytest.raises(ValueError):
        read_odometry(w)
    w.step()
    assert read_odometry(w) == (0.0, 0.0, 0.0)


def _random_walk(seconds: float, **params):
    w = bare_world(open_field(start=(20.0, 20.0, 0.0)), **params)
    rng = np.random.default_rng(0)
    true_d, odom_d, errs = [], [], []
    for k in range(int(seconds / w.params.dt)):
        if k % 20 == 0:
            ang = rng.uniform(-math.pi, math.pi)
            w.robot.commanded_velocity = 0.8 * np.array([math.cos(ang), math.sin(ang)])
        w.step()
        true_d.append(w.last_true_delta.copy())
        odom_d.append(np.array(read_odometry(w)))
        errs.append(float(np.sum((w.robot.odom_pose[:2] - w.robot.true_pose[:2]) ** 2)))
    return w, true_d, odom_d, np.array(errs)


def test_noise_free_odometry_tracks_truth():
    w, *_ = _random_walk(30.0, odom_trans_coef=0.0, odom_rot_coef=0.0, odom_rot_trans_coef=0.0)
    np.testing.assert_allclose(w.robot.odom_pose, w.robot.true_pose, atol=1e-9)


def test_composing_deltas_reproduces_poses():
    w, true_d, odom_d, _ = _random_walk(20.0)
    start = np.array([20.0, 20.0, 0.0])
    t, o = start.copy(), start.copy()
    for a, b in zip(true_d, odom_d):
        t, o = compose(t, a), compose(o, b)
    np.testing.assert_allclose(t, w.robot.true_pose, atol=1e-9)
    np.testing.assert_allclose(o, w.robot.odom_pose, atol=1e-9)


def test_odometry_error_grows():
    *_, errs = _random_walk(300.0)
    t = np.arange(len(errs))
    mse = np.cumsum(errs) / (t + 1)
    slope = np.polyfit(t, mse, 1)[0]
    assert slope > 0
    assert errs[-600:].mean() > errs[:600].mean()


@pytest.mark.parametrize("name", ["fountain", "conference", "canteen", "corridor"])
def test_shipped_scenarios_keep_agents_apart_and_sane(name):
    w = World(shipped_scenario(name), 2)
    from scipy.spatial import cKDTree
    for k in range(300):
        w.step()
        pairs = cKDTree(w.pos).query_pairs(2 * w.params.agent_radius, output_type="ndarray")
        if len(pairs):
            d = np.hypot(*(w.pos[pairs[:, 0]] - w.pos[pairs[:, 1]]).T)
            assert np.all(d >= 0.5 * (w.radius[pairs[:, 0]] + w.radius[pairs[:, 1]]) - 1e-9)
        speed = np.hypot(w.vel[:, 0], w.vel[:, 1])
        assert np.all(speed <= 2 * w.pref + 1e-9)
        if k >= w.params.window_steps and k % 50 == 0:
            obs = w.birdview()
            assert np.all(obs.lengths / obs.window <= 3.0)
            assert np.all((obs.directions > -math.pi) & (obs.directions <= math.pi))
    assert -math.pi < w.robot.true_pose[2] <= math.pi


def test_empty_scenario_has_no_agents():
    sc = dataclasses.replace(shipped_scenario("fountain"), lanes=())
    assert World(sc, 1).n_agents == 0


def test_obstacle_outline_samples_lie_on_boundaries():
    sc = dataclasses.replace(shipped_scenario("fountain"), lanes=(), width=10.0, height=10.0,
                             obstacles=(Rect(4.0, 4.0, 6.0, 6.0), Circle(8.0, 8.0, 0.5)),
                             robot_start=(5.0, 2.5, 0.0))
    w = World(sc, 0)
    pts = w.nearby_obstacle_outline(2.0)
    assert len(pts) > 10
    assert np.all(np.hypot(pts[:, 0], pts[:, 1]) <= 2.0)
    world_pts = pts + [5.0, 2.5]  # heading 0: robot frame is a translation
    on_edge = np.isclose(world_pts[:, 0], 4) | np.isclose(world_pts[:, 0], 6) | np.isclose(world_pts[:, 1], 4)
    assert on_edge.all()
    assert len(w.nearby_obstacle_outline(0.5)) == 0
