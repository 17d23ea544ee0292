from dataclasses import replace

import numpy as np
import pytest

from delta_sim.metrics import (BOOLEAN_METRICS, METRICS, ground_truth_series, kinematic_series, min_ade,
                               nearest_object_distance, road_edge_distance, rollout_series, series_to_csv,
                               time_to_collision)
from delta_sim.models import ReactiveModel
from delta_sim.rollout import ControlMask, RolloutSet, full_control_mask, rollout
from delta_sim.scenario import MapData, Scenario

from conftest import straight_scenario


def test_constant_velocity_track():
    pos = np.stack([np.arange(10) * 1.0, np.zeros(10)], axis=1)
    out = kinematic_series(pos, np.zeros(10), np.ones(10, bool), 0.1)
    assert np.allclose(out["speed"].values, 10.0)
    assert np.allclose(out["accel"].values, 0.0)
    assert out["speed"].valid.all()


def test_turning_track():
    heading = np.array([0.0, 0.1, 0.2, 0.3])
    out = kinematic_series(np.zeros((4, 2)), heading, np.ones(4, bool), 0.1)
    assert np.allclose(out["ang_speed"].values, 1.0)
    assert np.allclose(out["ang_accel"].values, 0.0)


def test_heading_wrap_across_pi():
    out = kinematic_series(np.zeros((2, 2)), np.array([3.1, -3.1]), np.ones(2, bool), 0.1)
    expected = (2 * np.pi - 6.2) / 0.1  # wrap(-6.2) / dt
    assert out["ang_speed"].values[0] == pytest.approx(expected)
    assert out["ang_speed"].values[0] == pytest.approx(0.832, abs=1e-3)


def test_invalid_steps_invalidate_neighbours():
    pos = np.stack([np.arange(8) * 1.0, np.zeros(8)], axis=1)
    valid = np.ones(8, bool)
    valid[4] = False
    out = kinematic_series(pos, np.zeros(8), valid, 0.1)
    assert not out["speed"].valid[3] and not out["speed"].valid[4]
    assert out["speed"].valid[2] and out["speed"].valid[5]
    short = kinematic_series(pos[:1], np.zeros(1), np.ones(1, bool), 0.1)
    assert not short["accel"].valid.any()


BOX = dict(lengths=np.array([4.0, 4.0]), widths=np.array([2.0, 2.0]))


def test_nearest_object_distance_examples():
    pos = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert nearest_object_distance(pos, np.zeros(2), np.ones(2, bool), subject=0, **BOX) == pytest.approx(6.0)
    pos = np.array([[0.0, 0.0], [1.0, 0.5]])
    assert nearest_object_distance(pos, np.zeros(2), np.ones(2, bool), subject=0, **BOX) == 0.0
    assert nearest_object_distance(pos, np.zeros(2), np.array([True, False]), subject=0, **BOX) == 40.0


def ttc(positions, speeds, subject=0, lengths=None):
    n = len(positions)
    pos = np.array(positions, float)
    vel = np.stack([np.array(speeds, float), np.zeros(n)], axis=1)
    lengths = np.full(n, 4.0) if lengths is None else np.array(lengths, float)
    return time_to_collision(pos, np.zeros(n), vel, np.ones(n, bool), lengths, np.full(n, 2.0), subject)


def test_time_to_collision_examples():
    # 20 m bumper-to-bumper gap: centres 24 m apart with 4 m boxes
    assert ttc([[0, 0], [24, 0]], [10, 5]) == pytest.approx(4.0)
    assert ttc([[0, 0], [24, 0]], [5, 10]) == 5.0
    # candidates at 3 s and 1.5 s
    assert ttc([[0, 0], [34, 0], [10, 0.5]], [10, 0, 6]) == pytest.approx(min(30 / 10, 6 / 4))
    # lateral offset beyond the corridor is ignored
    assert ttc([[0, 0], [24, 2.5]], [10, 0]) == 5.0


def test_ttc_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = 5
        pos = np.stack([rng.uniform(-30, 30, n), rng.uniform(-3, 3, n)], axis=1)
        v = rng.uniform(0, 15, n)
        brute = 5.0
        for j in range(1, n):
            gap = pos[j, 0] - pos[0, 0] - 4.0
            if pos[j, 0] > pos[0, 0] and abs(pos[j, 1] - pos[0, 1]) < 2.0 and v[0] - v[j] > 0.1:
                brute = min(brute, max(gap, 0.0) / (v[0] - v[j]))
        assert ttc(pos, v) == pytest.approx(min(max(brute, 0.0), 5.0))


EDGE = MapData(road_edges=(np.array([[0.0, 0.0], [10.0, 0.0]]),))


def test_road_edge_sign_convention():
    assert road_edge_distance(np.array([5.0, 2.0]), EDGE) == pytest.approx(-2.0)
    assert road_edge_distance(np.array([5.0, -2.0]), EDGE) == pytest.approx(2.0)
    with pytest.raises(ValueError, match="no road edges"):
        road_edge_distance(np.array([0.0, 0.0]), MapData())


def series_for(s: Scenario):
    return ground_truth_series(s)


def test_series_ranges_and_cross_metric_invariants(mixed_corpus):
    for s in mixed_corpus:
        r = rollout(s, ReactiveModel(), full_control_mask(s), k=2, seed=1)
        out = rollout_series(r, s)
        assert list(out) == list(METRICS)
        for m in BOOLEAN_METRICS:
            assert set(np.unique(out[m].values)) <= {0.0, 1.0}
        assert out["ttc"].values.min() >= 0 and out["ttc"].values.max() <= 5
        assert out["dist_nearest"].values.min() >= 0 and out["dist_nearest"].values.max() <= 40
        hit = out["collision"].values == 1
        assert np.all(out["dist_nearest"].values[hit] == 0)
        assert np.array_equal(out["offroad"].values == 1, out["dist_road_edge"].values > 0)


def rigid(s: Scenario, angle: float, shift) -> Scenario:
    c, si = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -si], [si, c]])
    shift = np.asarray(shift, float)
    m = MapData(tuple(p @ rot.T + shift for p in s.map.road_edges), tuple(p @ rot.T + shift for p in s.map.lane_centers))
    heading = np.pi - np.mod(np.pi - (s.heading + angle), 2 * np.pi)
    return replace(s, map=m, position=s.position @ rot.T + shift, velocity=s.velocity @ rot.T, heading=heading)


def test_metrics_are_rigid_motion_invariant(mixed_corpus):
    for s in mixed_corpus[:3]:
        a = series_for(s)
        b = series_for(rigid(s, 0.7, (120.0, -35.0)))
        for m in METRICS:
            assert np.array_equal(a[m].valid, b[m].valid)
            if m in BOOLEAN_METRICS:
                assert np.array_equal(a[m].values, b[m].values), m
            else:
                assert np.allclose(a[m].values, b[m].values, atol=1e-9, rtol=0), m


def make_rollouts(s: Scenario, offsets):
    """Rollouts displaced laterally from ground truth by a constant per rollout."""
    h = s.history_len
    k = len(offsets)
    pos = np.broadcast_to(s.position[h:], (k,) + s.position[h:].shape).copy()
    pos[..., 1] += np.asarray(offsets, float)[:, None, None]
    return RolloutSet(s.id, ControlMask({a: True for a in s.agent_ids}), k, 0, s.agent_ids, pos,
                      np.broadcast_to(s.heading[h:], (k,) + s.heading[h:].shape).copy(),
                      np.broadcast_to(s.velocity[h:], (k,) + s.velocity[h:].shape).copy(),
                      np.ones((k,) + s.valid[h:].shape, bool))


def test_min_ade_examples():
    s = straight_scenario([0.0, -20.0], [10.0, 10.0])
    assert min_ade(make_rollouts(s, [0.0]), s, [1, 2]) == 0.0
    assert min_ade(make_rollouts(s, [1.0, 3.0]), s, [1, 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        min_ade(make_rollouts(s, [1.0]), s, [])
    with pytest.raises(KeyError):
        min_ade(make_rollouts(s, [1.0]), s, [9])


def test_min_ade_replayed_agents_contribute_zero(lf_corpus):
    s = lf_corpus[0]
    mask = ControlMask({a: a != s.ego_id for a in s.agent_ids})
    r = rollout(s, ReactiveModel(), mask, k=3, seed=0)
    assert min_ade(r, s, [s.ego_id]) == 0.0


def test_min_ade_union_lies_between_parts(lf_corpus):
    s = lf_corpus[1]
    r = rollout(s, ReactiveModel(), full_control_mask(s), k=3, seed=0)
    ids = list(s.agent_ids)
    d1, d2 = ids[:1], ids[1:]
    a, b, u = min_ade(r, s, d1), min_ade(r, s, d2), min_ade(r, s, ids)
    assert min(a, b) - 1e-12 <= u <= max(a, b) + 1e-12


def test_series_csv_layout():
    s = straight_scenario([0.0, -20.0], [10.0, 10.0], future_len=5)
    text = series_to_csv(s.id, ground_truth_series(s), s.agent_ids, s.history_len, ground_truth=True)
    lines = text.strip().splitlines()
    assert lines[0] == "scenario_id,rollout_k,agent_id,t,metric,value,valid"
    assert len(lines) == 1 + 9 * 2 * 5
