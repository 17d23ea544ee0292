"""Scripted world models used as controls for the sensitivity experiments."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from . import driver
from .geometry import COLLISION_TOLERANCE, PolylineSet, box_penetration
from .rollout import Observation, reconstruct_actions
from .scenario import Scenario


class ReplayModel:
    """Identity world model: every agent it controls follows its logged track.

    The rollout engine copies ground truth for this model instead of
    integrating actions, so full-control and ego-replay rollouts coincide
    bit for bit.
    """

    name = "replay"
    noise_dim = 1
    thread_safe = True
    ground_truth_replay = True

    def act(self, obs, controlled, noise):
        zeros = np.zeros(obs.speed.shape[:1] + obs.speed.shape[2:])
        return zeros, zeros


class GroundTruthActionModel:
    """Oracle that emits actions reconstructed from the logged tracks.

    Unlike :class:`ReplayModel` it goes through the normal integration path,
    which makes it a test oracle for the kinematics. It reads ground truth by
    construction and is not a legitimate world model.
    """

    name = "gt_actions"
    noise_dim = 1
    thread_safe = True

    def __init__(self, scenarios: Iterable[Scenario]):
        self.scenarios = {s.id: s for s in scenarios}

    def act(self, obs, controlled, noise):
        s = self.scenarios[obs.scenario_id]
        _, heading, speed, _ = obs.current
        return reconstruct_actions(s, obs.step, speed, heading)


class ScriptedModel:
    """Rule-based joint model built on the IDM/stop-line/lane-tracking driver.

    Subclasses decide who perceives whom (``sees``) and who stops for yellow
    lights. Per-agent desired speed is read from the observed history.
    """

    name = "scripted"
    noise_dim = 2
    thread_safe = True

    def __init__(self, accel_noise: float = 0.3, yaw_noise: float = 0.02):
        self.accel_noise = accel_noise
        self.yaw_noise = yaw_noise
        # holds the map itself so a recycled id() can never alias a new map
        self._lane_cache: tuple[object, list[PolylineSet]] | None = None

    def sees(self, obs: Observation) -> np.ndarray:
        n = len(obs.agents)
        return np.ones((n, n), dtype=bool)

    def obeys_yellow(self, obs: Observation) -> np.ndarray:
        return np.ones(len(obs.agents), dtype=bool)

    def _lanes(self, obs: Observation) -> list[PolylineSet]:
        if self._lane_cache is None or self._lane_cache[0] is not obs.map:
            self._lane_cache = (obs.map, [PolylineSet([lane]) for lane in obs.map.lane_centers])
        return self._lane_cache[1]

    def _routes(self, obs: Observation) -> np.ndarray:
        start = obs.position[0, obs.history_len - 1]
        if obs.map.lane_set is None:
            return np.full(len(obs.agents), -1)
        _, seg, _ = obs.map.lane_set.nearest(start)
        return obs.map.lane_set.owner[seg]

    def params(self, obs: Observation) -> driver.DriverParams:
        seen = obs.speed[0, : obs.history_len]
        v0 = np.maximum(seen.max(axis=0), 5.0)
        return driver.DriverParams.uniform(len(obs.agents), v0, headway=1.3, min_gap=2.5,
                                           max_accel=1.6, comfort_decel=2.5)

    def act(self, obs: Observation, controlled, noise):
        pos, heading, speed, valid = obs.current
        accel, yaw = driver.drive(
            pos, heading, speed, valid, obs.lengths, obs.widths, self.params(obs), self._routes(obs),
            self._lanes(obs), obs.signals_now, self.sees(obs), self.obeys_yellow(obs)[None, :],
        )
        return accel + self.accel_noise * noise[..., 0], yaw + self.yaw_noise * noise[..., 1]


class ReactiveModel(ScriptedModel):
    """Everyone perceives everyone and stops for yellow when able."""

    name = "reactive"


class OpenLoopModel(ScriptedModel):
    """Agents ignore all other agents; only the map and signals drive actions."""

    name = "open_loop"

    def sees(self, obs):
        n = len(obs.agents)
        return np.zeros((n, n), dtype=bool)


class AggressiveFollowerModel(ScriptedModel):
    """Model that assumes it controls the ego.

    Every other agent plans against the model's own ego plan instead of the
    ego it observes, and follows it at a short gap. The planned ego stops for
    yellow lights but creeps ``overrun`` metres further than the stop line
    allows. An agent that physically runs into the observed ego brakes to a
    halt. Under full control the plan is the ego, so the scene is
    self-consistent and crash-free. Once the ego replays a log that stops
    short of where the plan does, followers close up on the planned stop
    point and drive into the logged ego.

    The plan is internal state reset at the end of each history, so one
    instance must not interleave rollouts.
    """

    name = "aggressive_follower"
    thread_safe = False

    def __init__(self, accel_noise: float = 0.3, yaw_noise: float = 0.02, overrun: float = 4.0,
                 headway: float = 0.8):
        super().__init__(accel_noise, yaw_noise)
        self.overrun = overrun
        self.headway = headway
        self._plan = None

    def params(self, obs: Observation) -> driver.DriverParams:
        seen = obs.speed[0, : obs.history_len]
        v0 = np.maximum(seen.max(axis=0), 5.0)
        return driver.DriverParams.uniform(len(obs.agents), v0, headway=self.headway, min_gap=1.0,
                                           max_accel=2.0, comfort_decel=4.0)

    def act(self, obs: Observation, controlled, noise):
        pos, heading, speed, valid = obs.current
        e = obs.ego_index
        if obs.step == obs.history_len - 1 or self._plan is None:
            self._plan = (pos[:, e].copy(), heading[:, e].copy(), speed[:, e].copy())
        pos, heading, speed = pos.copy(), heading.copy(), speed.copy()
        pos[:, e], heading[:, e], speed[:, e] = self._plan
        params, route, lanes, signals = self.params(obs), self._routes(obs), self._lanes(obs), obs.signals_now
        accel, yaw = driver.drive(pos, heading, speed, valid, obs.lengths, obs.widths, params, route,
                                  lanes, signals)
        # the ego measures the stop line from a point ``overrun`` metres ahead of its bumper
        short = obs.lengths.copy()
        short[e] -= 2.0 * self.overrun
        ego_a, ego_y = driver.drive(pos, heading, speed, valid, short, obs.widths, params, route,
                                    lanes, signals)
        accel[:, e], yaw[:, e] = ego_a[:, e], ego_y[:, e]
        accel = accel + self.accel_noise * noise[..., 0]
        yaw = yaw + self.yaw_noise * noise[..., 1]
        # a vehicle that has run into the observed ego brakes to a halt
        seen_pos, seen_head = obs.current[0][:, e], obs.current[1][:, e]
        hit = box_penetration(seen_pos[:, None], seen_head[:, None], obs.lengths[e], obs.widths[e],
                              obs.current[0], obs.current[1], obs.lengths, obs.widths) > COLLISION_TOLERANCE
        hit &= valid
        hit[:, e] = False
        accel = np.where(hit, -driver.MAX_ACCEL, accel)
        yaw = np.where(hit, 0.0, yaw)
        a, y = driver.clamp_action(accel[:, e], yaw[:, e])
        self._plan = driver.integrate(*self._plan, a, y, obs.dt)
        return accel, yaw


SCRIPTED_MODELS = {
    cls.name: cls for cls in (ReactiveModel, OpenLoopModel, AggressiveFollowerModel)
}
