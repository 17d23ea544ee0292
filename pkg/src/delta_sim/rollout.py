"""Closed-loop rollouts of a world model under a per-agent control mask."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from .driver import MAX_ACCEL, MAX_YAW_RATE, SIGNAL_CODES, integrate
from .geometry import wrap_angle
from .scenario import AgentMeta, MapData, Scenario

ROLLOUT_SUFFIX = ".rollouts.json"
DEFAULT_K = 32


class RolloutError(RuntimeError):
    """The world model broke its contract during a rollout."""


@dataclass(frozen=True)
class Action:
    acceleration: float
    yaw_rate: float

    @classmethod
    def clamped(cls, acceleration: float, yaw_rate: float) -> "Action":
        if not (np.isfinite(acceleration) and np.isfinite(yaw_rate)):
            raise ValueError("action must be finite")
        return cls(float(np.clip(acceleration, -MAX_ACCEL, MAX_ACCEL)),
                   float(np.clip(yaw_rate, -MAX_YAW_RATE, MAX_YAW_RATE)))


@dataclass(frozen=True)
class ControlMask:
    """``controlled[agent_id]`` is True when the world model drives the agent."""

    controlled: Mapping[int, bool]

    def as_array(self, scenario: Scenario) -> np.ndarray:
        if set(self.controlled) != set(scenario.agent_ids):
            raise ValueError("control mask must cover exactly the scenario's agents")
        return np.array([bool(self.controlled[i]) for i in scenario.agent_ids])

    def to_json(self) -> dict:
        return {str(k): bool(self.controlled[k]) for k in sorted(self.controlled)}


def full_control_mask(scenario: Scenario) -> ControlMask:
    return ControlMask({a.id: True for a in scenario.agents})


def ego_replay_mask(scenario: Scenario) -> ControlMask:
    """Everyone simulated except the ego, which replays its logged track."""
    return ControlMask({a.id: not a.is_ego for a in scenario.agents})


def sample_dropout_mask(scenario: Scenario, p_drop: float, rng: np.random.Generator,
                        include_ego: bool = True) -> ControlMask:
    """Hand each agent back to ground-truth replay with probability ``p_drop``.

    One uniform draw is consumed per agent in scenario order, including the
    ego when ``include_ego`` is False (it then stays controlled), so the
    stream position does not depend on that flag.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError("p_drop must lie in [0, 1]")
    draws = rng.random(len(scenario.agents))
    out = {}
    for a, u in zip(scenario.agents, draws):
        dropped = bool(u < p_drop) and (include_ego or not a.is_ego)
        out[a.id] = not dropped
    return ControlMask(out)


@dataclass
class Observation:
    """What a world model may see at a decision step: the scene up to ``step``.

    State arrays cover steps ``0..step`` of every rollout in the batch,
    shaped ``(K, step + 1, A, ...)``. No ground-truth future is reachable
    from here.
    """

    scenario_id: str
    agents: tuple[AgentMeta, ...]
    map: MapData
    dt: float
    history_len: int
    step: int
    signal_positions: np.ndarray  # (S, 2)
    signal_lanes: np.ndarray  # (S,)
    signal_history: np.ndarray  # (S, step + 1) integer codes
    position: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    valid: np.ndarray
    lengths: np.ndarray
    widths: np.ndarray

    @property
    def ego_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_ego)

    @property
    def current(self):
        """Current ``(position, heading, speed, valid)``, each shaped ``(K, A, ...)``."""
        return self.position[:, -1], self.heading[:, -1], self.speed[:, -1], self.valid[:, -1]

    @property
    def signals_now(self):
        return self.signal_positions, self.signal_lanes, self.signal_history[:, -1]


@runtime_checkable
class WorldModel(Protocol):
    """Joint policy/simulator: one action per controlled agent and rollout.

    ``act`` receives the observation, the ``(A,)`` boolean mask of agents it
    controls at this step and ``(K, A, noise_dim)`` standard normal draws; it
    returns ``(acceleration, yaw_rate)`` arrays shaped ``(K, A)``. Entries of
    uncontrolled agents are ignored.
    """

    name: str
    noise_dim: int
    thread_safe: bool

    def act(self, obs: Observation, controlled: np.ndarray, noise: np.ndarray): ...


@dataclass(frozen=True, eq=False)
class RolloutSet:
    """K simulated futures, arrays shaped ``(K, future_len, A, ...)``."""

    scenario_id: str
    mask: ControlMask
    k: int
    seed: int
    agent_ids: tuple[int, ...]
    position: np.ndarray
    heading: np.ndarray
    velocity: np.ndarray
    valid: np.ndarray

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocity, axis=-1)

    def index_of(self, agent_id: int) -> int:
        try:
            return self.agent_ids.index(agent_id)
        except ValueError:
            raise KeyError(f"agent {agent_id} missing from rollouts of {self.scenario_id}") from None

    def to_json(self) -> dict:
        def flat(a):
            return [float(x) for x in np.asarray(a, float).ravel()]

        k, t, n = self.valid.shape
        return {
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "mask": self.mask.to_json(),
            "K": self.k,
            "future_len": t,
            "agent_ids": list(self.agent_ids),
            "position": flat(self.position),
            "heading": flat(self.heading),
            "velocity": flat(self.velocity),
            "valid": [bool(x) for x in self.valid.ravel()],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RolloutSet":
        k, t, n = int(doc["K"]), int(doc["future_len"]), len(doc["agent_ids"])
        return cls(
            scenario_id=doc["scenario_id"],
            mask=ControlMask({int(a): bool(v) for a, v in doc["mask"].items()}),
            k=k,
            seed=int(doc["seed"]),
            agent_ids=tuple(int(a) for a in doc["agent_ids"]),
            position=np.array(doc["position"], float).reshape(k, t, n, 2),
            heading=np.array(doc["heading"], float).reshape(k, t, n),
            velocity=np.array(doc["velocity"], float).reshape(k, t, n, 2),
            valid=np.array(doc["valid"], bool).reshape(k, t, n),
        )


def dump_rollouts(rollouts: RolloutSet) -> bytes:
    return (json.dumps(rollouts.to_json(), separators=(",", ":")) + "\n").encode()


def load_rollouts(data: bytes | str) -> RolloutSet:
    return RolloutSet.from_json(json.loads(data))


def rollout_noise(seed: int, k: int, agent_ids, steps: int, dim: int) -> np.ndarray:
    """Standard normals shaped ``(k, steps, A, dim)``.

    Each ``(seed, rollout, agent id)`` triple owns an independent stream
    indexed by timestep, so the draws do not depend on batch size, rollout
    evaluation order or which other agents exist.
    """
    out = np.empty((k, steps, len(agent_ids), dim))
    for r in range(k):
        for j, aid in enumerate(agent_ids):
            gen = np.random.default_rng(np.random.SeedSequence([seed, r, int(aid)]))
            out[r, :, j] = gen.standard_normal((steps, dim))
    return out


_serial_lock = threading.Lock()


def rollout(scenario: Scenario, model: WorldModel, mask: ControlMask, k: int = DEFAULT_K,
            seed: int = 0, allow_reverse: bool = False) -> RolloutSet:
    """Simulate ``k`` futures of ``scenario`` from the end of its history.

    Controlled agents advance by unicycle integration of the model's
    clamped actions; uncontrolled agents copy the logged future verbatim.
    A controlled agent that is not valid at the last history step has no
    state to start from and stays invalid.
    """
    if k < 1:
        raise ValueError("K must be at least 1")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ctrl = mask.as_array(scenario)
    h, total, n = scenario.history_len, scenario.total_len, len(scenario.agents)
    now = scenario.current_step

    pos = np.broadcast_to(scenario.position, (k, total, n, 2)).copy()
    heading = np.broadcast_to(scenario.heading, (k, total, n)).copy()
    speed = np.broadcast_to(scenario.speed, (k, total, n)).copy()
    valid = np.broadcast_to(scenario.valid, (k, total, n)).copy()
    velocity = np.broadcast_to(scenario.velocity, (k, total, n, 2)).copy()

    live = ctrl & scenario.valid[now]
    if getattr(model, "ground_truth_replay", False):
        live = np.zeros(n, dtype=bool)
    else:
        valid[:, h:, ctrl] = False
        valid[:, h:, live] = True

    if live.any():
        noise = rollout_noise(seed, k, scenario.agent_ids, scenario.future_len, model.noise_dim)
        sig_pos = np.array([[s.position.x, s.position.y] for s in scenario.signals]).reshape(-1, 2)
        sig_lane = np.array([s.controlled_lane for s in scenario.signals], dtype=int)
        sig_codes = np.array([[SIGNAL_CODES[st.value] for st in s.states] for s in scenario.signals],
                             dtype=int).reshape(len(scenario.signals), total)
        serialize = not getattr(model, "thread_safe", False)
        for t in range(now, total - 1):
            obs = Observation(
                scenario_id=scenario.id, agents=scenario.agents, map=scenario.map, dt=scenario.dt,
                history_len=h, step=t, signal_positions=sig_pos, signal_lanes=sig_lane,
                signal_history=sig_codes[:, : t + 1], position=pos[:, : t + 1], heading=heading[:, : t + 1],
                speed=speed[:, : t + 1], valid=valid[:, : t + 1],
                lengths=scenario.lengths, widths=scenario.widths,
            )
            if serialize:
                with _serial_lock:
                    accel, yaw = model.act(obs, live, noise[:, t - now])
            else:
                accel, yaw = model.act(obs, live, noise[:, t - now])
            accel = np.asarray(accel, float)[:, live]
            yaw = np.asarray(yaw, float)[:, live]
            bad = ~(np.isfinite(accel) & np.isfinite(yaw))
            if bad.any():
                _, col = np.argwhere(bad)[0]
                aid = scenario.agent_ids[np.flatnonzero(live)[col]]
                raise RolloutError(f"model {model.name!r} returned a non-finite action for agent {aid} at timestep {t}")
            accel = np.clip(accel, -MAX_ACCEL, MAX_ACCEL)
            yaw = np.clip(yaw, -MAX_YAW_RATE, MAX_YAW_RATE)
            p, th, v = integrate(pos[:, t, live], heading[:, t, live], speed[:, t, live], accel, yaw,
                                 scenario.dt, allow_reverse)
            pos[:, t + 1, live] = p
            heading[:, t + 1, live] = th
            speed[:, t + 1, live] = v
        sl = np.s_[:, now + 1:, live]
        velocity[sl] = speed[sl][..., None] * np.stack([np.cos(heading[sl]), np.sin(heading[sl])], axis=-1)

    return RolloutSet(
        scenario_id=scenario.id,
        mask=mask,
        k=k,
        seed=seed,
        agent_ids=scenario.agent_ids,
        position=pos[:, h:],
        heading=heading[:, h:],
        velocity=velocity[:, h:],
        valid=valid[:, h:],
    )


def reconstruct_actions(scenario: Scenario, t: int, speed: np.ndarray, heading: np.ndarray,
                        horizon: float | None = None):
    """Action steering an agent from (speed, heading) back onto the logged track.

    With the default one-step horizon this is the inverse unicycle finite
    difference toward the logged state at ``t + 1``. A longer ``horizon``
    (seconds) keeps the logged action and closes the gap to the logged state
    at ``t`` over that time instead. Both are clamped to the action bounds.
    """
    dt = scenario.dt
    tau = dt if horizon is None else float(horizon)
    if not tau >= dt:
        raise ValueError("recovery horizon must be at least one timestep")
    log_accel = (scenario.speed[t + 1] - scenario.speed[t]) / dt
    log_yaw = wrap_angle(scenario.heading[t + 1] - scenario.heading[t]) / dt
    accel = log_accel + (scenario.speed[t] - speed) / tau
    yaw = log_yaw + wrap_angle(scenario.heading[t] - heading) / tau
    return np.clip(accel, -MAX_ACCEL, MAX_ACCEL), np.clip(yaw, -MAX_YAW_RATE, MAX_YAW_RATE)
