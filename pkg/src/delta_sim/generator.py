"""Deterministic synthetic scenario corpus.

Ground truth is produced by simulating the rule-based drivers in
:mod:`delta_sim.driver` with per-agent randomized parameters, integrated with
the same unicycle model the rollout engine uses, so stored velocities match
position increments exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import driver
from .geometry import PolylineSet
from .scenario import (
    AgentMeta,
    MapData,
    Scenario,
    SignalState,
    SignalTrack,
    Vec2,
    validate,
)

TEMPLATES = ("leader_follower_signal", "crossing_intersection", "lane_merge")

LANE_WIDTH = 3.7
ROAD_LENGTH = 400.0


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 1
    templates: tuple[str, ...] = ("leader_follower_signal",)
    dt: float = 0.1
    history_len: int = 11
    future_len: int = 80
    #: probability that a causal follower is also in the standard eval set
    follower_eval_prob: float = 0.5
    #: inclusive range of oncoming background vehicles per scenario
    background: tuple[int, int] = (0, 1)
    #: standard deviation of the logged drivers' per-step action noise
    accel_noise: float = 0.3
    yaw_noise: float = 0.02

    def check(self) -> None:
        if self.n < 1:
            raise ValueError("generator needs n >= 1 scenarios")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.history_len < 2 or self.future_len < 3:
            raise ValueError("history_len >= 2 and future_len >= 3 required")
        if not self.templates:
            raise ValueError("at least one template required")
        for t in self.templates:
            if t not in TEMPLATES:
                raise ValueError(f"unknown template {t!r}")
        lo, hi = self.background
        if lo < 0 or hi < lo:
            raise ValueError("invalid background range")
        if self.accel_noise < 0 or self.yaw_noise < 0:
            raise ValueError("action noise must be non-negative")


@dataclass
class _Build:
    """Mutable scratch state for one template instance."""

    road_edges: list
    lanes: list
    signal_pos: list = field(default_factory=list)
    signal_lane: list = field(default_factory=list)
    signal_states: list = field(default_factory=list)
    metas: list = field(default_factory=list)
    init: list = field(default_factory=list)  # (x, y, heading, speed)
    route: list = field(default_factory=list)
    params: list = field(default_factory=list)  # kwargs per agent
    hidden: list = field(default_factory=list)  # (observer, observed) pairs ignored

    def add(self, meta, x, y, heading, speed, lane, **params):
        self.metas.append(meta)
        self.init.append((x, y, heading, speed))
        self.route.append(lane)
        self.params.append(params)


def _phase(total, changes):
    """Signal state list from ``[(start_step, state), ...]``."""
    states = [SignalState.GREEN] * total
    for start, st in changes:
        for t in range(max(start, 0), total):
            states[t] = st
    return states


def _driver_params(rng, v0):
    return dict(
        desired_speed=v0,
        headway=rng.uniform(1.0, 1.6),
        min_gap=rng.uniform(2.0, 3.0),
        max_accel=rng.uniform(1.2, 2.0),
        comfort_decel=rng.uniform(2.0, 3.0),
        yellow_decel=4.5,
    )


def _vehicle_size(rng):
    return round(float(rng.uniform(4.2, 5.0)), 3), round(float(rng.uniform(1.8, 2.1)), 3)


def _two_way_road():
    half = LANE_WIDTH / 2
    edges = [
        np.array([[-ROAD_LENGTH / 2, -half], [ROAD_LENGTH, -half]]),
        np.array([[ROAD_LENGTH, half + LANE_WIDTH], [-ROAD_LENGTH / 2, half + LANE_WIDTH]]),
    ]
    lanes = [
        np.array([[-ROAD_LENGTH / 2, 0.0], [ROAD_LENGTH, 0.0]]),
        np.array([[ROAD_LENGTH, LANE_WIDTH], [-ROAD_LENGTH / 2, LANE_WIDTH]]),
    ]
    return edges, lanes


def _add_background(b: _Build, rng, cfg: GeneratorConfig, next_id, y_lane, lane_idx, heading, x_range):
    n_bg = int(rng.integers(cfg.background[0], cfg.background[1] + 1))
    x = float(rng.uniform(*x_range))
    for _ in range(n_bg):
        length, width = _vehicle_size(rng)
        v0 = float(rng.uniform(9.0, 14.0))
        x += float(rng.uniform(35.0, 60.0))
        b.add(AgentMeta(next_id, length=length, width=width, in_eval_set=True),
              x, y_lane, heading, v0, lane_idx, **_driver_params(rng, v0))
        next_id += 1
    return next_id


def _leader_follower_signal(rng, cfg: GeneratorConfig) -> _Build:
    total = cfg.history_len + cfg.future_len
    edges, lanes = _two_way_road()
    b = _Build(edges, lanes)
    stop_x = 0.0
    t_yellow = cfg.history_len + int(rng.integers(3, 14))
    yellow_steps = int(round(4.5 / cfg.dt))
    b.signal_pos.append((stop_x, 0.0))
    b.signal_lane.append(0)
    b.signal_states.append(_phase(total, [(t_yellow, SignalState.YELLOW), (t_yellow + yellow_steps, SignalState.RED)]))

    v0 = float(rng.uniform(11.0, 14.0))
    ego_len, ego_w = _vehicle_size(rng)
    # ego front bumper is this far from the line when the light turns yellow
    d_yellow = float(rng.uniform(25.0, 38.0))
    x_ego = stop_x - d_yellow - ego_len / 2 - v0 * t_yellow * cfg.dt
    ego_params = _driver_params(rng, v0)
    b.add(AgentMeta(1, length=ego_len, width=ego_w, is_ego=True, in_eval_set=True),
          x_ego, 0.0, 0.0, v0, 0, **ego_params)

    f_len, f_w = _vehicle_size(rng)
    f_params = _driver_params(rng, v0 * float(rng.uniform(1.05, 1.2)))
    gap = f_params["min_gap"] + v0 * f_params["headway"]
    x_f = x_ego - gap - (ego_len + f_len) / 2
    follower_eval = bool(rng.random() < cfg.follower_eval_prob)
    b.add(AgentMeta(2, length=f_len, width=f_w, in_eval_set=follower_eval, is_causal=True),
          x_f, 0.0, 0.0, v0, 0, **f_params)

    _add_background(b, rng, cfg, 3, LANE_WIDTH, 1, np.pi, (stop_x + 40.0, stop_x + 160.0))
    return b


def _crossing_intersection(rng, cfg: GeneratorConfig) -> _Build:
    total = cfg.history_len + cfg.future_len
    w, L = LANE_WIDTH, ROAD_LENGTH / 2
    h = w / 2
    edges = [
        np.array([[w, -L], [w, -w], [L, -w]]),
        np.array([[L, w], [w, w], [w, L]]),
        np.array([[-w, L], [-w, w], [-L, w]]),
        np.array([[-L, -w], [-w, -w], [-w, -L]]),
    ]
    lanes = [
        np.array([[-L, -h], [L, -h]]),
        np.array([[L, h], [-L, h]]),
        np.array([[h, -L], [h, L]]),
        np.array([[-h, L], [-h, -L]]),
    ]
    b = _Build(edges, lanes)
    line = w + 1.0
    t_yellow = cfg.history_len + int(rng.integers(15, 60))
    yellow_steps = int(round(3.5 / cfg.dt))
    t_red = t_yellow + yellow_steps
    t_cross_green = t_red + 10
    ew = _phase(total, [(t_yellow, SignalState.YELLOW), (t_red, SignalState.RED)])
    ns = _phase(total, [(0, SignalState.RED), (t_cross_green, SignalState.GREEN)])
    for pos, lane, states in (((-line, -h), 0, ew), ((line, h), 1, ew), ((h, -line), 2, ns), ((-h, line), 3, ns)):
        b.signal_pos.append(pos)
        b.signal_lane.append(lane)
        b.signal_states.append(states)

    v0 = float(rng.uniform(9.0, 13.0))
    ego_len, ego_w = _vehicle_size(rng)
    d0 = float(rng.uniform(30.0, 90.0))
    x_ego = -line - d0 - v0 * cfg.history_len * cfg.dt
    b.add(AgentMeta(1, length=ego_len, width=ego_w, is_ego=True, in_eval_set=True),
          x_ego, -h, 0.0, v0, 0, **_driver_params(rng, v0))

    f_len, f_w = _vehicle_size(rng)
    f_params = _driver_params(rng, v0 * float(rng.uniform(1.05, 1.2)))
    gap = f_params["min_gap"] + v0 * f_params["headway"]
    b.add(AgentMeta(2, length=f_len, width=f_w, in_eval_set=bool(rng.random() < cfg.follower_eval_prob), is_causal=True),
          x_ego - gap - (ego_len + f_len) / 2, -h, 0.0, v0, 0, **f_params)

    c_len, c_w = _vehicle_size(rng)
    vc = float(rng.uniform(7.0, 11.0))
    y_c = -line - float(rng.uniform(15.0, 50.0))
    b.add(AgentMeta(3, length=c_len, width=c_w, in_eval_set=True),
          h, y_c, np.pi / 2, vc, 2, **_driver_params(rng, vc))

    _add_background(b, rng, cfg, 4, h, 1, np.pi, (line + 30.0, line + 120.0))
    return b


def _lane_merge(rng, cfg: GeneratorConfig) -> _Build:
    L = ROAD_LENGTH
    w, h = LANE_WIDTH, LANE_WIDTH / 2
    taper_start, taper_end = 0.0, 40.0
    edges = [
        np.array([[L, h], [-L / 2, h]]),
        np.array([[-L / 2, -w - h], [taper_start, -w - h], [taper_end, -h], [L, -h]]),
    ]
    lanes = [
        np.array([[-L / 2, 0.0], [L, 0.0]]),
        np.array([[-L / 2, -w], [taper_start, -w], [taper_end, 0.0], [L, 0.0]]),
    ]
    b = _Build(edges, lanes)

    v0 = float(rng.uniform(11.0, 15.0))
    ego_len, ego_w = _vehicle_size(rng)
    x_ego = taper_start - float(rng.uniform(40.0, 80.0)) - v0 * cfg.history_len * cfg.dt
    b.add(AgentMeta(1, length=ego_len, width=ego_w, is_ego=True, in_eval_set=True),
          x_ego, 0.0, 0.0, v0, 0, **_driver_params(rng, v0))

    m_len, m_w = _vehicle_size(rng)
    vm = v0 * float(rng.uniform(0.75, 0.95))
    x_m = x_ego + float(rng.uniform(5.0, 25.0))
    b.add(AgentMeta(2, length=m_len, width=m_w, in_eval_set=bool(rng.random() < cfg.follower_eval_prob), is_causal=True),
          x_m, -w, 0.0, vm, 1, **_driver_params(rng, vm))

    f_len, f_w = _vehicle_size(rng)
    f_params = _driver_params(rng, v0 * float(rng.uniform(1.0, 1.15)))
    gap = f_params["min_gap"] + v0 * f_params["headway"]
    b.add(AgentMeta(3, length=f_len, width=f_w, in_eval_set=True),
          x_ego - gap - (ego_len + f_len) / 2, 0.0, 0.0, v0, 0, **f_params)
    return b


_BUILDERS = {
    "leader_follower_signal": _leader_follower_signal,
    "crossing_intersection": _crossing_intersection,
    "lane_merge": _lane_merge,
}


def _simulate(b: _Build, cfg: GeneratorConfig, rng: np.random.Generator):
    total = cfg.history_len + cfg.future_len
    n = len(b.metas)
    lengths = np.array([m.length for m in b.metas])
    widths = np.array([m.width for m in b.metas])
    params = driver.DriverParams(**{
        k: np.array([p[k] for p in b.params], dtype=float) for k in b.params[0]
    })
    lane_sets = [PolylineSet([lane]) for lane in b.lanes]
    sees = np.ones((n, n), dtype=bool)
    for i, j in b.hidden:
        sees[i, j] = False
    codes = [[driver.SIGNAL_CODES[s.value] for s in states] for states in b.signal_states]

    pos = np.zeros((total, n, 2))
    heading = np.zeros((total, n))
    speed = np.zeros((total, n))
    init = np.array(b.init, dtype=float)
    pos[0] = init[:, :2]
    heading[0] = init[:, 2]
    speed[0] = init[:, 3]
    valid = np.ones(n, dtype=bool)
    # logged drivers are not perfect controllers
    noise = rng.standard_normal((total - 1, n, 2)) * [cfg.accel_noise, cfg.yaw_noise]
    for t in range(total - 1):
        signals = (b.signal_pos, b.signal_lane, [c[t] for c in codes])
        accel, yaw = driver.drive(pos[t], heading[t], speed[t], valid, lengths, widths, params,
                                  b.route, lane_sets, signals, sees)
        accel, yaw = driver.clamp_action(accel + noise[t, :, 0], yaw + noise[t, :, 1])
        pos[t + 1], heading[t + 1], speed[t + 1] = driver.integrate(
            pos[t], heading[t], speed[t], accel, yaw, cfg.dt)
    heading = driver.wrap_angle(heading)
    velocity = speed[..., None] * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    return pos, heading, velocity


def generate_scenario(template: str, rng: np.random.Generator, cfg: GeneratorConfig, scenario_id: str) -> Scenario:
    b = _BUILDERS[template](rng, cfg)
    pos, heading, velocity = _simulate(b, cfg, rng)
    total = cfg.history_len + cfg.future_len
    scenario = Scenario(
        id=scenario_id,
        dt=cfg.dt,
        history_len=cfg.history_len,
        future_len=cfg.future_len,
        map=MapData(tuple(b.road_edges), tuple(b.lanes)),
        signals=tuple(
            SignalTrack(Vec2(float(p[0]), float(p[1])), int(lane), tuple(states))
            for p, lane, states in zip(b.signal_pos, b.signal_lane, b.signal_states)
        ),
        agents=tuple(b.metas),
        position=pos,
        heading=heading,
        velocity=velocity,
        valid=np.ones((total, len(b.metas)), dtype=bool),
    )
    return validate(scenario)


def generate_corpus(config: GeneratorConfig, seed: int) -> list[Scenario]:
    """Generate ``config.n`` scenarios, cycling through the configured templates.

    Scenario ``i`` draws from its own seed sequence ``(seed, i)``, so the
    corpus is a pure function of ``(config, seed)`` and any prefix of a larger
    corpus equals the smaller corpus.
    """
    config.check()
    out = []
    for i in range(config.n):
        template = config.templates[i % len(config.templates)]
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        out.append(generate_scenario(template, rng, config, f"{template}-s{seed}-{i:05d}"))
    return out
