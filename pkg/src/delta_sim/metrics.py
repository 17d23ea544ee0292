"""Per-agent, per-timestep realism metric series and minADE."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .driver import corridor_geometry
from .geometry import COLLISION_TOLERANCE, box_distance, box_penetration, wrap_angle
from .rollout import RolloutSet
from .scenario import MapData, Scenario

METRICS = (
    "speed",
    "accel",
    "ang_speed",
    "ang_accel",
    "dist_nearest",
    "collision",
    "ttc",
    "dist_road_edge",
    "offroad",
)
BOOLEAN_METRICS = frozenset({"collision", "offroad"})

D_CAP = 40.0
TTC_MAX = 5.0
#: closing speeds at or below this count as not approaching
MIN_CLOSING = 0.1


@dataclass(frozen=True)
class ComponentSeries:
    """Values and validity of one metric, shaped ``(..., T, A)``."""

    metric: str
    values: np.ndarray
    valid: np.ndarray


def _forward(x, ok, axis):
    """Forward differences along ``axis``; the tail repeats the last real value."""
    n = x.shape[axis]
    if n < 2:
        return np.zeros_like(x), np.zeros_like(ok)
    d = np.diff(x, axis=axis)
    v = np.take(ok, range(1, n), axis) & np.take(ok, range(n - 1), axis)
    last = np.take(d, [-1], axis)
    last_v = np.take(v, [-1], axis)
    return np.concatenate([d, last], axis), np.concatenate([v, last_v], axis)


def _kinematics(position, heading, valid, dt):
    """Speed, accel, angular speed and angular accel along axis -2 (time) of ``(..., T, A)``."""
    t_axis = valid.ndim - 2
    n = valid.shape[t_axis]
    disp, v1 = _forward(position, valid[..., None], t_axis)
    speed = np.linalg.norm(disp, axis=-1) / dt
    v1 = v1[..., 0]
    dh, _ = _forward(heading, valid, t_axis)
    ang_speed = wrap_angle(dh) / dt
    # second differences use the real first differences only (T - 1 of them)
    real = [slice(None)] * valid.ndim
    real[t_axis] = slice(0, max(n - 1, 0))
    real = tuple(real)

    def second(x):
        d, ok = _forward(x[real], v1[real], t_axis)
        if n < 3:
            return np.zeros_like(x), np.zeros_like(v1)
        pad = np.take(d, [-1], t_axis)
        pad_ok = np.take(ok, [-1], t_axis)
        return np.concatenate([d, pad], t_axis) / dt, np.concatenate([ok, pad_ok], t_axis)

    accel, v2 = second(speed)
    ang_accel, _ = second(ang_speed)
    return {
        "speed": ComponentSeries("speed", speed, v1),
        "accel": ComponentSeries("accel", accel, v2),
        "ang_speed": ComponentSeries("ang_speed", ang_speed, v1),
        "ang_accel": ComponentSeries("ang_accel", ang_accel, v2),
    }


def kinematic_series(position, heading, valid, dt: float) -> dict[str, ComponentSeries]:
    """Speed, acceleration, angular speed and angular acceleration of one track.

    Inputs are a single agent's track: ``position`` ``(T, 2)``, ``heading`` and
    ``valid`` ``(T,)``. Values come from finite differences of positions and
    headings (forward, with the last step(s) repeating the previous value).
    """
    out = _kinematics(np.asarray(position, float)[:, None], np.asarray(heading, float)[:, None],
                      np.asarray(valid, bool)[:, None], dt)
    return {k: ComponentSeries(k, s.values[:, 0], s.valid[:, 0]) for k, s in out.items()}


def _pair_mask(valid):
    n = valid.shape[-1]
    return valid[..., :, None] & valid[..., None, :] & ~np.eye(n, dtype=bool)


def _pairwise(position, heading, lengths, widths):
    p = position
    h = heading
    return (p[..., :, None, :], h[..., :, None], lengths[:, None], widths[:, None],
            p[..., None, :, :], h[..., None, :], lengths[None, :], widths[None, :])


def nearest_distance_series(position, heading, valid, lengths, widths, d_cap: float = D_CAP):
    pairs = _pair_mask(valid)
    # box distance >= center distance minus both half-diagonals, so far pairs are capped anyway
    half_diag = 0.5 * np.hypot(lengths, widths)
    centre = np.linalg.norm(position[..., :, None, :] - position[..., None, :, :], axis=-1)
    near = pairs & (centre < d_cap + half_diag[:, None] + half_diag[None, :])
    dist = np.full(pairs.shape, np.inf)
    if near.any():
        shape = near.shape
        idx = np.nonzero(near)
        pi = np.broadcast_to(position[..., :, None, :], shape + (2,))[idx]
        pj = np.broadcast_to(position[..., None, :, :], shape + (2,))[idx]
        hi = np.broadcast_to(heading[..., :, None], shape)[idx]
        hj = np.broadcast_to(heading[..., None, :], shape)[idx]
        li = np.broadcast_to(lengths[:, None], shape)[idx]
        lj = np.broadcast_to(lengths[None, :], shape)[idx]
        wi = np.broadcast_to(widths[:, None], shape)[idx]
        wj = np.broadcast_to(widths[None, :], shape)[idx]
        dist[idx] = box_distance(pi, hi, li, wi, pj, hj, lj, wj)
    return np.minimum(dist.min(axis=-1), d_cap)


def collision_series(position, heading, valid, lengths, widths, tol: float = COLLISION_TOLERANCE):
    """1 where an agent's box penetrates another valid agent's box by more than ``tol``."""
    pairs = _pair_mask(valid)
    depth = box_penetration(*_pairwise(position, heading, lengths, widths))
    return (pairs & (depth > tol)).any(axis=-1).astype(float)


def ttc_series(position, heading, velocity, valid, lengths, widths, ttc_max: float = TTC_MAX):
    """Time to collision with agents in the forward corridor, clamped to ``[0, ttc_max]``."""
    in_corr, gap, closing = corridor_geometry(position, heading, velocity, valid, lengths, widths)
    approaching = in_corr & (closing > MIN_CLOSING)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(approaching, np.maximum(gap, 0.0) / np.where(approaching, closing, 1.0), np.inf)
    return np.clip(t.min(axis=-1), 0.0, ttc_max)


def road_edge_distance(position, map_data: MapData) -> np.ndarray:
    """Signed distance to the nearest road edge: negative on the drivable side."""
    if not map_data.road_edges:
        raise ValueError("no road edges")
    return map_data.edge_set.signed_distance(position)


def nearest_object_distance(position, heading, valid, lengths, widths, subject: int, d_cap: float = D_CAP) -> float:
    """Box-to-box distance from agent index ``subject`` to its nearest valid neighbour at one instant."""
    position = np.asarray(position, float)
    others = np.asarray(valid, bool).copy()
    others[subject] = False
    if not others.any():
        return float(d_cap)
    d = box_distance(position[subject], heading[subject], lengths[subject], widths[subject],
                     position[others], np.asarray(heading)[others], np.asarray(lengths)[others],
                     np.asarray(widths)[others])
    return float(min(d.min(), d_cap))


def time_to_collision(position, heading, velocity, valid, lengths, widths, subject: int,
                      ttc_max: float = TTC_MAX) -> float:
    ttc = ttc_series(np.asarray(position, float), np.asarray(heading, float), np.asarray(velocity, float),
                     np.asarray(valid, bool), np.asarray(lengths, float), np.asarray(widths, float), ttc_max)
    return float(ttc[subject])


def compute_series(position, heading, velocity, valid, scenario: Scenario,
                   d_cap: float = D_CAP, ttc_max: float = TTC_MAX) -> dict[str, ComponentSeries]:
    """All nine metric series for state arrays shaped ``(..., T, A, ...)``."""
    lengths, widths = scenario.lengths, scenario.widths
    out = _kinematics(position, heading, valid, scenario.dt)
    out["dist_nearest"] = ComponentSeries(
        "dist_nearest", nearest_distance_series(position, heading, valid, lengths, widths, d_cap), valid)
    out["collision"] = ComponentSeries("collision", collision_series(position, heading, valid, lengths, widths), valid)
    out["ttc"] = ComponentSeries("ttc", ttc_series(position, heading, velocity, valid, lengths, widths, ttc_max), valid)
    edge = road_edge_distance(position, scenario.map)
    out["dist_road_edge"] = ComponentSeries("dist_road_edge", edge, valid)
    out["offroad"] = ComponentSeries("offroad", (edge > 0).astype(float), valid)
    return {m: out[m] for m in METRICS}


def rollout_series(rollouts: RolloutSet, scenario: Scenario, **caps) -> dict[str, ComponentSeries]:
    """Series over the simulated futures, shaped ``(K, future_len, A)``."""
    return compute_series(rollouts.position, rollouts.heading, rollouts.velocity, rollouts.valid, scenario, **caps)


def ground_truth_series(scenario: Scenario, **caps) -> dict[str, ComponentSeries]:
    """Series over the logged future, shaped ``(1, future_len, A)``."""
    h = scenario.history_len
    return compute_series(scenario.position[None, h:], scenario.heading[None, h:], scenario.velocity[None, h:],
                          scenario.valid[None, h:], scenario, **caps)


def min_ade(rollouts: RolloutSet, scenario: Scenario, domain) -> float:
    """Mean over ``domain`` agents of the best-of-K average displacement error."""
    domain = list(domain)
    if not domain:
        raise ValueError("minADE needs a non-empty domain")
    h = scenario.history_len
    per_agent = []
    for aid in domain:
        r = rollouts.index_of(aid)
        g = scenario.index_of(aid)
        ok = scenario.valid[h:, g]
        if not ok.any():
            continue
        err = np.linalg.norm(rollouts.position[:, ok, r] - scenario.position[h:][ok, g], axis=-1)
        per_agent.append(err.mean(axis=1).min())
    if not per_agent:
        raise ValueError("no domain agent has a valid future")
    return float(np.mean(per_agent))


def series_to_csv(scenario_id: str, series: dict[str, ComponentSeries], agent_ids, t0: int,
                  ground_truth: bool = False) -> str:
    """Rows ``scenario_id, rollout_k, agent_id, t, metric, value, valid``.

    Ground-truth series are written with ``rollout_k = -1``.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "rollout_k", "agent_id", "t", "metric", "value", "valid"])
    for m in METRICS:
        s = series[m]
        k_n, t_n, a_n = s.values.shape
        for k in range(k_n):
            for t in range(t_n):
                for a in range(a_n):
                    w.writerow([scenario_id, -1 if ground_truth else k, agent_ids[a], t0 + t, m,
                                repr(float(s.values[k, t, a])), int(s.valid[k, t, a])])
    return buf.getvalue()
