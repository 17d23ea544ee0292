"""Rule-based driving primitives shared by the corpus generator and scripted models.

Everything here works on batched state arrays shaped ``(K, A, ...)`` where K
is the rollout batch and A the number of agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PolylineSet, box_axes, wrap_angle

MAX_ACCEL = 10.0
MAX_YAW_RATE = 2.0

GREEN, YELLOW, RED, UNKNOWN = 0, 1, 2, 3
SIGNAL_CODES = {"green": GREEN, "yellow": YELLOW, "red": RED, "unknown": UNKNOWN}

#: Deceleration an agent accepts to stop for a red light.
EMERGENCY_DECEL = 8.0


@dataclass
class DriverParams:
    """Per-agent IDM and signal-compliance parameters, each shaped ``(A,)``."""

    desired_speed: np.ndarray
    headway: np.ndarray
    min_gap: np.ndarray
    max_accel: np.ndarray
    comfort_decel: np.ndarray
    yellow_decel: np.ndarray

    @classmethod
    def uniform(cls, n: int, desired_speed, headway=1.2, min_gap=2.0, max_accel=1.5,
                comfort_decel=2.0, yellow_decel=4.5) -> "DriverParams":
        def full(x):
            return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()

        return cls(full(desired_speed), full(headway), full(min_gap), full(max_accel),
                   full(comfort_decel), full(yellow_decel))


def corridor_geometry(pos, heading, vel, valid, lengths, widths):
    """Pairwise forward-corridor quantities from every subject i to every other agent j.

    Returns ``(in_corridor, gap, closing)`` each shaped ``(..., A, A)``:
    bumper-to-bumper longitudinal gap along the subject heading and closing
    speed (subject speed minus the other's velocity projected on that heading).
    """
    lon_axis, lat_axis = box_axes(heading)  # (..., A, 2)
    rel = pos[..., None, :, :] - pos[..., :, None, :]  # (..., i, j, 2)
    lon = np.einsum("...ijk,...ik->...ij", rel, lon_axis)
    lat = np.einsum("...ijk,...ik->...ij", rel, lat_axis)
    half_w = 0.5 * (widths[:, None] + widths[None, :])
    half_l = 0.5 * (lengths[:, None] + lengths[None, :])
    n = pos.shape[-2]
    pair_valid = valid[..., :, None] & valid[..., None, :] & ~np.eye(n, dtype=bool)
    in_corridor = pair_valid & (lon > 0) & (np.abs(lat) < half_w)
    gap = lon - half_l
    own = np.einsum("...ik,...ik->...i", vel, lon_axis)
    other = np.einsum("...jk,...ik->...ij", vel, lon_axis)
    closing = own[..., :, None] - other
    return in_corridor, gap, closing


def nearest_lead(pos, heading, vel, valid, lengths, widths, sees=None):
    """Gap and closing speed to the nearest agent ahead in the corridor.

    ``sees`` is an optional ``(A, A)`` mask; ``sees[i, j]`` false hides agent
    j from agent i. Missing leads give ``gap = inf`` and ``closing = 0``.
    """
    in_corr, gap, closing = corridor_geometry(pos, heading, vel, valid, lengths, widths)
    if sees is not None:
        in_corr = in_corr & sees
    masked = np.where(in_corr, gap, np.inf)
    idx = np.argmin(masked, axis=-1)
    lead_gap = np.take_along_axis(masked, idx[..., None], -1)[..., 0]
    lead_closing = np.take_along_axis(closing, idx[..., None], -1)[..., 0]
    has = np.isfinite(lead_gap)
    return lead_gap, np.where(has, lead_closing, 0.0), np.where(has, idx, -1)


def signal_lookup(pos, heading, lanes, signal_pos, signal_lane, signal_state):
    """Distance ahead to the controlling stop line and its state for each agent.

    ``lanes`` gives the lane index each agent drives in, shaped like ``pos[..., 0]``.
    Returns ``(distance, state)``; agents without a signal ahead get
    ``(inf, GREEN)``.
    """
    dist = np.full(pos.shape[:-1], np.inf)
    state = np.full(pos.shape[:-1], GREEN)
    if len(signal_pos) == 0:
        return dist, state
    lon_axis, _ = box_axes(heading)
    for sp, lane, code in zip(signal_pos, signal_lane, signal_state):
        ahead = np.sum((np.asarray(sp) - pos) * lon_axis, -1)
        hit = (lanes == lane) & (ahead > 0) & (ahead < dist)
        dist = np.where(hit, ahead, dist)
        state = np.where(hit, code, state)
    return dist, state


def idm_accel(speed, params: DriverParams, gap, closing):
    """Intelligent driver model acceleration; ``gap = inf`` is free road."""
    v0 = np.maximum(params.desired_speed, 0.1)
    a, b = params.max_accel, params.comfort_decel
    free = 1.0 - (speed / v0) ** 4
    s_star = params.min_gap + np.maximum(0.0, speed * params.headway + speed * closing / (2.0 * np.sqrt(a * b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        inter = np.where(np.isfinite(gap), (s_star / np.maximum(gap, 0.1)) ** 2, 0.0)
    return a * (free - inter)


def stop_line_gap(speed, length, dist, state, yellow_decel, obeys_yellow=True, obeys_red=True):
    """Effective gap to a stop line the agent decides to stop for (``inf`` if it goes).

    Yellow: stop when the deceleration needed to halt at the line is within
    ``yellow_decel``. Red: stop unless it would take more than EMERGENCY_DECEL.
    """
    front = dist - 0.5 * length
    with np.errstate(divide="ignore", invalid="ignore"):
        needed = np.where(front > 0.5, speed**2 / (2.0 * front), np.inf)
    stop_y = obeys_yellow & (state == YELLOW) & (needed <= yellow_decel)
    stop_r = obeys_red & (state == RED) & (needed <= EMERGENCY_DECEL)
    stop = (stop_y | stop_r) & (front > 0)
    return np.where(stop, front, np.inf)


def lane_tracking_yaw(pos, heading, speed, lane_sets, route, gain=1.0, tau=0.5):
    """Heading-plus-crosstrack steering toward each agent's route polyline."""
    yaw = np.zeros(pos.shape[:-1])
    for a, lane in enumerate(route):
        if lane < 0:
            continue
        offset, direction, _ = lane_sets[lane].lateral_offset(pos[..., a, :])
        lane_heading = np.arctan2(direction[..., 1], direction[..., 0])
        err = wrap_angle(heading[..., a] - lane_heading)
        yaw[..., a] = -(err + np.arctan2(gain * offset, speed[..., a] + 1.0)) / tau
    return yaw


def clamp_action(accel, yaw):
    return np.clip(accel, -MAX_ACCEL, MAX_ACCEL), np.clip(yaw, -MAX_YAW_RATE, MAX_YAW_RATE)


def integrate(pos, heading, speed, accel, yaw, dt, allow_reverse=False):
    """One unicycle step: position moves with the current speed and heading."""
    lon, _ = box_axes(heading)
    new_pos = pos + (speed * dt)[..., None] * lon
    new_heading = wrap_angle(heading + yaw * dt)
    new_speed = speed + accel * dt
    if not allow_reverse:
        new_speed = np.maximum(new_speed, 0.0)
    return new_pos, new_heading, new_speed


def drive(pos, heading, speed, valid, lengths, widths, params: DriverParams, route,
          lane_sets, signals, sees=None, obeys_yellow=True, obeys_red=True):
    """Rule-based action for every agent: IDM behind leads and stop lines, lane tracking.

    ``signals`` is ``(positions, lanes, state codes)`` at the current step;
    ``obeys_yellow`` and ``obeys_red`` may be per-agent masks.
    """
    lon, _ = box_axes(heading)
    vel = speed[..., None] * lon
    gap, closing, _ = nearest_lead(pos, heading, vel, valid, lengths, widths, sees)
    accel = idm_accel(speed, params, gap, closing)
    lanes = np.broadcast_to(np.asarray(route), speed.shape)
    dist, state = signal_lookup(pos, heading, lanes, *signals)
    line_gap = stop_line_gap(speed, lengths, dist, state, params.yellow_decel, obeys_yellow, obeys_red)
    accel = np.minimum(accel, idm_accel(speed, params, line_gap, speed))
    yaw = lane_tracking_yaw(pos, heading, speed, lane_sets, route)
    accel = np.maximum(accel, -9.0)
    return clamp_action(accel, yaw)
