"""Linear-Gaussian toy world model with closed-loop training and control dropout.

Every agent's action is a linear function of seven observed features plus
Gaussian noise. Training rolls the current model out in closed loop, then
regresses, at every visited state, onto the action that would bring the
agent back to its logged state at the next step. Control dropout hands a
random subset of agents back to log replay during those training rollouts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import driver
from .geometry import PolylineSet, wrap_angle
from .rollout import Action, Observation, reconstruct_actions, rollout, sample_dropout_mask
from .scenario import Scenario

log = logging.getLogger(__name__)

FEATURES = ("speed", "gap", "closing", "stop_flag", "lateral_offset", "heading_error", "bias")
N_FEATURES = len(FEATURES)
GAP_CAP = 40.0
STOP_FLAG_RANGE = 30.0
#: typical magnitude of each feature, used to regularize the preconditioner
FEATURE_SCALE = np.array([10.0, 40.0, 5.0, 1.0, 1.0, 0.1, 1.0])


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    accel_weights: np.ndarray
    yaw_weights: np.ndarray
    sigma_accel: float = 0.0
    sigma_yaw: float = 0.0

    def __post_init__(self):
        for name in ("accel_weights", "yaw_weights"):
            w = np.array(getattr(self, name), dtype=float)
            if w.shape != (N_FEATURES,) or not np.all(np.isfinite(w)):
                raise ValueError(f"{name} must be {N_FEATURES} finite numbers")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        if not (self.sigma_accel >= 0 and self.sigma_yaw >= 0):
            raise ValueError("noise scales must be non-negative")

    @classmethod
    def zeros(cls) -> "PolicyParams":
        return cls(np.zeros(N_FEATURES), np.zeros(N_FEATURES))

    @property
    def weights(self) -> np.ndarray:
        """``(7, 2)`` matrix: accel column, yaw column."""
        return np.stack([self.accel_weights, self.yaw_weights], axis=1)

    def to_json(self) -> dict:
        return {
            "features": list(FEATURES),
            "accel_weights": [float(x) for x in self.accel_weights],
            "yaw_weights": [float(x) for x in self.yaw_weights],
            "sigma_accel": float(self.sigma_accel),
            "sigma_yaw": float(self.sigma_yaw),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyParams":
        if "features" in doc and tuple(doc["features"]) != FEATURES:
            raise ValueError("params file was written for a different feature set")
        return cls(np.array(doc["accel_weights"], float), np.array(doc["yaw_weights"], float),
                   float(doc["sigma_accel"]), float(doc["sigma_yaw"]))


@dataclass(frozen=True)
class TrainConfig:
    p_drop: float = 0.0
    epochs: int = 10
    learning_rate: float = 0.02
    k_train: int = 2
    seed: int = 0
    #: resample dropout masks for every (scenario, epoch); False keeps one mask per scenario
    resample_masks: bool = True
    #: seconds over which target actions close the gap to the logged state (dt = one step)
    recovery_horizon: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.k_train < 1:
            raise ValueError("k_train must be at least 1")
        if not self.recovery_horizon > 0:
            raise ValueError("recovery horizon must be positive")


def _lane_sets(lanes) -> list[PolylineSet]:
    return [PolylineSet([lane]) for lane in lanes]


def lane_context(pos, heading, lane_sets):
    """Lane index, signed lateral offset and heading error for each agent.

    The lane is the closest one whose direction is within 90 degrees of the
    agent's heading (the closest overall when none is). Without lanes the
    index is -1 and both offsets are zero.
    """
    shape = np.shape(heading)
    if not lane_sets:
        return np.full(shape, -1), np.zeros(shape), np.zeros(shape)
    best = np.full(shape, np.inf)
    lane = np.full(shape, -1)
    offset = np.zeros(shape)
    err = np.zeros(shape)
    for j, ls in enumerate(lane_sets):
        off, d, _ = ls.lateral_offset(pos)
        e = wrap_angle(heading - np.arctan2(d[..., 1], d[..., 0]))
        # wrong-way lanes rank behind every aligned lane
        cost = np.abs(off) + np.where(np.abs(e) > np.pi / 2, 1e6, 0.0)
        take = cost < best
        best = np.where(take, cost, best)
        lane = np.where(take, j, lane)
        offset = np.where(take, off, offset)
        err = np.where(take, e, err)
    return lane, offset, err


def features_from_state(pos, heading, speed, valid, lengths, widths, lane_sets, signals) -> np.ndarray:
    """Feature array shaped ``(..., A, 7)`` from the current state of a batch."""
    vel = speed[..., None] * np.stack([np.cos(heading), np.sin(heading)], -1)
    gap, closing, _ = driver.nearest_lead(pos, heading, vel, valid, lengths, widths)
    has_lead = np.isfinite(gap)
    gap = np.where(has_lead, np.minimum(gap, GAP_CAP), GAP_CAP)
    closing = np.where(has_lead, closing, 0.0)
    lane, offset, err = lane_context(pos, heading, lane_sets)
    sig_pos, sig_lane, sig_state = signals
    dist, state = driver.signal_lookup(pos, heading, lane, sig_pos, sig_lane, sig_state)
    stop = ((dist < STOP_FLAG_RANGE) & ((state == driver.YELLOW) | (state == driver.RED))).astype(float)
    return np.stack([speed, gap, closing, stop, offset, err, np.ones_like(speed)], axis=-1)


def extract_features(obs: Observation, agent_id: int | None = None, lane_sets=None) -> np.ndarray:
    """Features of every agent in every rollout ``(K, A, 7)``, or of one agent ``(K, 7)``.

    Only the current step of the observation is used.
    """
    lane_sets = lane_sets if lane_sets is not None else _lane_sets(obs.map.lane_centers)
    pos, heading, speed, valid = obs.current
    f = features_from_state(pos, heading, speed, valid, obs.lengths, obs.widths, lane_sets, obs.signals_now)
    if agent_id is None:
        return f
    idx = [a.id for a in obs.agents].index(agent_id)
    return f[:, idx]


def act(params: PolicyParams, features, rng: np.random.Generator | None = None) -> Action:
    """Sample one clamped action for a single feature vector."""
    f = np.asarray(features, float)
    accel = float(params.accel_weights @ f)
    yaw = float(params.yaw_weights @ f)
    if rng is not None:
        accel += params.sigma_accel * rng.standard_normal()
        yaw += params.sigma_yaw * rng.standard_normal()
    return Action.clamped(accel, yaw)


class LinearPolicyModel:
    """World model driving every controlled agent with the linear-Gaussian policy."""

    name = "toy"
    noise_dim = 2
    thread_safe = True

    def __init__(self, params: PolicyParams):
        self.params = params
        # holds the map itself so a recycled id() can never alias a new map
        self._lanes: tuple[object, list[PolylineSet]] | None = None

    def lane_sets(self, obs: Observation) -> list[PolylineSet]:
        if self._lanes is None or self._lanes[0] is not obs.map:
            self._lanes = (obs.map, _lane_sets(obs.map.lane_centers))
        return self._lanes[1]

    def __getstate__(self):
        return {"params": self.params, "_lanes": None}

    def act(self, obs: Observation, controlled, noise):
        f = extract_features(obs, lane_sets=self.lane_sets(obs))
        mean = f @ self.params.weights
        accel = mean[..., 0] + self.params.sigma_accel * noise[..., 0]
        yaw = mean[..., 1] + self.params.sigma_yaw * noise[..., 1]
        return accel, yaw


class _Recorder(LinearPolicyModel):
    """Policy that also keeps the features and states it was queried at."""

    def __init__(self, params: PolicyParams):
        super().__init__(params)
        self.steps: list[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []

    def act(self, obs, controlled, noise):
        f = extract_features(obs, lane_sets=self.lane_sets(obs))
        _, heading, speed, valid = obs.current
        self.steps.append((obs.step, f, speed.copy(), heading.copy(), valid.copy()))
        mean = f @ self.params.weights
        return (mean[..., 0] + self.params.sigma_accel * noise[..., 0],
                mean[..., 1] + self.params.sigma_yaw * noise[..., 1])


def training_samples(scenario: Scenario, steps, horizon: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack recorded features with the logged-state-restoring target actions.

    Every agent valid at the step and in the log at the next step contributes,
    whether the model or log replay moved it there.
    """
    xs, ys = [], []
    for t, f, speed, heading, valid in steps:
        accel, yaw = reconstruct_actions(scenario, t, speed, heading, horizon)
        ok = valid & scenario.valid[t] & scenario.valid[t + 1]
        xs.append(f[ok])
        ys.append(np.stack([accel[ok], yaw[ok]], axis=-1))
    if not xs:
        return np.zeros((0, N_FEATURES)), np.zeros((0, 2))
    return np.concatenate(xs), np.concatenate(ys)


def open_loop_samples(scenario: Scenario, horizon: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Features and targets at the logged future states (behaviour cloning data)."""
    lanes = _lane_sets(scenario.map.lane_centers)
    sig_pos = np.array([[s.position.x, s.position.y] for s in scenario.signals]).reshape(-1, 2)
    sig_lane = np.array([s.controlled_lane for s in scenario.signals], dtype=int)
    codes = np.array([[driver.SIGNAL_CODES[st.value] for st in s.states] for s in scenario.signals],
                     dtype=int).reshape(len(scenario.signals), scenario.total_len)
    steps = []
    for t in range(scenario.current_step, scenario.total_len - 1):
        f = features_from_state(scenario.position[t], scenario.heading[t], scenario.speed[t], scenario.valid[t],
                                scenario.lengths, scenario.widths, lanes, (sig_pos, sig_lane, codes[:, t]))
        steps.append((t, f[None], scenario.speed[t][None], scenario.heading[t][None], scenario.valid[t][None]))
    return training_samples(scenario, steps, horizon)


def loss(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared action error summed over the two action components."""
    r = x @ weights - y
    return float(np.mean(np.sum(r * r, axis=-1)))


def loss_gradient(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to the ``(7, 2)`` weights."""
    return 2.0 * x.T @ (x @ weights - y) / len(x)


@dataclass
class TrainResult:
    params: PolicyParams
    config: TrainConfig
    epoch_losses: list[float] = field(default_factory=list)


def _mask_rng(config: TrainConfig, epoch: int, i: int) -> np.random.Generator:
    key = [config.seed, epoch if config.resample_masks else 0, i, 1]
    return np.random.default_rng(np.random.SeedSequence(key))


def train(corpus, config: TrainConfig, initial: PolicyParams | None = None) -> TrainResult:
    """Closed-loop one-step training with control dropout.

    Per epoch and scenario: sample a dropout mask, roll the current policy out
    ``k_train`` times, and take one gradient step on the squared error
    between policy and target actions at the visited states. Steps are
    preconditioned by the inverse of the running feature second-moment
    matrix, which makes the step size independent of feature units. Noise
    scales are refit after every epoch to the residual RMS at the logged
    states, i.e. the action noise of the data rather than the size of the
    corrections.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training needs a non-empty corpus")
    params = initial or PolicyParams.zeros()
    w = params.weights.copy()
    # running second moment of the features, seeded with a small ridge
    moment = np.diag(1e-3 * FEATURE_SCALE**2)
    seen = 0
    losses: list[float] = []
    rises = 0
    horizon = max(config.recovery_horizon, corpus[0].dt)
    logged = [open_loop_samples(s, horizon) for s in corpus] if config.epochs else []
    x_log = np.concatenate([x for x, _ in logged]) if logged else None
    y_log = np.concatenate([y for _, y in logged]) if logged else None
    for epoch in range(config.epochs):
        sq_sum, count = np.zeros(2), 0
        for i, scenario in enumerate(corpus):
            mask = sample_dropout_mask(scenario, config.p_drop, _mask_rng(config, epoch, i))
            if any(mask.controlled.values()):
                rec = _Recorder(params)
                seed = int(np.random.SeedSequence([config.seed, epoch, i, 2]).generate_state(1)[0])
                rollout(scenario, rec, mask, config.k_train, seed)
                x, y = training_samples(scenario, rec.steps, max(horizon, scenario.dt))
            else:
                # a fully replayed rollout visits exactly the logged states
                x, y = (np.tile(v, (config.k_train, 1)) for v in logged[i])
            if len(x) == 0:
                continue
            r = x @ w - y
            sq_sum += np.sum(r * r, axis=0)
            count += len(x)
            moment = (moment * max(seen, 1) + x.T @ x) / (max(seen, 1) + len(x))
            seen += len(x)
            w = w - config.learning_rate * np.linalg.solve(moment, loss_gradient(w, x, y))
            if not np.all(np.isfinite(w)):
                raise TrainingDiverged(f"weights became non-finite in epoch {epoch} at scenario {scenario.id}")
            params = PolicyParams(w[:, 0], w[:, 1], params.sigma_accel, params.sigma_yaw)
        if count == 0:
            raise ValueError("no training samples in corpus")
        rms = np.sqrt(np.mean((x_log @ w - y_log) ** 2, axis=0))
        params = PolicyParams(w[:, 0], w[:, 1], float(rms[0]), float(rms[1]))
        epoch_loss = float(sq_sum.sum() / count)
        log.info("epoch %d loss %.6f", epoch, epoch_loss)
        if losses and epoch_loss > losses[-1]:
            rises += 1
            if rises >= 3:
                losses.append(epoch_loss)
                raise TrainingDiverged(
                    f"training loss rose for 3 consecutive epochs: {', '.join(f'{v:.4g}' for v in losses[-4:])}")
        else:
            rises = 0
        losses.append(epoch_loss)
    return TrainResult(params, config, losses)


def save_params(path, result: TrainResult | PolicyParams) -> None:
    if isinstance(result, TrainResult):
        doc = result.params.to_json()
        doc["train_config"] = asdict(result.config)
        doc["epoch_losses"] = [float(v) for v in result.epoch_losses]
    else:
        doc = result.to_json()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> PolicyParams:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return PolicyParams.from_json(doc)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed params file {path}: {exc}") from None


def finite_difference_gradient(weights: np.ndarray, x: np.ndarray, y: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of :func:`loss`, for checking the analytic one."""
    g = np.zeros_like(weights)
    for idx in np.ndindex(weights.shape):
        up, down = weights.copy(), weights.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (loss(up, x, y) - loss(down, x, y)) / (2.0 * h)
    return g


__all__ = [
    "FEATURES", "PolicyParams", "TrainConfig", "TrainResult", "TrainingDiverged", "LinearPolicyModel",
    "extract_features", "features_from_state", "act", "train", "loss", "loss_gradient",
    "finite_difference_gradient", "open_loop_samples", "save_params", "load_params", "lane_context",
]
