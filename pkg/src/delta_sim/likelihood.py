"""Histogram likelihood of logged metric values under simulated rollouts.

Each metric's simulated values are turned into a smoothed histogram (or a
Bernoulli for boolean metrics). The logged values are scored by their mean
negative log-likelihood, reported as the score ``m = exp(-nll)`` in (0, 1],
i.e. the geometric mean of the per-sample probabilities. Scores of the nine
metrics are combined by a weighted mean into the scenario metametric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import BOOLEAN_METRICS, METRICS, ComponentSeries


@dataclass(frozen=True)
class BinSpec:
    lower: float
    upper: float
    bins: int = 20
    eps: float = 0.1

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("histogram upper bound must exceed lower bound")
        if self.bins < 2:
            raise ValueError("histogram needs at least 2 bins")
        if not self.eps > 0:
            raise ValueError("smoothing mass must be positive")


DEFAULT_BINS = {
    "speed": BinSpec(0.0, 30.0),
    "accel": BinSpec(-8.0, 8.0),
    "ang_speed": BinSpec(-2.0, 2.0),
    "ang_accel": BinSpec(-4.0, 4.0),
    "dist_nearest": BinSpec(0.0, 40.0),
    "collision": BinSpec(0.0, 1.0, bins=2),
    "ttc": BinSpec(0.0, 5.0),
    "dist_road_edge": BinSpec(-20.0, 20.0),
    "offroad": BinSpec(0.0, 1.0, bins=2),
}


@dataclass(frozen=True)
class HistogramSpec:
    """Per-metric binning and smoothing. Boolean metrics use only ``eps``."""

    metrics: dict = field(default_factory=lambda: dict(DEFAULT_BINS))

    def __getitem__(self, metric: str) -> BinSpec:
        return self.metrics[metric]

    def to_json(self) -> dict:
        return {m: [b.lower, b.upper, b.bins, b.eps] for m, b in sorted(self.metrics.items())}


UNIFORM_WEIGHTS = {m: 1.0 / len(METRICS) for m in METRICS}


@dataclass(frozen=True)
class Distribution:
    """Probability mass over bins; boolean metrics have two bins, index = value."""

    metric: str
    probs: np.ndarray
    lower: float
    upper: float
    boolean: bool

    def bin_of(self, values) -> np.ndarray:
        v = np.asarray(values, float)
        if self.boolean:
            return (v > 0.5).astype(int)
        b = len(self.probs)
        frac = (np.clip(v, self.lower, self.upper) - self.lower) / (self.upper - self.lower)
        return np.minimum((frac * b).astype(int), b - 1)

    def prob(self, values) -> np.ndarray:
        return self.probs[self.bin_of(values)]


@dataclass(frozen=True)
class MetricScore:
    metric: str
    scenario_id: str
    m: float
    nll: float
    sample_count: int

    @property
    def valid(self) -> bool:
        return self.sample_count > 0


def build_distribution(sim_values, spec: BinSpec, metric: str) -> Distribution:
    """Smoothed histogram (continuous) or Bernoulli (boolean) of simulated values."""
    v = np.asarray(sim_values, float).ravel()
    if metric in BOOLEAN_METRICS:
        ones = float(np.count_nonzero(v > 0.5))
        p1 = (ones + spec.eps) / (v.size + 2.0 * spec.eps)
        return Distribution(metric, np.array([1.0 - p1, p1]), 0.0, 1.0, True)
    frac = (np.clip(v, spec.lower, spec.upper) - spec.lower) / (spec.upper - spec.lower)
    idx = np.minimum((frac * spec.bins).astype(int), spec.bins - 1)
    counts = np.bincount(idx, minlength=spec.bins).astype(float) + spec.eps
    return Distribution(metric, counts / counts.sum(), spec.lower, spec.upper, False)


def likelihood_score(pmf: Distribution, gt_values, scenario_id: str = "") -> MetricScore:
    """Mean NLL of logged values under ``pmf`` and its score ``exp(-nll)``."""
    v = np.asarray(gt_values, float).ravel()
    if v.size == 0:
        return MetricScore(pmf.metric, scenario_id, 0.0, math.inf, 0)
    nll = float(-np.mean(np.log(pmf.prob(v))))
    return MetricScore(pmf.metric, scenario_id, math.exp(-nll), nll, int(v.size))


@dataclass(frozen=True)
class ScenarioScores:
    scenario_id: str
    domain: tuple[int, ...]
    M: float
    scores: tuple[MetricScore, ...]
    weights: dict

    def score(self, metric: str) -> MetricScore:
        return next(s for s in self.scores if s.metric == metric)


class UnscorableScenario(ValueError):
    pass


def _pool(series: ComponentSeries, cols) -> np.ndarray:
    vals = series.values[..., cols]
    ok = series.valid[..., cols]
    return vals[ok]


def score_series(sim: dict, gt: dict, sim_cols, gt_cols, scenario_id: str, domain,
                 spec: HistogramSpec | None = None, weights: dict | None = None) -> ScenarioScores:
    """Metametric from precomputed series; ``*_cols`` select domain agents."""
    spec = spec or HistogramSpec()
    weights = weights or UNIFORM_WEIGHTS
    scores = []
    for m in METRICS:
        pmf = build_distribution(_pool(sim[m], sim_cols), spec[m], m)
        scores.append(likelihood_score(pmf, _pool(gt[m], gt_cols), scenario_id))
    good = [s for s in scores if s.valid and weights.get(s.metric, 0.0) > 0]
    if not good:
        raise UnscorableScenario(f"unscorable scenario {scenario_id}: no metric has ground-truth samples")
    total_w = sum(weights[s.metric] for s in good)
    M = sum(weights[s.metric] * s.m for s in good) / total_w
    return ScenarioScores(scenario_id, tuple(domain), float(M), tuple(scores), dict(weights))


def scenario_metametric(rollouts, scenario, domain, spec: HistogramSpec | None = None,
                        weights: dict | None = None, sim_series=None, gt_series=None) -> ScenarioScores:
    """Weighted mean of the nine metric scores over the agents in ``domain``.

    Simulated values are pooled over domain agents, timesteps and rollouts;
    logged values over domain agents and valid timesteps. Precomputed series
    may be passed to avoid recomputation across domains.
    """
    from .metrics import ground_truth_series, rollout_series

    domain = tuple(domain)
    if not domain:
        raise ValueError("domain must be non-empty")
    sim_series = sim_series if sim_series is not None else rollout_series(rollouts, scenario)
    gt_series = gt_series if gt_series is not None else ground_truth_series(scenario)
    sim_cols = [rollouts.index_of(a) for a in domain]
    gt_cols = [scenario.index_of(a) for a in domain]
    return score_series(sim_series, gt_series, sim_cols, gt_cols, scenario.id, domain, spec, weights)


def corpus_metametric(per_scenario) -> float:
    """Unweighted mean of per-scenario metametrics."""
    values = [s.M if isinstance(s, ScenarioScores) else float(s) for s in per_scenario]
    if not values:
        raise ValueError("corpus metametric of an empty scenario list")
    return math.fsum(values) / len(values)
