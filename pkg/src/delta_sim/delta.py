"""Full-control versus ego-replay evaluation: delta metametrics and confusion rates.

For every scenario two rollout sets are simulated with the same seed: one
where the model controls every agent and one where the ego replays its log.
Scoring both with and without the ego gives four metametrics per domain:

* ``M`` / ``M_hat``: ego included, full control / ego replay
* ``M_sim`` / ``M_sim_hat``: ego excluded, full control / ego replay

``dM = M - M_hat`` and ``dM_sim = M_sim - M_sim_hat``. A scenario counts
toward the simulation confusion rate when either delta exceeds ``tau`` and
toward the policy confusion rate when ``dM_sim < -tau``.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .likelihood import HistogramSpec, UnscorableScenario, score_series
from .metrics import ground_truth_series, min_ade, rollout_series
from .rollout import DEFAULT_K, WorldModel, ego_replay_mask, full_control_mask, rollout
from .scenario import Domain, DomainSelector, Scenario, select_domain, sparse_causal_agents

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.035, 0.05)
ALL_DOMAINS = (Domain.EVAL_SET, Domain.CAUSAL, Domain.UNION)


@dataclass(frozen=True)
class FourWayScores:
    scenario_id: str
    domain: Domain
    M: float
    M_hat: float
    M_sim: float
    M_sim_hat: float
    min_ade: float = math.nan
    min_ade_hat: float = math.nan

    @property
    def record(self) -> "DeltaRecord":
        return DeltaRecord(self.scenario_id, self.M - self.M_hat, self.M_sim - self.M_sim_hat)


@dataclass(frozen=True)
class DeltaRecord:
    scenario_id: str
    dM: float
    dM_sim: float


@dataclass(frozen=True)
class DeltaAggregate:
    """Absolute-shift and signed means of the per-scenario deltas."""

    delta_abs: float
    delta_signed: float
    delta_sim_abs: float
    delta_sim_signed: float
    n: int


@dataclass(frozen=True)
class ConfusionSummary:
    tau: float
    C_s: float
    C_p: float
    N: int
    frac_dM: float
    frac_dM_sim: float
    sim_confused: tuple[str, ...]
    policy_confused: tuple[str, ...]


@dataclass(frozen=True)
class Exclusion:
    scenario_id: str
    domain: Domain
    reason: str


def replay_seed(seed: int, paired: bool = True) -> int:
    """Seed of the ego-replay rollouts: shared with full control unless unpaired."""
    if paired:
        return seed
    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def scenario_seed(seed: int, scenario_id: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(scenario_id.encode())]).generate_state(1)[0])


def domains_for(scenario: Scenario, base: Domain) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Agent ids scored with the ego and without it for one domain.

    The ego is always part of the with-ego domain, whether or not it carries
    the flag of the base domain.
    """
    with_ego = tuple(sorted(set(select_domain(scenario, DomainSelector(base, True))) | {scenario.ego_id}))
    sim = select_domain(scenario, DomainSelector(base, False))
    return with_ego, sim


def evaluate_scenario(scenario: Scenario, model: WorldModel, k: int = DEFAULT_K, seed: int = 0,
                      domains=ALL_DOMAINS, spec: HistogramSpec | None = None, weights: dict | None = None,
                      paired: bool = True):
    """Four-way scores of one scenario for each requested domain.

    Returns ``(scores, exclusions)`` where ``scores`` maps domain to
    :class:`FourWayScores` for the domains that could be scored.
    """
    full = rollout(scenario, model, full_control_mask(scenario), k, seed)
    replay = rollout(scenario, model, ego_replay_mask(scenario), k, replay_seed(seed, paired))
    sim_a = rollout_series(full, scenario)
    sim_b = rollout_series(replay, scenario)
    gt = ground_truth_series(scenario)
    scores, excluded = {}, []
    for base in domains:
        with_ego, sim = domains_for(scenario, base)
        if not sim:
            excluded.append(Exclusion(scenario.id, base, "empty sim domain"))
            continue

        def score(series, ids):
            cols = [scenario.index_of(a) for a in ids]
            return score_series(series, gt, cols, cols, scenario.id, ids, spec, weights).M

        try:
            M, M_hat = score(sim_a, with_ego), score(sim_b, with_ego)
            M_sim, M_sim_hat = score(sim_a, sim), score(sim_b, sim)
        except UnscorableScenario as exc:
            excluded.append(Exclusion(scenario.id, base, str(exc)))
            continue
        try:
            ade_a, ade_b = min_ade(full, scenario, sim), min_ade(replay, scenario, sim)
        except ValueError:
            ade_a = ade_b = math.nan
        scores[base] = FourWayScores(scenario.id, base, M, M_hat, M_sim, M_sim_hat, ade_a, ade_b)
    return scores, excluded


def four_way_scores(scenario: Scenario, model: WorldModel, k: int = DEFAULT_K, seed: int = 0,
                    domain: Domain = Domain.UNION, spec: HistogramSpec | None = None,
                    weights: dict | None = None, paired: bool = True) -> FourWayScores:
    scores, excluded = evaluate_scenario(scenario, model, k, seed, (domain,), spec, weights, paired)
    if excluded:
        raise ValueError(f"scenario {scenario.id} excluded: {excluded[0].reason}")
    return scores[domain]


def delta_metrics(scores) -> tuple[list[DeltaRecord], DeltaAggregate]:
    """Per-scenario signed deltas and their absolute-shift aggregates."""
    records = [s.record if isinstance(s, FourWayScores) else s for s in scores]
    n = len(records)
    if n == 0:
        raise ValueError("delta metrics need at least one scenario")
    agg = DeltaAggregate(
        delta_abs=math.fsum(abs(r.dM) for r in records) / n,
        delta_signed=math.fsum(r.dM for r in records) / n,
        delta_sim_abs=math.fsum(abs(r.dM_sim) for r in records) / n,
        delta_sim_signed=math.fsum(r.dM_sim for r in records) / n,
        n=n,
    )
    return records, agg


def confusion_rates(records, tau: float) -> ConfusionSummary:
    """Simulation and policy confusion rates at threshold ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    records = list(records)
    n = len(records)
    if n == 0:
        raise ValueError("confusion rates need at least one scenario")
    sim = tuple(r.scenario_id for r in records if r.dM > tau or r.dM_sim > tau)
    pol = tuple(r.scenario_id for r in records if r.dM_sim < -tau)
    return ConfusionSummary(
        tau=tau,
        C_s=len(sim) / n,
        C_p=len(pol) / n,
        N=n,
        frac_dM=sum(r.dM > tau for r in records) / n,
        frac_dM_sim=sum(r.dM_sim > tau for r in records) / n,
        sim_confused=sim,
        policy_confused=pol,
    )


@dataclass
class DomainResult:
    domain: Domain
    scores: list[FourWayScores]
    aggregate: DeltaAggregate | None
    confusion: dict[float, ConfusionSummary]
    M: float
    M_hat: float
    M_sim: float
    M_sim_hat: float
    min_ade: float
    min_ade_hat: float
    excluded: list[Exclusion] = field(default_factory=list)


@dataclass
class SweepResult:
    domains: dict[Domain, DomainResult]
    n_scenarios: int
    excluded: list[Exclusion]
    failures: list[tuple[str, str]]
    sparse_causal: dict[str, tuple[int, ...]]

    @property
    def exclusion_count(self) -> int:
        return len(self.excluded) + len(self.failures)


def _mean(values):
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def _evaluate_task(args):
    scenario, model, k, seed, domains, spec, weights, paired = args
    try:
        scores, excluded = evaluate_scenario(scenario, model, k, scenario_seed(seed, scenario.id),
                                             domains, spec, weights, paired)
        return scores, excluded, None
    except Exception as exc:  # scenario-level failure: reported, never dropped silently
        return {}, [], f"{type(exc).__name__}: {exc}"


def domain_sweep(corpus, model: WorldModel, k: int = DEFAULT_K, seed: int = 0,
                 spec: HistogramSpec | None = None, weights: dict | None = None,
                 domains=ALL_DOMAINS, taus=DEFAULT_TAUS, paired: bool = True, jobs: int = 1) -> SweepResult:
    """Evaluate a corpus on each domain; results follow corpus order for any ``jobs``."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    domains = tuple(domains)
    tasks = [(s, model, k, seed, domains, spec, weights, paired) for s in corpus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_evaluate_task(t) for t in tasks]

    per_domain = {d: [] for d in domains}
    excluded, failures = [], []
    for scenario, (scores, excl, err) in zip(corpus, results):
        if err is not None:
            log.warning("scenario %s failed: %s", scenario.id, err)
            failures.append((scenario.id, err))
            continue
        excluded.extend(excl)
        for d, s in scores.items():
            per_domain[d].append(s)

    out = {}
    for d in domains:
        scores = per_domain[d]
        conf, agg = {}, None
        if scores:
            records, agg = delta_metrics(scores)
            conf = {tau: confusion_rates(records, tau) for tau in taus}
        out[d] = DomainResult(
            domain=d,
            scores=scores,
            aggregate=agg,
            confusion=conf,
            M=_mean(s.M for s in scores),
            M_hat=_mean(s.M_hat for s in scores),
            M_sim=_mean(s.M_sim for s in scores),
            M_sim_hat=_mean(s.M_sim_hat for s in scores),
            min_ade=_mean(s.min_ade for s in scores),
            min_ade_hat=_mean(s.min_ade_hat for s in scores),
            excluded=[e for e in excluded if e.domain is d],
        )
    sparse = {s.id: sparse_causal_agents(s) for s in corpus}
    return SweepResult(out, len(corpus), excluded, failures, {k_: v for k_, v in sparse.items() if v})
