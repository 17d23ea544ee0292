"""Sensitivity of traffic world models to uncontrollable agents.

Rolls a world model out twice per scenario, once controlling every agent and
once with the ego replaying its log, scores both against the logged data and
reports the delta metametrics and confusion rates.
"""

from .delta import (ConfusionSummary, DeltaAggregate, DeltaRecord, FourWayScores, confusion_rates,
                    delta_metrics, domain_sweep, evaluate_scenario, four_way_scores)
from .generator import GeneratorConfig, generate_corpus
from .likelihood import HistogramSpec, likelihood_score, scenario_metametric
from .models import SCRIPTED_MODELS, ReplayModel
from .rollout import ControlMask, ego_replay_mask, full_control_mask, rollout, sample_dropout_mask
from .scenario import Domain, DomainSelector, Scenario, load_scenario, read_corpus, save_scenario
from .toy import LinearPolicyModel, PolicyParams, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfusionSummary", "ControlMask", "DeltaAggregate", "DeltaRecord", "Domain", "DomainSelector",
    "FourWayScores", "GeneratorConfig", "HistogramSpec", "LinearPolicyModel", "PolicyParams",
    "ReplayModel", "SCRIPTED_MODELS", "Scenario", "TrainConfig", "confusion_rates", "delta_metrics",
    "domain_sweep", "ego_replay_mask", "evaluate_scenario", "four_way_scores", "full_control_mask",
    "generate_corpus", "likelihood_score", "load_scenario", "read_corpus", "rollout",
    "sample_dropout_mask", "save_scenario", "scenario_metametric", "train",
]
