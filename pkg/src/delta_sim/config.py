"""Harness configuration: a plain ``key = value`` file with command-line overrides.

Lines starting with ``#`` or ``;`` are comments. Recognised keys::

    corpus, out, causal_labels      paths
    model                           replay | scripted model name | path to params.json
    k, seed, jobs                   integers
    tau                             comma-separated thresholds
    domains                         comma-separated subset of eval, causal, union
    paired                          true/false: share seeds between the two rollout sets
    p_drop, epochs, learning_rate, k_train, resample_masks, recovery_horizon
    hist.<metric>                   lower, upper, bins, eps
    weight.<metric>                 non-negative weight of one metric score
    hist_delta                      lower, upper, bins of the delta histogram
    gen.n, gen.templates, gen.seed  corpus generation
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .delta import DEFAULT_TAUS
from .likelihood import DEFAULT_BINS, UNIFORM_WEIGHTS, BinSpec, HistogramSpec
from .metrics import METRICS
from .rollout import DEFAULT_K
from .scenario import Domain


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HarnessConfig:
    corpus: str | None = None
    out: str | None = None
    causal_labels: str | None = None
    model: str = "replay"
    k: int = DEFAULT_K
    seed: int = 0
    jobs: int = 1
    tau: tuple[float, ...] = DEFAULT_TAUS
    domains: tuple[Domain, ...] = (Domain.UNION,)
    paired: bool = True
    hist: dict = field(default_factory=lambda: dict(DEFAULT_BINS))
    weights: dict = field(default_factory=lambda: dict(UNIFORM_WEIGHTS))
    hist_delta: tuple[float, float, int] = (-0.25, 0.25, 50)
    # training
    p_drop: float = 0.0
    epochs: int = 10
    learning_rate: float = 0.02
    k_train: int = 2
    resample_masks: bool = True
    recovery_horizon: float = 1.0
    # generation
    gen_n: int = 200
    gen_templates: tuple[str, ...] = ("leader_follower_signal",)
    gen_seed: int = 0

    def check(self) -> "HarnessConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.tau or any(not t > 0 for t in self.tau):
            raise ConfigError("tau values must be positive")
        if not self.domains:
            raise ConfigError("at least one domain required")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError("p_drop must lie in [0, 1]")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if any(w < 0 for w in self.weights.values()) or not any(w > 0 for w in self.weights.values()):
            raise ConfigError("weights must be non-negative with at least one positive")
        lo, hi, bins = self.hist_delta
        if not hi > lo or bins < 1:
            raise ConfigError("hist_delta needs lower < upper and bins >= 1")
        return self

    @property
    def histogram_spec(self) -> HistogramSpec:
        return HistogramSpec(dict(self.hist))

    def resolved(self) -> dict:
        """JSON-ready echo of every setting that can influence evaluation results.

        ``jobs`` and the output path are left out: they do not change the
        numbers, and reports must be byte-identical across them.
        """
        d = asdict(self)
        for key in ("jobs", "out"):
            d.pop(key)
        d["tau"] = list(self.tau)
        d["domains"] = [dom.value for dom in self.domains]
        d["hist"] = HistogramSpec(dict(self.hist)).to_json()
        d["weights"] = {m: self.weights[m] for m in sorted(self.weights)}
        d["hist_delta"] = list(self.hist_delta)
        d["gen_templates"] = list(self.gen_templates)
        return d


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _domains(text: str) -> tuple[Domain, ...]:
    try:
        return tuple(Domain(x.strip()) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


_SCALARS = {
    "corpus": str, "out": str, "causal_labels": str, "model": str,
    "k": int, "seed": int, "jobs": int, "paired": _bool,
    "p_drop": float, "epochs": int, "learning_rate": float, "k_train": int,
    "resample_masks": _bool, "recovery_horizon": float,
    "gen.n": int, "gen.seed": int,
}


def parse_config(text: str, base: HarnessConfig | None = None) -> HarnessConfig:
    """Parse a key-value document on top of ``base`` (defaults if omitted)."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[harness]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = base or HarnessConfig()
    hist, weights, updates = dict(cfg.hist), dict(cfg.weights), {}
    for key, raw in parser["harness"].items():
        raw = raw.strip()
        try:
            if key in _SCALARS:
                updates[key.replace(".", "_")] = _SCALARS[key](raw)
            elif key == "tau":
                updates["tau"] = _floats(raw)
            elif key == "domains":
                updates["domains"] = _domains(raw)
            elif key == "gen.templates":
                updates["gen_templates"] = tuple(x.strip() for x in raw.split(",") if x.strip())
            elif key == "hist_delta":
                lo, hi, bins = _floats(raw)
                updates["hist_delta"] = (lo, hi, int(bins))
            elif key.startswith("hist.") and key[5:] in METRICS:
                lo, hi, bins, eps = _floats(raw)
                hist[key[5:]] = BinSpec(lo, hi, int(bins), eps)
            elif key.startswith("weight.") and key[7:] in METRICS:
                weights[key[7:]] = float(raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    return replace(cfg, hist=hist, weights=weights, **updates).check()


def load_config(path) -> HarnessConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def with_overrides(cfg: HarnessConfig, **flags) -> HarnessConfig:
    """Apply command-line flags (``None`` means not given); flags win over the file."""
    valid = {f.name for f in fields(HarnessConfig)}
    updates = {k: v for k, v in flags.items() if v is not None}
    unknown = set(updates) - valid
    if unknown:
        raise ConfigError(f"unknown settings {sorted(unknown)}")
    return replace(cfg, **updates).check()
