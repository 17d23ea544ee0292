"""``delta-sim`` command line: gen, eval, train and report.

Exit codes: 0 success, 1 input error, 2 evaluation finished with excluded
or failed scenarios, 3 training divergence.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click

from .config import ConfigError, HarnessConfig, load_config, with_overrides
from .delta import domain_sweep
from .generator import TEMPLATES, GeneratorConfig, generate_corpus
from .models import SCRIPTED_MODELS, ReplayModel
from .report import summary_text, write_report
from .scenario import (SCENARIO_SUFFIX, Domain, ScenarioFormatError, ScenarioValidationError,
                       apply_causal_labels, load_causal_labels, read_corpus, save_scenario)
from .toy import LinearPolicyModel, TrainConfig, TrainingDiverged, load_params, save_params, train

log = logging.getLogger("delta_sim")

EXIT_OK, EXIT_INPUT, EXIT_EXCLUDED, EXIT_DIVERGED = 0, 1, 2, 3


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


def _split(values) -> tuple[str, ...]:
    """Flatten repeatable, comma-separated option values."""
    return tuple(x.strip() for v in values for x in v.split(",") if x.strip())


def _config(config_path, **flags) -> HarnessConfig:
    try:
        base = load_config(config_path) if config_path else HarnessConfig()
        return with_overrides(base, **flags)
    except ConfigError as exc:
        raise InputError(str(exc)) from None


def load_model(spec: str):
    """Model from a name (replay or a scripted model) or a toy ``params.json`` path.

    Returns ``(model, description)`` where the description is echoed in reports.
    """
    if spec == "replay":
        return ReplayModel(), {"name": "replay"}
    if spec in SCRIPTED_MODELS:
        model = SCRIPTED_MODELS[spec]()
        params = {k: v for k, v in vars(model).items() if not k.startswith("_")}
        return model, {"name": spec, "params": params}
    path = Path(spec)
    if path.is_dir():
        path = path / "params.json"
    if not path.is_file():
        names = ", ".join(["replay", *sorted(SCRIPTED_MODELS)])
        raise InputError(f"unknown model {spec!r}: expected one of {names} or a params.json path")
    try:
        params = load_params(path)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from None
    return LinearPolicyModel(params), {"name": "toy", "params": params.to_json()}


def load_corpus(cfg: HarnessConfig):
    """Read the corpus and apply causal labels; returns ``(scenarios, digest)``."""
    if not cfg.corpus:
        raise InputError("no corpus given (--corpus)")
    directory = Path(cfg.corpus)
    if not directory.is_dir():
        raise InputError(f"corpus directory {directory} does not exist")
    files = sorted(directory.glob("*" + SCENARIO_SUFFIX))
    if not files:
        raise InputError(f"no {SCENARIO_SUFFIX} files in {directory}")
    digest = hashlib.sha256()
    for f in files:
        digest.update(f.name.encode())
        digest.update(f.read_bytes())
    try:
        corpus = read_corpus(directory)
    except (ScenarioFormatError, ScenarioValidationError) as exc:
        raise InputError(f"invalid scenario in {directory}: {exc}") from None
    if cfg.causal_labels:
        try:
            labels = load_causal_labels(Path(cfg.causal_labels).read_bytes())
            corpus = [apply_causal_labels(s, labels) for s in corpus]
        except (OSError, ScenarioFormatError, ScenarioValidationError) as exc:
            raise InputError(f"causal labels: {exc}") from None
    return corpus, digest.hexdigest()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Measure world-model sensitivity to uncontrollable (replayed) ego agents."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


_config_opt = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                           help="Key-value harness config file; flags win over it.")


@cli.command()
@_config_opt
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output corpus directory.")
@click.option("--n", type=int, help="Number of scenarios (>= 1).")
@click.option("--template", "templates", multiple=True,
              help=f"Scenario template, repeatable or comma-separated: {', '.join(TEMPLATES)}.")
@click.option("--seed", type=int, help="Generation seed.")
def gen(config_path, out, n, templates, seed):
    """Generate a synthetic scenario corpus and its manifest."""
    cfg = _config(config_path, out=out, gen_n=n, gen_seed=seed, gen_templates=_split(templates) or None)
    gcfg = GeneratorConfig(n=cfg.gen_n, templates=cfg.gen_templates)
    try:
        gcfg.check()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    corpus = generate_corpus(gcfg, cfg.gen_seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for s in corpus:
        name = s.id + SCENARIO_SUFFIX
        data = save_scenario(s)
        (out_dir / name).write_bytes(data)
        files.append({"file": name, "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {"seed": cfg.gen_seed, "generator": asdict(gcfg), "files": files}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote {len(files)} scenarios to {out_dir}")


@cli.command("eval")
@_config_opt
@click.option("--corpus", type=click.Path(), help="Corpus directory.")
@click.option("--out", type=click.Path(file_okay=False), help="Report directory.")
@click.option("--model", help="replay, a scripted model name, or a toy params.json path.")
@click.option("--k", type=int, help="Rollouts per scenario and regime (default 32).")
@click.option("--seed", type=int, help="Evaluation seed.")
@click.option("--tau", multiple=True, help="Confusion thresholds, repeatable or comma-separated.")
@click.option("--domains", multiple=True, help="eval, causal, union; repeatable or comma-separated.")
@click.option("--causal-labels", type=click.Path(), help="JSON list of {scenario_id, agent_id}.")
@click.option("--jobs", type=int, help="Worker processes; results do not depend on it.")
def eval_cmd(config_path, corpus, out, model, k, seed, tau, domains, causal_labels, jobs):
    """Score full-control against ego-replay rollouts and write the report files."""
    try:
        taus = tuple(float(t) for t in _split(tau)) or None
        doms = tuple(Domain(d) for d in _split(domains)) or None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cfg = _config(config_path, corpus=corpus, out=out, model=model, k=k, seed=seed, tau=taus,
                  domains=doms, causal_labels=causal_labels, jobs=jobs)
    if not cfg.out:
        raise InputError("no output directory given (--out)")
    world_model, description = load_model(cfg.model)
    scenarios, digest = load_corpus(cfg)
    result = domain_sweep(scenarios, world_model, cfg.k, cfg.seed, cfg.histogram_spec, cfg.weights,
                          cfg.domains, cfg.tau, cfg.paired, cfg.jobs)
    echo = cfg.resolved()
    echo["corpus_sha256"] = digest
    report = write_report(cfg.out, result, echo, description, cfg.hist_delta)
    click.echo(summary_text(report))
    if result.exclusion_count:
        click.echo(f"{len(result.excluded)} exclusions and {len(result.failures)} failures; "
                   f"see {Path(cfg.out) / 'report.json'}", err=True)
        sys.exit(EXIT_EXCLUDED)


@cli.command("train")
@_config_opt
@click.option("--corpus", type=click.Path(), help="Training corpus directory.")
@click.option("--out", type=click.Path(), help="Output directory (or .json path) for params.json.")
@click.option("--p-drop", type=float, help="Control dropout probability.")
@click.option("--epochs", type=int, help="Training epochs (0 writes zero params).")
@click.option("--seed", type=int, help="Training seed.")
@click.option("--causal-labels", type=click.Path(), help="JSON list of {scenario_id, agent_id}.")
def train_cmd(config_path, corpus, out, p_drop, epochs, seed, causal_labels):
    """Train the linear toy world model in closed loop, optionally with control dropout."""
    cfg = _config(config_path, corpus=corpus, out=out, p_drop=p_drop, epochs=epochs, seed=seed,
                  causal_labels=causal_labels)
    if not cfg.out:
        raise InputError("no output path given (--out)")
    scenarios, _ = load_corpus(cfg)
    tcfg = TrainConfig(p_drop=cfg.p_drop, epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                       k_train=cfg.k_train, seed=cfg.seed, resample_masks=cfg.resample_masks,
                       recovery_horizon=cfg.recovery_horizon)
    try:
        result = train(scenarios, tcfg)
    except TrainingDiverged as exc:
        click.echo(f"training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    path = Path(cfg.out)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "params.json"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    save_params(path, result)
    for i, v in enumerate(result.epoch_losses):
        click.echo(f"epoch {i} loss {v:.6f}")
    click.echo(f"wrote {path}")


@cli.command("report")
@click.option("--out", required=True, type=click.Path(), help="Report directory written by eval.")
def report_cmd(out):
    """Print the summary table of an existing report."""
    path = Path(out)
    if path.is_dir():
        path = path / "report.json"
    try:
        doc = json.loads(path.read_text())
        click.echo(summary_text(doc))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read report {path}: {exc}") from None


def main(argv=None) -> int:
    """Entry point; maps usage errors to exit code 1 instead of click's 2."""
    try:
        cli.main(args=argv, prog_name="delta-sim", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return EXIT_INPUT if not isinstance(exc, InputError) else exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INPUT
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
