"""Report emission: ``report.json`` plus plot-ready ``tables.csv``, ``scatter.csv`` and ``hist.csv``.

Every file embeds the resolved configuration. Floats are written with
``repr`` precision and keys in a fixed order, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .delta import DomainResult, SweepResult

REPORT_VERSION = 1
REPORT_FILES = ("report.json", "tables.csv", "scatter.csv", "hist.csv")

TABLE_COLUMNS = (
    "domain", "tau", "N", "M", "M_hat", "M_sim", "M_sim_hat", "delta_abs", "delta_signed",
    "delta_sim_abs", "delta_sim_signed", "frac_dM", "frac_dM_sim", "C_s", "C_p", "min_ade", "min_ade_hat",
)
SCATTER_COLUMNS = (
    "domain", "scenario_id", "M", "M_hat", "M_sim", "M_sim_hat", "dM", "dM_sim", "min_ade", "min_ade_hat",
)
HIST_COLUMNS = ("domain", "quantity", "bin_lower", "bin_upper", "count")


def _num(x):
    """JSON-safe float: NaN and infinities become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _domain_json(res: DomainResult) -> dict:
    agg = res.aggregate
    doc = {
        "n_scored": len(res.scores),
        "M": _num(res.M),
        "M_hat": _num(res.M_hat),
        "M_sim": _num(res.M_sim),
        "M_sim_hat": _num(res.M_sim_hat),
        "min_ade": _num(res.min_ade),
        "min_ade_hat": _num(res.min_ade_hat),
        "delta": None if agg is None else {
            "abs": _num(agg.delta_abs),
            "signed": _num(agg.delta_signed),
            "sim_abs": _num(agg.delta_sim_abs),
            "sim_signed": _num(agg.delta_sim_signed),
        },
        "confusion": [
            {
                "tau": c.tau,
                "N": c.N,
                "C_s": c.C_s,
                "C_p": c.C_p,
                "frac_dM": c.frac_dM,
                "frac_dM_sim": c.frac_dM_sim,
                "sim_confused": list(c.sim_confused),
                "policy_confused": list(c.policy_confused),
            }
            for _, c in sorted(res.confusion.items())
        ],
        "scenarios": [
            {
                "id": s.scenario_id,
                "M": _num(s.M),
                "M_hat": _num(s.M_hat),
                "M_sim": _num(s.M_sim),
                "M_sim_hat": _num(s.M_sim_hat),
                "dM": _num(s.M - s.M_hat),
                "dM_sim": _num(s.M_sim - s.M_sim_hat),
                "min_ade": _num(s.min_ade),
                "min_ade_hat": _num(s.min_ade_hat),
            }
            for s in res.scores
        ],
        "excluded": [{"id": e.scenario_id, "reason": e.reason} for e in res.excluded],
    }
    return doc


def build_report(result: SweepResult, config: dict, model: dict) -> dict:
    """Structured report of a domain sweep; ``config`` and ``model`` are echoed verbatim."""
    return {
        "version": REPORT_VERSION,
        "config": config,
        "model": model,
        "n_scenarios": result.n_scenarios,
        "domains": {d.value: _domain_json(r) for d, r in result.domains.items()},
        "excluded": [
            {"id": e.scenario_id, "domain": e.domain.value, "reason": e.reason} for e in result.excluded
        ],
        "failures": [{"id": sid, "error": err} for sid, err in result.failures],
        "sparse_causal": {sid: list(ids) for sid, ids in sorted(result.sparse_causal.items())},
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(header_comment: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header_comment)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if isinstance(v, float) and not math.isfinite(v) else v for v in row])
    return buf.getvalue()


def _config_comment(config: dict) -> str:
    return "# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"


def tables_csv(result: SweepResult, config: dict) -> str:
    """One row per (domain, tau): the aggregate table layout."""
    rows = []
    for d, res in result.domains.items():
        agg = res.aggregate
        for tau, c in sorted(res.confusion.items()):
            rows.append((
                d.value, tau, c.N, res.M, res.M_hat, res.M_sim, res.M_sim_hat,
                agg.delta_abs, agg.delta_signed, agg.delta_sim_abs, agg.delta_sim_signed,
                c.frac_dM, c.frac_dM_sim, c.C_s, c.C_p, res.min_ade, res.min_ade_hat,
            ))
    return _csv(_config_comment(config), TABLE_COLUMNS, rows)


def scatter_csv(result: SweepResult, config: dict) -> str:
    """Per-scenario full-control versus ego-replay values for scatter plots."""
    rows = []
    for d, res in result.domains.items():
        for s in res.scores:
            rows.append((d.value, s.scenario_id, s.M, s.M_hat, s.M_sim, s.M_sim_hat,
                         s.M - s.M_hat, s.M_sim - s.M_sim_hat, s.min_ade, s.min_ade_hat))
    return _csv(_config_comment(config), SCATTER_COLUMNS, rows)


def delta_histogram(values, lower: float, upper: float, bins: int):
    """Counts over equal-width bins; values outside the range go to the edge bins."""
    edges = np.linspace(lower, upper, bins + 1)
    v = np.clip(np.asarray(values, float), lower, upper)
    counts, _ = np.histogram(v, bins=edges)
    return edges, counts


def hist_csv(result: SweepResult, config: dict, hist_range=(-0.25, 0.25, 50)) -> str:
    """Histograms of dM and dM_sim per domain."""
    lower, upper, bins = hist_range
    rows = []
    for d, res in result.domains.items():
        for quantity in ("dM", "dM_sim"):
            recs = [s.record for s in res.scores]
            vals = [getattr(r, quantity) for r in recs]
            edges, counts = delta_histogram(vals, lower, upper, int(bins))
            for lo, hi, n in zip(edges[:-1], edges[1:], counts):
                rows.append((d.value, quantity, float(lo), float(hi), int(n)))
    return _csv(_config_comment(config), HIST_COLUMNS, rows)


def write_report(out_dir, result: SweepResult, config: dict, model: dict,
                 hist_range=(-0.25, 0.25, 50)) -> dict:
    """Write the four report files into ``out_dir`` and return the report document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(result, config, model)
    (out / "report.json").write_text(dumps_report(report))
    (out / "tables.csv").write_text(tables_csv(result, config))
    (out / "scatter.csv").write_text(scatter_csv(result, config))
    (out / "hist.csv").write_text(hist_csv(result, config, hist_range))
    return report


def summary_text(report: dict) -> str:
    """Human-readable table of a report document."""
    lines = [f"model {report['model'].get('name')}  scenarios {report['n_scenarios']}  "
             f"excluded {len(report['excluded'])}  failures {len(report['failures'])}"]
    lines.append(f"{'domain':8s} {'N':>4s} {'M':>7s} {'M_hat':>7s} {'dM':>8s} {'dM_sim':>8s} "
                 f"{'tau':>6s} {'C_s':>6s} {'C_p':>6s}")

    def fmt(x, w, p):
        return f"{x:{w}.{p}f}" if x is not None else f"{'-':>{w}s}"

    for name, dom in report["domains"].items():
        delta = dom["delta"] or {}
        for c in dom["confusion"] or [{"tau": None, "N": 0, "C_s": None, "C_p": None}]:
            lines.append(
                f"{name:8s} {c['N']:4d} {fmt(dom['M'], 7, 4)} {fmt(dom['M_hat'], 7, 4)} "
                f"{fmt(delta.get('abs'), 8, 4)} {fmt(delta.get('sim_signed'), 8, 4)} "
                f"{fmt(c['tau'], 6, 3)} {fmt(c['C_s'], 6, 3)} {fmt(c['C_p'], 6, 3)}"
            )
    return "\n".join(lines)
