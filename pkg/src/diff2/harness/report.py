"""Curve CSVs, the summary JSON and SVG figures.

Output layout under ``out_dir``::

    curves/<algo>/seed<s>_<criterion>.csv   per-round metrics of the winner
                                            tuned for <criterion>
    summary.json                            see SUMMARY_SCHEMA
    <criterion>.svg                         mean +- std over seeds, per algo

Curve CSVs have the columns ``round, train_loss, train_sq_grad_norm,
test_loss`` with floats written by ``repr`` so they re-parse exactly.
Wall-clock times are kept out of the CSVs so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import CRITERIA, TUNED_CRITERIA, ExperimentConfig, RoundRecord, RunSummary  # noqa: E402
from .stats import paired_one_sided_t_test  # noqa: E402

SUMMARY_VERSION = 1
CSV_COLUMNS = ("round", "train_loss", "train_sq_grad_norm", "test_loss")

_number = {"type": "number"}
_nullable_number = {"type": ["number", "null"]}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["format_version", "config", "runs", "aggregates", "t_tests", "comm_totals"],
    "properties": {
        "format_version": {"const": SUMMARY_VERSION},
        "config": {"type": "object", "required": ["dataset", "algos", "eps", "delta", "rounds", "clients", "seeds"]},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["algo", "seed", "hyperparameters", "minima", "noise_plan", "comm", "error", "curve_files"],
                "properties": {
                    "algo": {"type": "string"},
                    "seed": {"type": "integer"},
                    "minima": {"type": "object", "additionalProperties": _nullable_number},
                    "error": {"type": ["string", "null"]},
                },
            },
        },
        "aggregates": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {
                    "type": "object",
                    "required": ["values", "mean", "std"],
                    "properties": {
                        "values": {"type": "array", "items": _nullable_number},
                        "mean": _nullable_number,
                        "std": _nullable_number,
                    },
                },
            },
        },
        "t_tests": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["criterion", "algo", "baseline", "diffs", "t", "p"],
                "properties": {"p": {"type": ["number", "null"], "minimum": 0, "maximum": 1}, "t": _nullable_number},
            },
        },
        "comm_totals": {"type": "object"},
    },
}

__all__ = [
    "CSV_COLUMNS",
    "SUMMARY_SCHEMA",
    "build_summary",
    "emit_outputs",
    "plot_criterion",
    "read_curve_csv",
    "validate_summary",
    "write_curve_csv",
]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_curve_csv(path: Path, records: Sequence[RoundRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([rec.round, _fmt(rec.train_loss), _fmt(rec.train_sq_grad_norm), _fmt(rec.test_loss)])


def read_curve_csv(path) -> list[RoundRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [RoundRecord(int(r), float(a), float(b), float(c)) for r, a, b, c in reader]


def _json_float(v: float) -> Optional[float]:
    return float(v) if math.isfinite(v) else None


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample std (ddof 1; zero for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _t_tests(summaries: Sequence[RunSummary], baseline: str) -> list[dict]:
    """Paired one-sided tests of ``algo - baseline < 0`` over shared seeds."""
    by_key = {(s.algo, s.seed): s for s in summaries if s.ok}
    algos = sorted({s.algo for s in summaries if s.algo != baseline})
    tests = []
    for criterion in CRITERIA:
        for algo in algos:
            seeds = sorted(
                seed for (a, seed) in by_key if a == algo and (baseline, seed) in by_key
            )
            if len(seeds) < 2:
                continue
            diffs = [by_key[algo, s].minima[criterion] - by_key[baseline, s].minima[criterion] for s in seeds]
            if not all(math.isfinite(d) for d in diffs):
                continue
            t, p = paired_one_sided_t_test(diffs)
            tests.append({
                "criterion": criterion, "algo": algo, "baseline": baseline, "seeds": seeds,
                "diffs": diffs, "t": _json_float(t), "p": p,
            })
    return tests


def build_summary(
    cfg: ExperimentConfig,
    summaries: Sequence[RunSummary],
    curve_files: dict,
    baseline: str = "dp-gd",
) -> dict:
    runs = []
    for s in summaries:
        entry = s.to_dict()
        entry["minima"] = {k: _json_float(v) for k, v in s.minima.items()}
        entry["curve_files"] = curve_files.get((s.algo, s.seed), {})
        runs.append(entry)
    aggregates, comm_totals = {}, {}
    for algo in cfg.algos:
        ok = [s for s in summaries if s.algo == algo and s.ok]
        aggregates[algo] = {}
        for criterion in CRITERIA:
            values = [s.minima[criterion] for s in ok]
            mean, std = _mean_std(values)
            aggregates[algo][criterion] = {
                "values": [_json_float(v) for v in values],
                "mean": _json_float(mean),
                "std": _json_float(std),
            }
        comm_totals[algo] = {
            "vectors_up": sum(s.comm["vectors_up"] for s in ok),
            "vectors_down": sum(s.comm["vectors_down"] for s in ok),
            "runs": len(ok),
        }
    return {
        "format_version": SUMMARY_VERSION,
        "config": cfg.to_dict(),
        "runs": runs,
        "aggregates": aggregates,
        "t_tests": _t_tests(summaries, baseline),
        "comm_totals": comm_totals,
    }


def validate_summary(summary: dict) -> None:
    jsonschema.validate(summary, SUMMARY_SCHEMA)


def plot_criterion(path: Path, summaries: Sequence[RunSummary], criterion: str) -> None:
    """Mean +- std band over seeds of one criterion's per-round curve."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    algos = list(dict.fromkeys(s.algo for s in summaries))
    for algo in algos:
        curves = [s.curves[criterion] for s in summaries if s.algo == algo and s.ok]
        if not curves:
            continue
        length = min(len(c) for c in curves)
        values = np.array([[getattr(rec, criterion) for rec in c[:length]] for c in curves])
        rounds = np.arange(length)
        mean = values.mean(axis=0)
        std = values.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(length)
        (line,) = ax.plot(rounds, mean, label=algo, lw=1.2)
        ax.fill_between(rounds, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
    ax.set_xlabel("communication round")
    ax.set_ylabel(criterion.replace("_", " "))
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    # fixed salt and no date keep the SVG reproducible
    with plt.rc_context({"svg.hashsalt": "diff2"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(cfg: ExperimentConfig, summaries: Sequence[RunSummary], out_dir) -> dict:
    """Write every output file; returns the summary dictionary."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    curve_files = {}
    for s in summaries:
        if not s.ok:
            continue
        files = {}
        for criterion in TUNED_CRITERIA:
            rel = Path("curves") / s.algo / f"seed{s.seed}_{criterion}.csv"
            write_curve_csv(out / rel, s.curves[criterion])
            files[criterion] = rel.as_posix()
        files["test_loss"] = files["train_loss"]
        curve_files[s.algo, s.seed] = files
    summary = build_summary(cfg, summaries, curve_files)
    validate_summary(summary)
    with (out / "summary.json").open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
        fh.write("\n")
    for criterion in CRITERIA:
        plot_criterion(out / f"{criterion}.svg", summaries, criterion)
    return summary
