"""Leave-one / leave-two modality-out attribution, metric scatter and
test-length sweeps on a fixed trained model.

Zeroing happens at inference only; every configuration shares the same
evaluation set and decision threshold, so a delta isolates the information
removed rather than any threshold drift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dticu.data import ALL_MODALITIES, IcuStay, truncate
from dticu.errors import MetricUndefinedError
from dticu.metrics import MetricsReport, pearson, pearson_pvalue
from dticu.model import DtIcuModel
from dticu.training import evaluate

DELTA_METRICS = ("auroc", "auprc", "accuracy", "precision", "recall", "mse", "loss")
HEATMAP_METRICS = ("auroc", "auprc", "accuracy", "precision", "recall")
SCATTER_PAIRS = (("auroc", "auprc"), ("precision", "recall"))
DEFAULT_SWEEP_HOURS = (4, 8, 12, 24, 36, 48, 60, 72, 84, 96)


@dataclass
class AblationCell:
    zero_out: tuple[str, ...]
    metrics: MetricsReport
    delta: dict[str, float]


@dataclass
class Correlation:
    rho: float
    p_value: float
    defined: bool


@dataclass
class AblationReport:
    baseline: MetricsReport
    lomo: dict[str, AblationCell] = field(default_factory=dict)
    ltmo: dict[tuple[str, str], AblationCell] = field(default_factory=dict)
    correlations: dict[tuple[str, str], Correlation] = field(default_factory=dict)


def pair_key(a: str, b: str) -> tuple[str, str]:
    """Canonical unordered pair, in modality order."""
    ia, ib = ALL_MODALITIES.index(a), ALL_MODALITIES.index(b)
    return (a, b) if ia < ib else (b, a)


def all_pairs() -> list[tuple[str, str]]:
    return list(combinations(ALL_MODALITIES, 2))


def deltas(ablated: MetricsReport, baseline: MetricsReport) -> dict[str, float]:
    return {m: ablated.get(m) - baseline.get(m) for m in DELTA_METRICS}


def evaluate_configuration(model: DtIcuModel, stays: Sequence[IcuStay], zero_out: Iterable[str],
                           baseline: MetricsReport, threshold: float = 0.5,
                           threads: int = 1) -> AblationCell:
    """The single code path behind every LOMO and LTMO cell."""
    key = tuple(sorted(set(zero_out), key=ALL_MODALITIES.index))
    metrics = evaluate(model, stays, key, threshold=threshold, threads=threads)
    return AblationCell(zero_out=key, metrics=metrics, delta=deltas(metrics, baseline))


def run_lomo(model, stays, threshold: float = 0.5, threads: int = 1,
             baseline: MetricsReport | None = None) -> tuple[MetricsReport, dict[str, AblationCell]]:
    if baseline is None:
        baseline = evaluate(model, stays, threshold=threshold, threads=threads)
    cells = {m: evaluate_configuration(model, stays, {m}, baseline, threshold, threads)
             for m in ALL_MODALITIES}
    return baseline, cells


def run_ltmo(model, stays, threshold: float = 0.5, threads: int = 1,
             baseline: MetricsReport | None = None) -> tuple[MetricsReport, dict[tuple[str, str], AblationCell]]:
    if baseline is None:
        baseline = evaluate(model, stays, threshold=threshold, threads=threads)
    cells = {p: evaluate_configuration(model, stays, set(p), baseline, threshold, threads)
             for p in all_pairs()}
    return baseline, cells


def run_ablation(model, stays, threshold: float = 0.5, threads: int = 1) -> AblationReport:
    """Baseline, 8 LOMO and 28 LTMO evaluations plus metric correlations."""
    baseline, lomo = run_lomo(model, stays, threshold, threads)
    _, ltmo = run_ltmo(model, stays, threshold, threads, baseline=baseline)
    report = AblationReport(baseline=baseline, lomo=lomo, ltmo=ltmo)
    report.correlations = metric_scatter(report)[1]
    return report


def ltmo_matrix(report: AblationReport, metric: str, kind: str = "delta") -> np.ndarray:
    """8x8 symmetric matrix in modality order with a NaN diagonal."""
    n = len(ALL_MODALITIES)
    mat = np.full((n, n), np.nan)
    for (a, b), cell in report.ltmo.items():
        v = cell.delta[metric] if kind == "delta" else cell.metrics.get(metric)
        i, j = ALL_MODALITIES.index(a), ALL_MODALITIES.index(b)
        mat[i, j] = mat[j, i] = v
    return mat


def metric_scatter(report: AblationReport):
    """Per-pair metric points and Pearson correlations over the 28 LTMO cells.

    Returns ``(rows, correlations)``; rows hold each pair's raw metrics, with
    the baseline appended last as the reference point.
    """
    pairs = all_pairs()
    rows = []
    for p in pairs:
        m = report.ltmo[p].metrics
        rows.append({"config": "+".join(p), **{k: m.get(k) for k in HEATMAP_METRICS}})
    rows.append({"config": "baseline", **{k: report.baseline.get(k) for k in HEATMAP_METRICS}})
    corr = {}
    for x, y in SCATTER_PAIRS:
        xs = [report.ltmo[p].metrics.get(x) for p in pairs]
        ys = [report.ltmo[p].metrics.get(y) for p in pairs]
        try:
            if not all(map(math.isfinite, xs + ys)):
                raise MetricUndefinedError("undefined metric values among pairs")
            rho = pearson(xs, ys)
            corr[(x, y)] = Correlation(rho, pearson_pvalue(rho, len(xs)), True)
        except MetricUndefinedError:
            corr[(x, y)] = Correlation(float("nan"), float("nan"), False)
    return rows, corr


def test_length_sweep(model, stays, hours_list: Iterable[int] = DEFAULT_SWEEP_HOURS,
                      threshold: float = 0.5, threads: int = 1) -> list[tuple[int, MetricsReport]]:
    """Evaluate with every stay truncated to ``h`` hours (shorter stays kept whole)."""
    hours = [int(h) for h in hours_list]
    if not hours or min(hours) < 4:
        raise ValueError("hours_list must be non-empty with every entry >= 4")
    out = []
    for h in hours:
        cut = [truncate(s, h) for s in stays]
        out.append((h, evaluate(model, cut, threshold=threshold, threads=threads)))
    return out


test_length_sweep.__test__ = False  # not a pytest test despite the name


# -- writers ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_lomo_csv(report: AblationReport, path) -> None:
    header = ["zeroed"] + [f"{m}" for m in DELTA_METRICS] + [f"delta_{m}" for m in DELTA_METRICS] + ["flags"]
    base = [report.baseline.get(m) for m in DELTA_METRICS]
    rows = [["baseline"] + base + [0.0] * len(DELTA_METRICS) + [";".join(report.baseline.flags)]]
    for mod in ALL_MODALITIES:
        c = report.lomo[mod]
        rows.append([mod] + [c.metrics.get(m) for m in DELTA_METRICS]
                    + [c.delta[m] for m in DELTA_METRICS] + [";".join(c.metrics.flags)])
    _write(Path(path), header, rows)


def write_ltmo_csvs(report: AblationReport, directory) -> list[Path]:
    paths = []
    for metric in DELTA_METRICS:
        mat = ltmo_matrix(report, metric)
        path = Path(directory) / f"ltmo_{metric}.csv"
        _write(path, ["modality"] + list(ALL_MODALITIES),
               [[m] + list(row) for m, row in zip(ALL_MODALITIES, mat)])
        paths.append(path)
    return paths


def write_scatter_csv(report: AblationReport, path) -> None:
    rows, corr = metric_scatter(report)
    _write(Path(path), ["config"] + list(HEATMAP_METRICS),
           [[r["config"]] + [r[m] for m in HEATMAP_METRICS] for r in rows])
    with open(path, "a", newline="") as fh:
        for (x, y), c in corr.items():
            fh.write(f"# pearson {x} {y} rho={_fmt(c.rho)} p={_fmt(c.p_value)} defined={c.defined}\n")


def write_sweep_csv(sweep: list[tuple[int, MetricsReport]], path) -> None:
    cols = ("auroc", "auprc", "accuracy", "precision", "recall", "mse", "loss")
    _write(Path(path), ["hours"] + list(cols) + ["n_pos", "n_neg"],
           [[h] + [r.get(c) for c in cols] + [r.n_pos, r.n_neg] for h, r in sweep])


def write_report(report: AblationReport, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_lomo_csv(report, out / "lomo.csv")
    paths = [out / "lomo.csv"] + write_ltmo_csvs(report, out)
    write_scatter_csv(report, out / "scatter.csv")
    return paths + [out / "scatter.csv"]
