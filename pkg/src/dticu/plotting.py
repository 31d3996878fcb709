"""Figures for ablation and sweep reports (SVG via the Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dticu"  # stable element ids across runs
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import TwoSlopeNorm  # noqa: E402

from dticu.ablation import HEATMAP_METRICS, AblationReport, ltmo_matrix, metric_scatter  # noqa: E402
from dticu.data import ALL_MODALITIES  # noqa: E402

# Negative deltas in blue, positive in red, white at zero.
DIVERGING_CMAP = "RdBu_r"
_LABELS = {"auroc": "AUROC", "auprc": "AUPRC", "accuracy": "Accuracy",
           "precision": "Precision", "recall": "Recall"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg", bbox_inches="tight",
                metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def _norm(values: np.ndarray) -> TwoSlopeNorm:
    finite = values[np.isfinite(values)]
    span = float(np.abs(finite).max()) if finite.size else 0.0
    span = span if span > 0 else 1e-3
    return TwoSlopeNorm(vcenter=0.0, vmin=-span, vmax=span)


def heatmap(report: AblationReport, metric: str, path) -> Path:
    """Pairwise-removal delta matrix with the diagonal masked."""
    mat = ltmo_matrix(report, metric)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    masked = np.ma.masked_invalid(mat)
    cmap = plt.get_cmap(DIVERGING_CMAP).copy()
    cmap.set_bad("#d9d9d9")
    im = ax.imshow(masked, cmap=cmap, norm=_norm(mat))
    names = [m.capitalize() for m in ALL_MODALITIES]
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    for i in range(len(names)):
        for j in range(len(names)):
            if i != j and math.isfinite(mat[i, j]):
                ax.text(j, i, f"{mat[i, j]:+.2f}", ha="center", va="center", fontsize=6)
    ax.set_title(f"Δ{_LABELS.get(metric, metric)} (pair removed)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def scatter(report: AblationReport, path) -> Path:
    """AUROC vs AUPRC and precision vs recall over the 28 pair configurations."""
    rows, corr = metric_scatter(report)
    pts, base = rows[:-1], rows[-1]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, (x, y) in zip(axes, corr):
        ax.scatter([r[x] for r in pts], [r[y] for r in pts], s=18, color="#2b6cb0", label="pair removed")
        ax.scatter([base[x]], [base[y]], marker="*", s=120, color="#c53030", label="baseline")
        c = corr[(x, y)]
        note = f"ρ={c.rho:.3f}, p={c.p_value:.2g}" if c.defined else "ρ undefined"
        ax.set_title(f"{_LABELS[x]} vs {_LABELS[y]} ({note})")
        ax.set_xlabel(_LABELS[x])
        ax.set_ylabel(_LABELS[y])
        ax.legend(fontsize=7)
    return _save(fig, path)


def lomo_bars(report: AblationReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3.6))
    width = 0.8 / len(HEATMAP_METRICS)
    x = np.arange(len(ALL_MODALITIES))
    for k, metric in enumerate(HEATMAP_METRICS):
        vals = [report.lomo[m].delta[metric] for m in ALL_MODALITIES]
        ax.bar(x + k * width, vals, width, label=_LABELS[metric])
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_xticks(x + 0.4 - width / 2, [m.capitalize() for m in ALL_MODALITIES])
    ax.set_ylabel("Δ vs all modalities")
    ax.legend(fontsize=7, ncol=len(HEATMAP_METRICS))
    return _save(fig, path)


def sweep_plot(sweep, path) -> Path:
    hours = [h for h, _ in sweep]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for metric in ("auroc", "auprc", "recall"):
        ax.plot(hours, [r.get(metric) for _, r in sweep], marker="o", label=_LABELS[metric])
    ax.set_xlabel("hours of history at inference")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    return _save(fig, path)


def rollout_plot(risks: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(risks)), risks, marker=".")
    ax.set_xlabel("simulated hours ahead")
    ax.set_ylabel("mortality risk")
    ax.set_ylim(0, 1)
    return _save(fig, path)


def render_ablation(report: AblationReport, directory) -> list[Path]:
    out = Path(directory)
    paths = [heatmap(report, m, out / f"heatmap_{m}.svg") for m in HEATMAP_METRICS]
    paths.append(scatter(report, out / "scatter.svg"))
    paths.append(lomo_bars(report, out / "lomo.svg"))
    return paths
