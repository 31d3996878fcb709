"""Published MIMIC-IV ablation results, shipped as an overlay for report figures.

These are documentation anchors from full-cohort MIMIC-IV runs
and are never used as pass/fail targets at desk scale.
"""

from __future__ import annotations

import csv
import io

REFERENCE_METRICS = ("loss", "auroc", "auprc", "accuracy", "precision", "recall")

# Raw metric values (the deltas are recoverable against the baseline row).
_LOMO = """\
baseline,0.01,0.98,0.83,0.96,0.62,0.90
meds,0.01,0.98,0.80,0.96,0.65,0.84
chart,0.01,0.98,0.83,0.96,0.62,0.89
out,0.01,0.98,0.79,0.92,0.44,0.93
proc,0.01,0.95,0.64,0.95,0.62,0.60
date,0.01,0.98,0.83,0.96,0.62,0.90
ing,0.02,0.98,0.80,0.94,0.51,0.91
demo,0.04,0.97,0.80,0.95,0.60,0.86
diag,0.01,0.98,0.83,0.96,0.62,0.90
"""

_LTMO = """\
meds,chart,0.12,0.98,0.80,0.96,0.65,0.83
meds,out,0.21,0.97,0.76,0.92,0.47,0.91
meds,proc,0.19,0.91,0.49,0.94,0.64,0.32
meds,date,0.12,0.98,0.80,0.96,0.65,0.84
meds,ing,0.15,0.97,0.79,0.95,0.60,0.82
meds,diag,0.12,0.98,0.80,0.96,0.65,0.83
meds,demo,0.16,0.97,0.77,0.95,0.63,0.78
chart,out,0.23,0.98,0.79,0.92,0.44,0.93
chart,proc,0.16,0.94,0.64,0.95,0.62,0.58
chart,date,0.13,0.98,0.83,0.96,0.62,0.89
chart,ing,0.18,0.98,0.79,0.94,0.52,0.90
chart,diag,0.13,0.98,0.83,0.96,0.62,0.89
chart,demo,0.17,0.97,0.80,0.95,0.60,0.85
out,proc,0.25,0.93,0.54,0.91,0.40,0.70
out,date,0.23,0.98,0.80,0.92,0.44,0.93
out,ing,0.34,0.97,0.77,0.87,0.34,0.95
out,diag,0.23,0.98,0.79,0.92,0.44,0.93
out,demo,0.34,0.97,0.76,0.89,0.36,0.93
proc,date,0.16,0.95,0.64,0.95,0.62,0.61
proc,ing,0.24,0.93,0.58,0.92,0.45,0.67
proc,diag,0.16,0.95,0.64,0.95,0.62,0.60
proc,demo,0.21,0.93,0.60,0.95,0.64,0.52
date,ing,0.19,0.98,0.80,0.94,0.51,0.90
date,diag,0.13,0.98,0.83,0.96,0.62,0.90
date,demo,0.18,0.97,0.80,0.95,0.60,0.86
ing,diag,0.19,0.98,0.79,0.94,0.52,0.90
ing,demo,0.27,0.97,0.77,0.92,0.44,0.89
diag,demo,0.17,0.97,0.80,0.95,0.60,0.84
"""

# Pearson correlations across the 28 pairwise configurations.
REFERENCE_CORRELATIONS = {
    ("auroc", "auprc"): (0.975, 0.0001),
    ("precision", "recall"): (-0.425, 0.024),
}


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def reference_lomo() -> dict[str, dict[str, float]]:
    """Zeroed modality (or ``baseline``) -> metric -> value."""
    return {r[0]: dict(zip(REFERENCE_METRICS, map(float, r[1:]))) for r in _rows(_LOMO)}


def reference_ltmo() -> dict[tuple[str, str], dict[str, float]]:
    """Unordered modality pair (alphabetical tuple) -> metric -> value."""
    out = {}
    for r in _rows(_LTMO):
        out[tuple(sorted(r[:2]))] = dict(zip(REFERENCE_METRICS, map(float, r[2:])))
    return out


def reference_delta(config, metric: str) -> float:
    """Published delta for a LOMO modality name or LTMO pair."""
    base = reference_lomo()["baseline"][metric]
    if isinstance(config, str):
        return reference_lomo()[config][metric] - base
    return reference_ltmo()[tuple(sorted(config))][metric] - base
