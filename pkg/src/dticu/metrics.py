"""Classification and regression metrics for imbalanced mortality prediction.

Conventions:

* AUROC is the Mann-Whitney probability that a random positive outscores a
  random negative, ties credited 0.5.
* AUPRC is average precision with step interpolation: the mean over positives
  of precision at that positive's rank, ranking by descending score with ties
  kept in input order.
* Precision with no positive predictions is undefined; it is reported as 0
  and flagged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from dticu.errors import ContractError, MetricUndefinedError

DEFAULT_THRESHOLD = 0.5
METRIC_NAMES = ("auroc", "auprc", "accuracy", "precision", "recall")


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ContractError("scores must be finite")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> float:
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs both classes present")
    ranks = stats.rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return math.fsum(precision[hits == 1]) / n_pos


@dataclass(frozen=True)
class ThresholdMetrics:
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_defined: bool
    recall_defined: bool


def threshold_metrics(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ThresholdMetrics:
    """Confusion-matrix ratios for predictions ``score >= threshold``."""
    s, y = _prep(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    n = tp + fp + fn + tn
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return ThresholdMetrics(accuracy, precision, recall, tp, fp, fn, tn,
                            precision_defined=tp + fp > 0, recall_defined=tp + fn > 0)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ContractError(f"pearson: lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise MetricUndefinedError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise MetricUndefinedError("pearson is undefined for zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of H0: rho = 0 via the t transform with n - 2 dof."""
    if n < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def masked_mse(pred, target, mask) -> float:
    """Mean squared error over entries where ``mask`` is nonzero.

    ``mask`` may have the full shape or the leading dimensions of ``pred``.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ContractError(f"pred shape {p.shape} != target shape {t.shape}")
    m = np.asarray(mask).astype(bool)
    if m.shape != p.shape:
        if p.shape[: m.ndim] != m.shape:
            raise ContractError(f"mask shape {m.shape} does not lead pred shape {p.shape}")
        m = np.broadcast_to(m.reshape(m.shape + (1,) * (p.ndim - m.ndim)), p.shape)
    if not m.any():
        raise MetricUndefinedError("masked_mse over an empty mask")
    diff = (p - t)[m]
    return float(np.mean(diff * diff))


@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    accuracy: float
    precision: float
    recall: float
    mse: float
    threshold: float
    n_pos: int
    n_neg: int
    loss: float = float("nan")
    flags: list[str] = field(default_factory=list)

    def get(self, name: str) -> float:
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(scores, labels, threshold: float = DEFAULT_THRESHOLD,
                    mse: float = float("nan"), loss: float = float("nan")) -> MetricsReport:
    """All classification metrics at once; undefined ones become NaN (or 0) plus a flag."""
    s, y = _prep(scores, labels)
    flags = []
    try:
        roc = auroc(s, y)
    except MetricUndefinedError:
        roc = float("nan")
        flags.append("auroc_undefined")
    try:
        ap = auprc(s, y)
    except MetricUndefinedError:
        ap = float("nan")
        flags.append("auprc_undefined")
    tm = threshold_metrics(s, y, threshold)
    if not tm.precision_defined:
        flags.append("precision_undefined")
    if not tm.recall_defined:
        flags.append("recall_undefined")
    n_pos = int(y.sum())
    return MetricsReport(auroc=roc, auprc=ap, accuracy=tm.accuracy, precision=tm.precision,
                         recall=tm.recall, mse=float(mse), threshold=threshold, n_pos=n_pos,
                         n_neg=int(y.size - n_pos), loss=float(loss), flags=flags)
