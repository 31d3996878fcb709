"""Training loop with random length sampling and the four batch-balancing
strategies, plus length-bucketed evaluation."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from dticu import tensor as T
from dticu.checkpoint import restore, snapshot
from dticu.data import IcuStay, ModalityBundle, collate, truncate
from dticu.errors import ConfigError, NonFiniteLossError, SamplerError
from dticu.metrics import MetricsReport, evaluate_scores
from dticu.model import DtIcuModel, forward, loss_terms, regression_mse

log = logging.getLogger(__name__)

BALANCING = ("none", "length_only", "label_only", "both")
N_LENGTH_BINS = 8
_SAMPLER_STREAM = 0x5A3


@dataclass
class TrainConfig:
    lr: float = 5e-7
    batch_size: int = 16
    steps: int = 1000
    lambda_reg: float = 0.5
    length_sample_range: tuple[int, int] = (4, 240)
    balancing: str = "both"
    seed: int = 0
    eval_every: int = 50
    patience: int = 10
    threshold: float = 0.5

    def __post_init__(self):
        self.length_sample_range = tuple(int(v) for v in self.length_sample_range)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lambda_reg < 0:
            raise ConfigError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        lo, hi = self.length_sample_range
        if lo < 1 or lo > hi:
            raise ConfigError(f"length_sample_range must satisfy 1 <= min <= max, got {self.length_sample_range}")
        if self.balancing not in BALANCING:
            raise ConfigError(f"balancing must be one of {BALANCING}, got {self.balancing!r}")
        if self.eval_every < 0 or self.patience < 1:
            raise ConfigError("eval_every must be >= 0 and patience >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_sample_range"] = list(self.length_sample_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys {sorted(unknown)}")
        return cls(**d)


# -- sampling --------------------------------------------------------------------------


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Sampler substream for one step, independent of every other step."""
    return np.random.default_rng([seed, step, _SAMPLER_STREAM])


def length_bins(lo: int, hi: int, n_bins: int = N_LENGTH_BINS) -> list[tuple[int, int]]:
    """``n_bins`` equal-width integer bins covering [lo, hi] inclusive."""
    span = hi - lo + 1
    edges = [lo + (span * k) // n_bins for k in range(n_bins + 1)]
    return [(edges[k], max(edges[k], edges[k + 1] - 1)) for k in range(n_bins)]


def _labels(cohort) -> np.ndarray:
    return np.array([s.label for s in cohort], dtype=np.int64)


def sample_plan(cohort: Sequence[IcuStay], cfg: TrainConfig,
                rng: np.random.Generator) -> list[tuple[int, int]]:
    """(stay index, truncated length) for each batch slot."""
    if not cohort:
        raise SamplerError("cannot sample from an empty cohort")
    lo, hi = cfg.length_sample_range
    B = cfg.batch_size
    lengths = np.array([s.T for s in cohort])
    labels = _labels(cohort)
    by_label = cfg.balancing in ("label_only", "both")
    if by_label:
        pools = [np.flatnonzero(labels == c) for c in (0, 1)]
        if len(pools[0]) == 0 or len(pools[1]) == 0:
            raise SamplerError("label balancing needs both classes in the cohort")

    def random_length(T: int) -> int:
        top = min(T, hi)
        return top if top <= lo else int(rng.integers(lo, top + 1))

    plan = []
    if cfg.balancing == "none":
        for i in rng.integers(len(cohort), size=B):
            plan.append((int(i), int(min(lengths[i], hi))))
    elif cfg.balancing == "label_only":
        for slot in range(B):
            i = int(rng.choice(pools[slot % 2]))
            plan.append((i, random_length(int(lengths[i]))))
    else:
        bins = length_bins(lo, max(lo, min(hi, int(lengths.max()))))
        for slot in range(B):
            if by_label:
                pool, b = pools[slot % 2], (slot // 2) % N_LENGTH_BINS
            else:
                pool, b = np.arange(len(cohort)), slot % N_LENGTH_BINS
            a, z = bins[b]
            L = int(rng.integers(a, z + 1))
            eligible = pool[lengths[pool] >= L]
            if eligible.size == 0:
                # No stay reaches this length; use the longest ones available.
                eligible = pool[lengths[pool] == lengths[pool].max()]
            i = int(rng.choice(eligible))
            plan.append((i, int(min(L, lengths[i]))))
    return plan


def sample_batch(cohort: Sequence[IcuStay], cfg: TrainConfig, rng: np.random.Generator,
                 diag_vocab: int | None = None) -> ModalityBundle:
    plan = sample_plan(cohort, cfg, rng)
    return collate([truncate(cohort[i], L) for i, L in plan], diag_vocab)


# -- evaluation ------------------------------------------------------------------------


def _buckets(stays: Sequence[IcuStay], max_batch: int) -> list[list[int]]:
    groups = defaultdict(list)
    for i, s in enumerate(stays):
        groups[s.T].append(i)
    chunks = []
    for T_len in sorted(groups):
        idx = groups[T_len]
        chunks.extend(idx[k:k + max_batch] for k in range(0, len(idx), max_batch))
    return chunks


@dataclass
class Predictions:
    logits: np.ndarray
    labels: np.ndarray
    sq_error: float
    n_pairs_width: float


def predict(model: DtIcuModel, stays: Sequence[IcuStay], zero_out: Iterable[str] = (),
            max_batch: int = 64, threads: int = 1) -> Predictions:
    """Final-hour logits for every stay plus next-step squared error totals.

    Stays are grouped by exact length so no padding enters any forward pass;
    each stay's logit is bit-identical to a single-stay forward.
    """
    zero = frozenset(zero_out)
    vocab = model.config.schema.diag_vocab
    logits = np.empty(len(stays))
    chunks = _buckets(stays, max_batch)

    def run(idx):
        batch = collate([stays[i] for i in idx], vocab)
        out = forward(model, batch, zero)
        mse = regression_mse(out, batch)
        n = float(batch.mask[:, 1:].sum()) * model.config.schema.total_width
        return idx, out.risk_logit.data.copy(), (mse or 0.0) * n, n

    with T.no_grad():
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
    sq, count = [], []
    for idx, lg, s, n in results:
        logits[idx] = lg
        sq.append(s)
        count.append(n)
    return Predictions(logits=logits, labels=_labels(stays), sq_error=math.fsum(sq),
                       n_pairs_width=math.fsum(count))


def bce_mean(logits: np.ndarray, labels: np.ndarray) -> float:
    z = np.clip(logits, -30.0, 30.0)
    return float(np.mean(np.logaddexp(0.0, z) - labels * z))


def evaluate(model: DtIcuModel, stays: Sequence[IcuStay], zero_out: Iterable[str] = (),
             threshold: float = 0.5, threads: int = 1, lambda_reg: float | None = None) -> MetricsReport:
    """Metrics at the final observed hour of every stay.

    ``loss`` is the multitask objective evaluated over the whole set: mean BCE
    plus ``lambda_reg`` (default: the model's) times next-step MSE.
    """
    if not stays:
        raise ConfigError("evaluation set is empty")
    pred = predict(model, stays, zero_out, threads=threads)
    lam = model.config.lambda_reg if lambda_reg is None else lambda_reg
    mse = pred.sq_error / pred.n_pairs_width if pred.n_pairs_width else float("nan")
    cls = bce_mean(pred.logits, pred.labels)
    total = cls + lam * mse if pred.n_pairs_width else cls
    return evaluate_scores(expit(pred.logits), pred.labels, threshold, mse=mse, loss=total)


# -- training --------------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    loss: float
    cls_loss: float
    reg_loss: float


@dataclass
class TrainReport:
    records: list[StepRecord] = field(default_factory=list)
    evals: list[tuple[int, MetricsReport]] = field(default_factory=list)
    best_step: int | None = None
    best_auprc: float | None = None
    stopped_early: bool = False

    def loss_curve(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def write_csv(self, path) -> None:
        val = {step: m for step, m in self.evals}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "cls_loss", "reg_loss", "val_auroc", "val_auprc", "val_recall"])
            for r in self.records:
                m = val.get(r.step)
                extra = [repr(m.auroc), repr(m.auprc), repr(m.recall)] if m else ["", "", ""]
                w.writerow([r.step, repr(r.loss), repr(r.cls_loss), repr(r.reg_loss)] + extra)


def train_step(model: DtIcuModel, batch: ModalityBundle, opt: T.Adam, lambda_reg: float,
               step: int = 0) -> StepRecord:
    """One forward/backward/Adam update on ``batch``."""
    out = forward(model, batch)
    terms = loss_terms(out, batch, lambda_reg)
    value = terms.total.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(step, list(batch.stay_ids), value)
    T.backward(terms.total)
    for p in opt.params:
        if p.grad is None:
            # Parameters the loss never reached (e.g. zero-dropped heads at lambda=0).
            p.grad = np.zeros_like(p.data)
    opt.step()
    reg = terms.reg if terms.reg is not None else float("nan")
    return StepRecord(step=step, loss=value, cls_loss=terms.cls, reg_loss=reg)


def train(model: DtIcuModel, cohort: Sequence[IcuStay], cfg: TrainConfig,
          val: Sequence[IcuStay] | None = None, threads: int = 1) -> TrainReport:
    """Train in place; with ``val`` the best-AUPRC parameters are restored at the end."""
    cfg.validate()
    if not cohort:
        raise SamplerError("training cohort is empty")
    opt = T.Adam(model.parameters(), lr=cfg.lr)
    report = TrainReport()
    vocab = model.config.schema.diag_vocab
    best, since_best = None, 0
    for step in range(cfg.steps):
        batch = sample_batch(cohort, cfg, step_rng(cfg.seed, step), vocab)
        report.records.append(train_step(model, batch, opt, cfg.lambda_reg, step))
        if val and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            metrics = evaluate(model, val, threshold=cfg.threshold, threads=threads,
                               lambda_reg=cfg.lambda_reg)
            report.evals.append((step, metrics))
            log.info("step %d loss %.4f val auroc %.4f auprc %.4f", step,
                     report.records[-1].loss, metrics.auroc, metrics.auprc)
            score = metrics.auprc
            if math.isnan(score):
                continue
            if report.best_auprc is None or score > report.best_auprc:
                report.best_auprc, report.best_step = score, step
                best, since_best = snapshot(model), 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    report.stopped_early = True
                    break
    if best is not None:
        restore(model, best)
    return report
