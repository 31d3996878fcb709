"""Synthetic cohorts with a planted modality-importance hierarchy.

Each stay draws one standard-normal latent severity per modality. Mortality
risk is ``sigmoid(k * (u - c))`` where ``u`` is the signal-weighted sum of the
latents (standardised to unit variance) and ``c`` is solved so the expected
prevalence equals ``positive_rate``. The label is a Bernoulli draw from that
risk followed by label-flip noise.

Modality ``m`` exposes its latent as an additive drift
``amplitude * w[m] * z[m] * ramp(t)`` on a designated subset of its features,
on top of AR(1) noise. ``ramp`` rises linearly over ``ramp_hours`` hours, so
the evidence accrues with observation time. Static modalities carry the latent
through the age bucket (demo) and a block of diagnosis codes (diag).

Randomness is keyed by ``(seed, stay index, stream)`` through Philox, so a
stay's content does not depend on how many other stays are generated or in
which order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter
from scipy.special import expit

from dticu.data import ALL_MODALITIES, SEQ_MODALITIES, CohortSchema, IcuStay
from dticu.errors import ConfigError, GenerationError

# Mirrors the hierarchy learned on MIMIC-IV: procedures and outputs dominant,
# medications/ingredients intermediate, the rest contextual. A construction for
# testing attribution recovery, not a statement about real data.
DEFAULT_SIGNAL_WEIGHTS = {
    "proc": 0.9,
    "out": 0.7,
    "meds": 0.5,
    "ing": 0.4,
    "chart": 0.15,
    "date": 0.1,
    "diag": 0.1,
    "demo": 0.1,
}

_STAY_STREAM = len(ALL_MODALITIES)
_N_DIAG_SIGNAL = 8


@dataclass
class GenConfig:
    n_stays: int = 2000
    positive_rate: float = 0.08
    length_range: tuple[int, int] = (4, 240)
    schema: CohortSchema = field(default_factory=CohortSchema)
    signal_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGNAL_WEIGHTS))
    noise_std: float = 1.0
    seed: int = 0
    label_flip: float = 0.02
    risk_sharpness: float = 4.0
    signal_amplitude: float = 3.0
    ramp_hours: float = 24.0
    ar_coef: float = 0.7

    def __post_init__(self):
        self.length_range = tuple(int(v) for v in self.length_range)
        self.signal_weights = {m: float(self.signal_weights.get(m, 0.0)) for m in ALL_MODALITIES} | {
            k: float(v) for k, v in self.signal_weights.items()
        }

    def validate(self) -> None:
        if self.n_stays < 0:
            raise GenerationError(f"n_stays must be non-negative, got {self.n_stays}")
        if not 0.0 < self.positive_rate < 1.0:
            raise GenerationError(f"positive_rate must lie in (0, 1), got {self.positive_rate}")
        lo, hi = self.length_range
        if lo < 4 or hi > 240 or lo > hi:
            raise GenerationError(f"length_range must satisfy 4 <= min <= max <= 240, got {self.length_range}")
        unknown = set(self.signal_weights) - set(ALL_MODALITIES)
        if unknown:
            raise GenerationError(f"signal_weights names unknown modalities {sorted(unknown)}")
        for m, w in self.signal_weights.items():
            if not 0.0 <= w <= 1.0:
                raise GenerationError(f"signal weight for {m} must lie in [0, 1], got {w}")
            if w > 0 and m in SEQ_MODALITIES and self.schema.widths.get(m, 0) < 1:
                raise GenerationError(f"modality {m} has zero width but positive signal weight")
        if self.noise_std < 0:
            raise GenerationError(f"noise_std must be non-negative, got {self.noise_std}")
        if not 0.0 <= self.label_flip < 0.5:
            raise GenerationError(f"label_flip must lie in [0, 0.5), got {self.label_flip}")
        if self.risk_sharpness <= 0 or self.ramp_hours <= 0:
            raise GenerationError("risk_sharpness and ramp_hours must be positive")
        if not 0.0 <= self.ar_coef < 1.0:
            raise GenerationError(f"ar_coef must lie in [0, 1), got {self.ar_coef}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = self.schema.to_dict()
        d["length_range"] = list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "schema" in d and not isinstance(d["schema"], CohortSchema):
            try:
                d["schema"] = CohortSchema.from_dict(d["schema"])
            except (ConfigError, KeyError) as exc:
                raise GenerationError(f"invalid schema: {exc}") from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GenerationError(f"unknown generator config keys {sorted(unknown)}")
        return cls(**d)


def planted_importance_order(cfg: GenConfig) -> list[str]:
    """Modalities by descending signal weight, ties broken alphabetically."""
    w = cfg.signal_weights
    return sorted(ALL_MODALITIES, key=lambda m: (-w.get(m, 0.0), m))


@lru_cache(maxsize=64)
def _risk_offset(sharpness: float, prevalence: float, has_signal: bool) -> float:
    """Offset c with E_u[sigmoid(k (u - c))] = prevalence for u ~ N(0, 1)."""
    if not has_signal:
        return -math.log(prevalence / (1.0 - prevalence)) / sharpness
    nodes, weights = np.polynomial.hermite_e.hermegauss(120)
    weights = weights / weights.sum()

    def gap(c):
        return float(weights @ expit(sharpness * (nodes - c))) - prevalence

    return brentq(gap, -40.0, 40.0, xtol=1e-14)


def _rng(seed: int, stay_index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stay_index, stream])))


def _ar_noise(rng, T: int, F: int, coef: float, std: float) -> np.ndarray:
    """Stationary AR(1) columns: x[0] = e[0], x[t] = coef x[t-1] + sqrt(1 - coef^2) e[t]."""
    shocks = rng.standard_normal((T, F)) * std
    innov = math.sqrt(1.0 - coef * coef)
    zi = ((1.0 - innov) * shocks[0])[None, :]
    out, _ = lfilter([innov], [1.0, -coef], shocks, axis=0, zi=zi)
    return out


def _stay(cfg: GenConfig, index: int) -> IcuStay:
    schema = cfg.schema
    w = cfg.signal_weights
    norm = math.sqrt(sum(w[m] ** 2 for m in ALL_MODALITIES))
    stay_rng = _rng(cfg.seed, index, _STAY_STREAM)
    T = int(stay_rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
    label_draw, flip_draw = stay_rng.random(2)

    ramp = np.minimum(1.0, (np.arange(T) + 1.0) / cfg.ramp_hours)
    seq = {}
    latents = {}
    for j, m in enumerate(ALL_MODALITIES):
        rng = _rng(cfg.seed, index, j)
        z = float(rng.standard_normal())
        latents[m] = z
        drift = cfg.signal_amplitude * w[m] * z
        if m in SEQ_MODALITIES:
            F = schema.widths[m]
            x = _ar_noise(rng, T, F, cfg.ar_coef, cfg.noise_std)
            n_sig = max(1, F // 3)
            x[:, :n_sig] += drift * ramp[:, None]
            seq[m] = x
        elif m == "demo":
            codes = [int(rng.integers(v)) for v in schema.demo_vocab]
            age_vocab = schema.demo_vocab[1]
            centre = (age_vocab - 1) / 2.0 + 1.5 * drift * (age_vocab / 10.0)
            codes[1] = int(np.clip(np.rint(centre + rng.standard_normal()), 0, age_vocab - 1))
            demo = tuple(codes)
        else:
            V = schema.diag_vocab
            n_sig = min(_N_DIAG_SIGNAL, V)
            p = np.empty(V)
            p[:n_sig] = expit(-1.5 + 2.0 * drift)
            p[n_sig:] = 0.15 / (1.0 + np.arange(V - n_sig) / 8.0)
            diag = frozenset(np.flatnonzero(rng.random(V) < p).tolist())

    u = sum(w[m] * latents[m] for m in ALL_MODALITIES) / norm if norm > 0 else 0.0
    c = _risk_offset(cfg.risk_sharpness, cfg.positive_rate, norm > 0)
    label = int(label_draw < expit(cfg.risk_sharpness * (u - c)))
    # Class-matched flips keep the expected prevalence at positive_rate.
    p = cfg.positive_rate
    flip_p = cfg.label_flip if label else cfg.label_flip * p / (1.0 - p)
    if flip_draw < flip_p:
        label = 1 - label
    return IcuStay(stay_id=f"s{index:06d}", seq=seq, demo=demo, diag=diag, label=label)


def generate(cfg: GenConfig, threads: int = 1) -> list[IcuStay]:
    """Deterministic synthetic cohort for ``cfg`` (independent of ``threads``)."""
    cfg.validate()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda i: _stay(cfg, i), range(cfg.n_stays)))
    return [_stay(cfg, i) for i in range(cfg.n_stays)]


def stay_latents(cfg: GenConfig, index: int) -> dict[str, float]:
    """Per-modality latent severities of stay ``index`` (for oracle checks)."""
    return {m: float(_rng(cfg.seed, index, j).standard_normal()) for j, m in enumerate(ALL_MODALITIES)}
