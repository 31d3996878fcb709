"""The DT-ICU network: encoders, modality and causal temporal transformers,
static cross-attention fusion and multitask heads, plus the streaming and
rollout entry points."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from dticu import tensor as T
from dticu.data import (
    ALL_MODALITIES,
    DEMO_FIELDS,
    SEQ_MODALITIES,
    CohortSchema,
    IcuStay,
    ModalityBundle,
    append_hours,
    collate,
)
from dticu.errors import ConfigError, ContractError
from dticu.nn import (
    CrossAttentionBlock,
    LayerNorm,
    Linear,
    Module,
    TransformerBlock,
    block_param_count,
    cross_block_param_count,
    sinusoidal_table,
)
from dticu.tensor import Tensor

LOGIT_CLIP = 30.0
N_STATIC_TOKENS = len(DEMO_FIELDS) + 1


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_modality_layers: int = 1
    n_temporal_layers: int = 2
    ff_mult: int = 2
    schema: CohortSchema = field(default_factory=CohortSchema)
    lambda_reg: float = 0.5
    max_rollout: int = 240

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.n_modality_layers < 0 or self.n_temporal_layers < 0 or self.ff_mult < 1:
            raise ConfigError("layer counts must be >= 0 and ff_mult >= 1")
        if self.lambda_reg < 0:
            raise ConfigError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.max_rollout < 1:
            raise ConfigError("max_rollout must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = self.schema.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        d["schema"] = CohortSchema.from_dict(d["schema"])
        return cls(**d)


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    d, s = cfg.d_model, cfg.schema
    widths = sum(s.widths.values())
    encoders = d * widths + len(SEQ_MODALITIES) * d
    blocks = (cfg.n_modality_layers + cfg.n_temporal_layers) * block_param_count(d, cfg.ff_mult)
    demo = d * sum(s.demo_vocab)
    diag = s.diag_vocab * d + d
    fusion = cross_block_param_count(d, cfg.ff_mult)
    final_norm = 2 * d
    cls_head = d + 1
    reg_heads = d * widths + widths
    return encoders + blocks + demo + diag + fusion + final_norm + cls_head + reg_heads


@dataclass
class ModelOutput:
    risk_logit: Tensor                 # [B], at each stay's final valid hour
    next_step: dict[str, Tensor]       # modality -> [B, T_max, F]; entry t predicts hour t+1
    hidden: Tensor                     # [B, T_max, d_model]
    risk_logits_all: Tensor            # [B, T_max], risk read out at every hour
    attention: dict[str, list[np.ndarray]] | None = None


class DtIcuModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng([seed, 0xD71C])
        d, s = config.d_model, config.schema
        self.encoders = {m: Linear(s.widths[m], d, rng) for m in SEQ_MODALITIES}
        self.modality_layers = [
            TransformerBlock(d, config.n_heads, config.ff_mult, rng)
            for _ in range(config.n_modality_layers)
        ]
        self.temporal_layers = [
            TransformerBlock(d, config.n_heads, config.ff_mult, rng)
            for _ in range(config.n_temporal_layers)
        ]
        self.demo_tables = [
            Tensor(rng.normal(0.0, 1.0, size=(v, d)), requires_grad=True) for v in s.demo_vocab
        ]
        self.diag_proj = Linear(s.diag_vocab, d, rng)
        self.fusion = CrossAttentionBlock(d, config.n_heads, config.ff_mult, rng)
        self.final_norm = LayerNorm(d)
        self.cls_head = Linear(d, 1, rng, scale=0.1)
        self.reg_heads = {m: Linear(d, s.widths[m], rng, scale=0.1) for m in SEQ_MODALITIES}
        for name, p in self.named_parameters():
            p.name = name

    def positional_encoding(self, length: int) -> np.ndarray:
        return sinusoidal_table(length, self.config.d_model)

    def __call__(self, batch: ModalityBundle, zero_out: Iterable[str] = (),
                 return_attention: bool = False) -> ModelOutput:
        return forward(self, batch, zero_out, return_attention)


def _check_zero_out(zero_out) -> frozenset[str]:
    z = frozenset(zero_out)
    unknown = z - set(ALL_MODALITIES)
    if unknown:
        raise ContractError(f"unknown modality name(s) in zero_out: {sorted(unknown)}")
    return z


def forward(model: DtIcuModel, batch: ModalityBundle, zero_out: Iterable[str] = (),
            return_attention: bool = False) -> ModelOutput:
    zero = _check_zero_out(zero_out)
    cfg = model.config
    schema = cfg.schema
    widths = batch.widths()
    if widths != schema.widths:
        raise ContractError(f"batch widths {widths} do not match model schema {schema.widths}")
    diag = batch.diag
    if diag.shape[1] > schema.diag_vocab:
        raise ContractError(
            f"batch diag width {diag.shape[1]} exceeds model diag vocabulary {schema.diag_vocab}"
        )
    if diag.shape[1] < schema.diag_vocab:
        # collate without an explicit vocabulary sizes the multi-hot to the codes present.
        diag = np.pad(diag, ((0, 0), (0, schema.diag_vocab - diag.shape[1])))
    B, Tm = batch.mask.shape
    d = cfg.d_model
    attn = {"modality": [], "temporal": [], "fusion": []} if return_attention else None

    # Per-hour modality tokens, [B*T, 6, d].
    tokens = []
    for m in SEQ_MODALITIES:
        raw = np.zeros_like(batch.seq[m]) if m in zero else batch.seq[m]
        emb = model.encoders[m](Tensor(raw))
        tokens.append(T.reshape(emb, (B * Tm, 1, d)))
    tok = T.concat(tokens, axis=1)
    for layer in model.modality_layers:
        tok = layer(tok, None, attn["modality"] if attn is not None else None)
    h = T.reshape(T.mean(tok, axis=1), (B, Tm, d))

    h = h + Tensor(model.positional_encoding(Tm))
    causal = T.causal_mask(Tm)
    for layer in model.temporal_layers:
        h = layer(h, causal, attn["temporal"] if attn is not None else None)

    # Static context: six demographic embeddings and one diagnosis projection.
    static = []
    for i, table in enumerate(model.demo_tables):
        if "demo" in zero:
            static.append(Tensor(np.zeros((B, 1, d))))
        else:
            static.append(T.reshape(T.embedding(table, batch.demo[:, i]), (B, 1, d)))
    if "diag" in zero:
        static.append(Tensor(np.zeros((B, 1, d))))
    else:
        static.append(T.reshape(model.diag_proj(Tensor(diag)), (B, 1, d)))
    context = T.concat(static, axis=1)
    h = model.fusion(h, context, attn["fusion"] if attn is not None else None)

    hidden = model.final_norm(h)
    logits_all = T.reshape(model.cls_head(hidden), (B, Tm))
    last = batch.lengths - 1
    risk_logit = logits_all[np.arange(B), last]
    next_step = {m: model.reg_heads[m](hidden) for m in SEQ_MODALITIES}
    return ModelOutput(risk_logit=risk_logit, next_step=next_step, hidden=hidden,
                       risk_logits_all=logits_all, attention=attn)


# -- loss ------------------------------------------------------------------------------


@dataclass
class LossTerms:
    total: Tensor
    cls: float
    reg: float | None
    reg_valid: bool


def multitask_loss(cls_loss: Tensor, reg_loss: Tensor | None, lambda_reg: float) -> Tensor:
    """L = L_cls + lambda * L_reg."""
    if reg_loss is None or lambda_reg == 0:
        return cls_loss
    return cls_loss + reg_loss * lambda_reg


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    z = T.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    return T.mean(T.softplus(z) - Tensor(labels) * z)


def _regression_terms(out: ModelOutput, batch: ModalityBundle):
    pair_mask = batch.mask[:, 1:]
    n_pairs = float(pair_mask.sum())
    total_width = sum(batch.seq[m].shape[2] for m in SEQ_MODALITIES)
    return pair_mask, n_pairs, total_width


def regression_loss(out: ModelOutput, batch: ModalityBundle) -> Tensor | None:
    """Masked next-step MSE over every valid (t, t+1) pair; None if there is none."""
    pair_mask, n_pairs, width = _regression_terms(out, batch)
    if n_pairs == 0:
        return None
    sq = []
    for m in SEQ_MODALITIES:
        pred = out.next_step[m][:, :-1]
        target = batch.seq[m][:, 1:]
        w = np.broadcast_to(pair_mask[:, :, None], target.shape)
        diff = pred - Tensor(target)
        sq.append(T.tsum(diff * diff * Tensor(w)))
    total = sq[0]
    for s in sq[1:]:
        total = total + s
    return total / (n_pairs * width)


def regression_mse(out: ModelOutput, batch: ModalityBundle) -> float | None:
    """Numeric value of :func:`regression_loss` without building a graph."""
    pair_mask, n_pairs, width = _regression_terms(out, batch)
    if n_pairs == 0:
        return None
    acc = 0.0
    for m in SEQ_MODALITIES:
        diff = out.next_step[m].data[:, :-1] - batch.seq[m][:, 1:]
        acc += float((diff * diff * pair_mask[:, :, None]).sum())
    return acc / (n_pairs * width)


def loss_terms(out: ModelOutput, batch: ModalityBundle, lambda_reg: float) -> LossTerms:
    if lambda_reg < 0:
        raise ConfigError(f"lambda_reg must be >= 0, got {lambda_reg}")
    cls = bce_with_logits(out.risk_logit, batch.labels)
    if lambda_reg > 0:
        reg = regression_loss(out, batch)
        reg_value = None if reg is None else reg.item()
    else:
        reg = None
        reg_value = regression_mse(out, batch)
    total = multitask_loss(cls, reg, lambda_reg)
    return LossTerms(total=total, cls=cls.item(), reg=reg_value, reg_valid=reg_value is not None)


class EmptyRegressionWarning(UserWarning):
    """No valid (t, t+1) pair in the batch; only the classification term was used."""


def loss(out: ModelOutput, batch: ModalityBundle, lambda_reg: float) -> Tensor:
    """BCE on the final-hour risk logit plus ``lambda_reg`` times masked next-step MSE."""
    terms = loss_terms(out, batch, lambda_reg)
    if lambda_reg > 0 and not terms.reg_valid:
        warnings.warn("no valid next-step targets; loss uses the classification term only",
                      EmptyRegressionWarning, stacklevel=2)
    return terms.total


# -- inference entry points ------------------------------------------------------------


def _single(model: DtIcuModel, stay: IcuStay, zero_out=()) -> ModelOutput:
    with T.no_grad():
        return forward(model, collate([stay], model.config.schema.diag_vocab), zero_out)


def _last_forecast(out: ModelOutput, stay: IcuStay) -> dict[str, np.ndarray]:
    return {m: out.next_step[m].data[0, stay.T - 1].copy() for m in SEQ_MODALITIES}


def predict_risk(model: DtIcuModel, stay: IcuStay, zero_out=()) -> float:
    """Mortality probability at the stay's last observed hour."""
    return float(expit(_single(model, stay, zero_out).risk_logit.data[0]))


def streaming_update(model: DtIcuModel, stay: IcuStay, new_hour: Mapping[str, np.ndarray],
                     zero_out=()) -> tuple[float, dict[str, np.ndarray]]:
    """Append one observed hour and recompute (risk at that hour, forecast of the next)."""
    extended = append_hours(stay, new_hour)
    out = _single(model, extended, zero_out)
    return float(expit(out.risk_logit.data[0])), _last_forecast(out, extended)


def rollout(model: DtIcuModel, stay: IcuStay, horizon: int, zero_out=()):
    """Feed next-step forecasts back as inputs for ``horizon`` hours.

    Returns ``(trajectory, risk)``: trajectory[k] is the simulated hour T+k+1
    (modalities concatenated in schema order) and risk[k] the mortality
    probability after that hour has been appended. Static inputs stay fixed.
    """
    cap = model.config.max_rollout
    if horizon < 1 or horizon > cap:
        raise ContractError(f"horizon must lie in [1, {cap}], got {horizon}")
    current = stay
    out = _single(model, current, zero_out)
    steps, risks = [], []
    for _ in range(horizon):
        row = _last_forecast(out, current)
        steps.append(np.concatenate([row[m] for m in SEQ_MODALITIES]))
        current = append_hours(current, row)
        out = _single(model, current, zero_out)
        risks.append(float(expit(out.risk_logit.data[0])))
    return np.array(steps), np.array(risks)


def split_forecast(vector: np.ndarray, schema: CohortSchema) -> dict[str, np.ndarray]:
    """Inverse of the modality concatenation used in rollout trajectories."""
    out, start = {}, 0
    for m in SEQ_MODALITIES:
        out[m] = vector[..., start:start + schema.widths[m]]
        start += schema.widths[m]
    return out
