"""Stay-level schema, padded batches and the JSON-lines cohort format.

A cohort on disk is a directory (or explicit pair of paths) holding

* ``cohort.jsonl`` with one stay per line::

    {"stay_id": "s0", "label": 0, "demo": [0, 6, 1, 2, 3, 0], "diag": [3, 17],
     "seq": {"meds": [[...], ...], "chart": ..., "out": ..., "proc": ...,
             "date": ..., "ing": ...}}

* ``schema.json`` declaring feature widths and vocabulary sizes, stamped with
  ``"format_version": 1``.

Missing hourly measurements are stored as 0; there is no separate missingness
channel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from dticu.errors import CollateError, ConfigError, ContractError, IngestionError

FORMAT_VERSION = 1
SEQ_MODALITIES = ("meds", "chart", "out", "proc", "date", "ing")
STATIC_MODALITIES = ("diag", "demo")
ALL_MODALITIES = SEQ_MODALITIES + STATIC_MODALITIES
DEMO_FIELDS = ("gender", "age_bucket", "insurance", "race", "icu_type", "admission_urgency")
BIN_HOURS = 1

COHORT_FILE = "cohort.jsonl"
SCHEMA_FILE = "schema.json"


def age_to_bucket(age_years: float, n_buckets: int = 10) -> int:
    """10-year age bins, the last bin open-ended."""
    if age_years < 0:
        raise ContractError(f"age must be non-negative, got {age_years}")
    return min(int(age_years // 10), n_buckets - 1)


@dataclass(frozen=True)
class CohortSchema:
    widths: Mapping[str, int] = field(
        default_factory=lambda: {"meds": 8, "chart": 12, "out": 4, "proc": 6, "date": 3, "ing": 6}
    )
    demo_vocab: tuple[int, ...] = (2, 10, 4, 6, 8, 3)
    diag_vocab: int = 64

    def __post_init__(self):
        widths = dict(self.widths)
        if set(widths) != set(SEQ_MODALITIES):
            raise ConfigError(f"schema widths must cover exactly {SEQ_MODALITIES}, got {sorted(widths)}")
        object.__setattr__(self, "widths", {m: int(widths[m]) for m in SEQ_MODALITIES})
        object.__setattr__(self, "demo_vocab", tuple(int(v) for v in self.demo_vocab))
        if len(self.demo_vocab) != len(DEMO_FIELDS):
            raise ConfigError(f"demo_vocab needs {len(DEMO_FIELDS)} entries, got {len(self.demo_vocab)}")
        bad = [m for m, w in self.widths.items() if w < 1]
        if bad or min(self.demo_vocab) < 1 or self.diag_vocab < 1:
            raise ConfigError("all widths and vocabulary sizes must be >= 1")

    @property
    def total_width(self) -> int:
        return sum(self.widths.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "bin_hours": BIN_HOURS,
            "widths": dict(self.widths),
            "demo_fields": list(DEMO_FIELDS),
            "demo_vocab": list(self.demo_vocab),
            "diag_vocab": self.diag_vocab,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CohortSchema":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported schema format_version {version!r}")
        if d.get("bin_hours", BIN_HOURS) != BIN_HOURS:
            raise ConfigError("only 1-hour bins are supported")
        return cls(widths=d["widths"], demo_vocab=tuple(d["demo_vocab"]), diag_vocab=int(d["diag_vocab"]))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CohortSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class IcuStay:
    stay_id: str
    seq: Mapping[str, np.ndarray]
    demo: tuple[int, ...]
    diag: frozenset[int]
    label: int

    def __post_init__(self):
        seq = {}
        for m in SEQ_MODALITIES:
            if m not in self.seq:
                raise ContractError(f"stay {self.stay_id!r} lacks modality {m!r}")
            arr = np.array(self.seq[m], dtype=np.float64)
            if arr.ndim != 2:
                raise ContractError(f"stay {self.stay_id!r}: {m} must be a [T x F] matrix")
            arr.setflags(write=False)
            seq[m] = arr
        lengths = {a.shape[0] for a in seq.values()}
        if len(lengths) != 1:
            raise ContractError(f"stay {self.stay_id!r}: modalities disagree on T ({sorted(lengths)})")
        if seq[SEQ_MODALITIES[0]].shape[0] < 1:
            raise ContractError(f"stay {self.stay_id!r}: needs at least one observed hour")
        object.__setattr__(self, "seq", seq)
        object.__setattr__(self, "demo", tuple(int(c) for c in self.demo))
        object.__setattr__(self, "diag", frozenset(int(c) for c in self.diag))
        if self.label not in (0, 1):
            raise ContractError(f"stay {self.stay_id!r}: label must be 0 or 1")
        object.__setattr__(self, "label", int(self.label))

    @property
    def T(self) -> int:
        return self.seq[SEQ_MODALITIES[0]].shape[0]

    def __eq__(self, other):
        if not isinstance(other, IcuStay):
            return NotImplemented
        return (
            self.stay_id == other.stay_id
            and self.label == other.label
            and self.demo == other.demo
            and self.diag == other.diag
            and all(
                self.seq[m].shape == other.seq[m].shape
                and self.seq[m].tobytes() == other.seq[m].tobytes()
                for m in SEQ_MODALITIES
            )
        )

    __hash__ = None

    def to_json(self) -> dict:
        return {
            "stay_id": self.stay_id,
            "label": self.label,
            "demo": list(self.demo),
            "diag": sorted(self.diag),
            "seq": {m: self.seq[m].tolist() for m in SEQ_MODALITIES},
        }


def validate_stay(stay: IcuStay, schema: CohortSchema, line: int | None = None) -> None:
    for m in SEQ_MODALITIES:
        width = stay.seq[m].shape[1]
        if width != schema.widths[m]:
            raise IngestionError(
                f"width {width} != schema width {schema.widths[m]}",
                line=line, stay_id=stay.stay_id, field=f"seq.{m}",
            )
        if not np.isfinite(stay.seq[m]).all():
            raise IngestionError("non-finite value", line=line, stay_id=stay.stay_id, field=f"seq.{m}")
    if len(stay.demo) != len(DEMO_FIELDS):
        raise IngestionError(
            f"expected {len(DEMO_FIELDS)} demo codes, got {len(stay.demo)}",
            line=line, stay_id=stay.stay_id, field="demo",
        )
    for name, code, vocab in zip(DEMO_FIELDS, stay.demo, schema.demo_vocab):
        if not 0 <= code < vocab:
            raise IngestionError(
                f"code {code} outside vocabulary of size {vocab}",
                line=line, stay_id=stay.stay_id, field=f"demo.{name}",
            )
    for code in stay.diag:
        if not 0 <= code < schema.diag_vocab:
            raise IngestionError(
                f"diagnosis code {code} outside vocabulary of size {schema.diag_vocab}",
                line=line, stay_id=stay.stay_id, field="diag",
            )


def stay_from_json(obj: Mapping, schema: CohortSchema, line: int | None = None) -> IcuStay:
    stay_id = obj.get("stay_id") if isinstance(obj, Mapping) else None
    if not isinstance(obj, Mapping):
        raise IngestionError("line is not a JSON object", line=line)
    for key in ("stay_id", "label", "demo", "diag", "seq"):
        if key not in obj:
            raise IngestionError("missing key", line=line, stay_id=stay_id, field=key)
    if not isinstance(stay_id, str):
        raise IngestionError("stay_id must be a string", line=line, field="stay_id")
    if obj["label"] not in (0, 1) or isinstance(obj["label"], bool):
        raise IngestionError("label must be 0 or 1", line=line, stay_id=stay_id, field="label")
    seq = obj["seq"]
    if not isinstance(seq, Mapping) or set(seq) != set(SEQ_MODALITIES):
        raise IngestionError(
            f"seq must have exactly the keys {list(SEQ_MODALITIES)}",
            line=line, stay_id=stay_id, field="seq",
        )
    mats = {}
    for m in SEQ_MODALITIES:
        try:
            arr = np.array(seq[m], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"not a numeric matrix ({exc})", line=line, stay_id=stay_id,
                                 field=f"seq.{m}") from None
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise IngestionError("expected a non-empty [T x F] matrix", line=line,
                                 stay_id=stay_id, field=f"seq.{m}")
        mats[m] = arr
    if len({a.shape[0] for a in mats.values()}) != 1:
        raise IngestionError("modalities disagree on T", line=line, stay_id=stay_id, field="seq")
    for key in ("demo", "diag"):
        vals = obj[key]
        if not isinstance(vals, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                 for v in vals):
            raise IngestionError("expected a list of integers", line=line, stay_id=stay_id, field=key)
    stay = IcuStay(stay_id=stay_id, seq=mats, demo=tuple(obj["demo"]), diag=frozenset(obj["diag"]),
                   label=obj["label"])
    validate_stay(stay, schema, line)
    return stay


def _cohort_paths(path: str | os.PathLike) -> tuple[Path, Path | None]:
    p = Path(path)
    if p.is_dir():
        return p / COHORT_FILE, p / SCHEMA_FILE
    return p, None


def load_cohort(path: str | os.PathLike, schema: CohortSchema | None = None) -> list[IcuStay]:
    """Read and validate a JSON-lines cohort.

    ``path`` may be the ``.jsonl`` file itself or a directory holding
    ``cohort.jsonl`` and ``schema.json``. When ``schema`` is omitted the sidecar
    file is used.
    """
    data_path, schema_path = _cohort_paths(path)
    if schema is None:
        if schema_path is None:
            schema_path = data_path.with_name(SCHEMA_FILE)
        schema = CohortSchema.load(schema_path)
    stays = []
    seen = set()
    with open(data_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"malformed JSON ({exc.msg})", line=lineno) from None
            stay = stay_from_json(obj, schema, lineno)
            if stay.stay_id in seen:
                raise IngestionError("duplicate stay_id", line=lineno, stay_id=stay.stay_id)
            seen.add(stay.stay_id)
            stays.append(stay)
    return stays


def save_cohort(path: str | os.PathLike, stays: Iterable[IcuStay], schema: CohortSchema) -> Path:
    """Write ``stays`` (validated) plus the schema sidecar; returns the JSONL path.

    A directory path receives ``cohort.jsonl`` and ``schema.json``; a file path
    gets ``schema.json`` written beside it.
    """
    p = Path(path)
    if p.suffix == ".jsonl":
        data_path, schema_path = p, p.with_name(SCHEMA_FILE)
    else:
        p.mkdir(parents=True, exist_ok=True)
        data_path, schema_path = p / COHORT_FILE, p / SCHEMA_FILE
    data_path.parent.mkdir(parents=True, exist_ok=True)
    with open(data_path, "w", encoding="utf-8") as fh:
        for stay in stays:
            validate_stay(stay, schema)
            fh.write(json.dumps(stay.to_json(), separators=(",", ":")) + "\n")
    schema.save(schema_path)
    return data_path


def truncate(stay: IcuStay, hours: int) -> IcuStay:
    """Keep the first ``min(T, hours)`` hours; static fields and label untouched."""
    if hours < 1:
        raise ContractError(f"truncation length must be >= 1 hour, got {hours}")
    if hours >= stay.T:
        return stay
    return IcuStay(
        stay_id=stay.stay_id,
        seq={m: a[:hours] for m, a in stay.seq.items()},
        demo=stay.demo,
        diag=stay.diag,
        label=stay.label,
    )


def append_hours(stay: IcuStay, rows: Mapping[str, np.ndarray]) -> IcuStay:
    """Stay extended by one or more observed hours (``rows[m]`` is [F] or [k x F])."""
    seq = {}
    for m in SEQ_MODALITIES:
        if m not in rows:
            raise ContractError(f"new observation lacks modality {m!r}")
        extra = np.atleast_2d(np.asarray(rows[m], dtype=np.float64))
        if extra.shape[1] != stay.seq[m].shape[1]:
            raise ContractError(
                f"{m}: new hour has width {extra.shape[1]}, expected {stay.seq[m].shape[1]}"
            )
        seq[m] = np.concatenate([stay.seq[m], extra], axis=0)
    if len({a.shape[0] for a in seq.values()}) != 1:
        raise ContractError("new observation rows disagree on hour count")
    return IcuStay(stay_id=stay.stay_id, seq=seq, demo=stay.demo, diag=stay.diag, label=stay.label)


@dataclass
class ModalityBundle:
    seq: dict[str, np.ndarray]      # modality -> [B, T_max, F]
    lengths: np.ndarray             # [B] int
    mask: np.ndarray                # [B, T_max] float 0/1
    demo: np.ndarray                # [B, 6] int
    diag: np.ndarray                # [B, V_diag] multi-hot float
    labels: np.ndarray              # [B] float
    stay_ids: list[str]

    @property
    def batch_size(self) -> int:
        return len(self.lengths)

    @property
    def t_max(self) -> int:
        return self.mask.shape[1]

    def widths(self) -> dict[str, int]:
        return {m: a.shape[2] for m, a in self.seq.items()}


def collate(stays: Sequence[IcuStay], diag_vocab: int | None = None) -> ModalityBundle:
    """Zero-pad a list of stays into a batch.

    ``diag_vocab`` sets the multi-hot width; by default it is one more than
    the largest code present.
    """
    if not stays:
        raise CollateError("cannot collate an empty list of stays")
    widths0 = {m: stays[0].seq[m].shape[1] for m in SEQ_MODALITIES}
    for s in stays[1:]:
        w = {m: s.seq[m].shape[1] for m in SEQ_MODALITIES}
        if w != widths0 or len(s.demo) != len(stays[0].demo):
            raise CollateError(f"stay {s.stay_id!r} has schema {w}, batch expects {widths0}")
    if diag_vocab is None:
        diag_vocab = 1 + max((max(s.diag) for s in stays if s.diag), default=0)
    b = len(stays)
    lengths = np.array([s.T for s in stays], dtype=np.int64)
    t_max = int(lengths.max())
    seq = {}
    for m in SEQ_MODALITIES:
        arr = np.zeros((b, t_max, widths0[m]))
        for i, s in enumerate(stays):
            arr[i, : s.T] = s.seq[m]
        seq[m] = arr
    mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)
    diag = np.zeros((b, diag_vocab))
    for i, s in enumerate(stays):
        codes = sorted(s.diag)
        if codes and codes[-1] >= diag_vocab:
            raise CollateError(f"stay {s.stay_id!r} has diagnosis code {codes[-1]} >= {diag_vocab}")
        diag[i, codes] = 1.0
    return ModalityBundle(
        seq=seq,
        lengths=lengths,
        mask=mask,
        demo=np.array([s.demo for s in stays], dtype=np.int64),
        diag=diag,
        labels=np.array([s.label for s in stays], dtype=np.float64),
        stay_ids=[s.stay_id for s in stays],
    )


def split_cohort(stays: Sequence[IcuStay], seed: int, fractions=(0.70, 0.15, 0.15)):
    """Seeded shuffle then contiguous train/val/test split by stay."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    order = np.random.default_rng([seed, 0x5B1]).permutation(len(stays))
    n_train = int(round(fractions[0] * len(stays)))
    n_val = int(round(fractions[1] * len(stays)))
    pick = lambda idx: [stays[i] for i in idx]  # noqa: E731
    return (
        pick(order[:n_train]),
        pick(order[n_train:n_train + n_val]),
        pick(order[n_train + n_val:]),
    )
