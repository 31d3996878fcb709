import numpy as np
import pytest

from dticu.data import DEMO_FIELDS, SEQ_MODALITIES, CohortSchema, IcuStay
from dticu.model import DtIcuModel, ModelConfig

SMALL_SCHEMA = CohortSchema(
    widths={"meds": 3, "chart": 4, "out": 2, "proc": 3, "date": 2, "ing": 2},
    demo_vocab=(2, 10, 4, 6, 8, 3),
    diag_vocab=12,
)


def random_stay(rng, T, schema=SMALL_SCHEMA, stay_id="x", label=None):
    seq = {m: rng.normal(size=(T, schema.widths[m])) for m in SEQ_MODALITIES}
    demo = tuple(int(rng.integers(v)) for v in schema.demo_vocab)
    diag = frozenset(int(c) for c in rng.choice(schema.diag_vocab, size=3, replace=False))
    if label is None:
        label = int(rng.integers(2))
    return IcuStay(stay_id=stay_id, seq=seq, demo=demo, diag=diag, label=label)


def zero_stay(T, schema=SMALL_SCHEMA, stay_id="z", label=0):
    seq = {m: np.zeros((T, schema.widths[m])) for m in SEQ_MODALITIES}
    return IcuStay(stay_id=stay_id, seq=seq, demo=(0,) * len(DEMO_FIELDS), diag=frozenset(), label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return ModelConfig(d_model=16, n_heads=2, n_modality_layers=1, n_temporal_layers=2, ff_mult=2,
                       schema=SMALL_SCHEMA)


@pytest.fixture
def small_model(small_config):
    return DtIcuModel(small_config, seed=7)


# -- acceptance summary ------------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
