import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_SCHEMA, random_stay, zero_stay
from dticu.data import (
    SEQ_MODALITIES,
    CohortSchema,
    IcuStay,
    age_to_bucket,
    append_hours,
    collate,
    load_cohort,
    save_cohort,
    split_cohort,
    truncate,
)
from dticu.errors import CollateError, ConfigError, ContractError, IngestionError


def test_empty_file_gives_empty_list(tmp_path):
    SMALL_SCHEMA.save(tmp_path / "schema.json")
    (tmp_path / "cohort.jsonl").write_text("")
    assert load_cohort(tmp_path) == []


def test_single_zero_stay_loads(tmp_path):
    save_cohort(tmp_path, [zero_stay(4)], SMALL_SCHEMA)
    (stay,) = load_cohort(tmp_path)
    assert stay.T == 4 and stay.label == 0
    for m in SEQ_MODALITIES:
        assert stay.seq[m].shape == (4, SMALL_SCHEMA.widths[m])
        assert not stay.seq[m].any()


def test_round_trip_is_bit_exact(tmp_path, rng):
    stays = [random_stay(rng, int(rng.integers(1, 30)), stay_id=f"s{i}") for i in range(25)]
    save_cohort(tmp_path, stays, SMALL_SCHEMA)
    assert load_cohort(tmp_path) == stays


def test_round_trip_via_jsonl_path(tmp_path, rng):
    stays = [random_stay(rng, 5, stay_id=f"s{i}") for i in range(3)]
    path = save_cohort(tmp_path / "c.jsonl", stays, SMALL_SCHEMA)
    assert load_cohort(path) == stays


def test_schema_round_trip_and_version(tmp_path):
    SMALL_SCHEMA.save(tmp_path / "schema.json")
    raw = json.loads((tmp_path / "schema.json").read_text())
    assert raw["format_version"] == 1
    assert CohortSchema.load(tmp_path / "schema.json") == SMALL_SCHEMA


def test_schema_rejects_zero_width():
    with pytest.raises(ConfigError):
        CohortSchema(widths={**SMALL_SCHEMA.widths, "out": 0})


def _write_lines(tmp_path, lines):
    SMALL_SCHEMA.save(tmp_path / "schema.json")
    (tmp_path / "cohort.jsonl").write_text("\n".join(lines) + "\n")


def test_malformed_json_reports_line(tmp_path, rng):
    good = json.dumps(random_stay(rng, 3, stay_id="ok").to_json())
    _write_lines(tmp_path, [good, "{not json"])
    with pytest.raises(IngestionError) as exc:
        load_cohort(tmp_path)
    assert exc.value.line == 2


def test_width_mismatch_names_stay_and_field(tmp_path, rng):
    obj = random_stay(rng, 3, stay_id="bad").to_json()
    obj["seq"]["chart"] = [[0.0] * 5] * 3
    _write_lines(tmp_path, [json.dumps(obj)])
    with pytest.raises(IngestionError) as exc:
        load_cohort(tmp_path)
    assert exc.value.stay_id == "bad" and exc.value.field == "seq.chart" and exc.value.line == 1


def test_out_of_vocab_demo_code(tmp_path, rng):
    obj = random_stay(rng, 3, stay_id="d").to_json()
    obj["demo"][1] = 10
    _write_lines(tmp_path, [json.dumps(obj)])
    with pytest.raises(IngestionError) as exc:
        load_cohort(tmp_path)
    assert exc.value.field == "demo.age_bucket"


def test_out_of_vocab_diag_code(tmp_path, rng):
    obj = random_stay(rng, 3, stay_id="d").to_json()
    obj["diag"] = [12]
    _write_lines(tmp_path, [json.dumps(obj)])
    with pytest.raises(IngestionError, match="diag"):
        load_cohort(tmp_path)


def test_modalities_must_share_T(tmp_path, rng):
    obj = random_stay(rng, 3, stay_id="t").to_json()
    obj["seq"]["out"] = obj["seq"]["out"][:2]
    _write_lines(tmp_path, [json.dumps(obj)])
    with pytest.raises(IngestionError, match="disagree"):
        load_cohort(tmp_path)


def test_duplicate_stay_ids_rejected(tmp_path, rng):
    line = json.dumps(random_stay(rng, 3, stay_id="dup").to_json())
    _write_lines(tmp_path, [line, line])
    with pytest.raises(IngestionError, match="duplicate"):
        load_cohort(tmp_path)


def test_stay_arrays_are_read_only(rng):
    stay = random_stay(rng, 3)
    with pytest.raises(ValueError):
        stay.seq["meds"][0, 0] = 1.0


def test_age_buckets():
    assert age_to_bucket(0) == 0
    assert age_to_bucket(19.9) == 1
    assert age_to_bucket(65) == 6
    assert age_to_bucket(120) == 9


# -- truncate ----------------------------------------------------------------------------


def test_truncate_beyond_length_is_identity(rng):
    stay = random_stay(rng, 6)
    assert truncate(stay, 6) == stay
    assert truncate(stay, 100) == stay


def test_truncate_keeps_first_rows(rng):
    stay = random_stay(rng, 10)
    cut = truncate(stay, 4)
    assert cut.T == 4
    for m in SEQ_MODALITIES:
        np.testing.assert_array_equal(cut.seq[m], stay.seq[m][:4])
    assert (cut.demo, cut.diag, cut.label) == (stay.demo, stay.diag, stay.label)


def test_truncate_composes(rng):
    for _ in range(10):
        stay = random_stay(rng, int(rng.integers(1, 20)))
        assert truncate(truncate(stay, 8), 4) == truncate(stay, 4)


def test_truncate_rejects_zero_hours(rng):
    with pytest.raises(ContractError):
        truncate(random_stay(rng, 3), 0)


def test_append_hours_then_truncate_restores(rng):
    stay = random_stay(rng, 5)
    row = {m: np.ones(SMALL_SCHEMA.widths[m]) for m in SEQ_MODALITIES}
    longer = append_hours(stay, row)
    assert longer.T == 6 and truncate(longer, 5) == stay


def test_append_hours_width_mismatch(rng):
    stay = random_stay(rng, 5)
    row = {m: np.ones(SMALL_SCHEMA.widths[m] + (m == "proc")) for m in SEQ_MODALITIES}
    with pytest.raises(ContractError, match="proc"):
        append_hours(stay, row)


# -- collate -----------------------------------------------------------------------------


def test_collate_single_stay(rng):
    b = collate([random_stay(rng, 7)])
    assert b.t_max == 7 and b.mask.tolist() == [[1.0] * 7]


def test_collate_two_lengths(rng):
    b = collate([random_stay(rng, 2), random_stay(rng, 5)])
    assert b.t_max == 5
    assert b.mask[0].tolist() == [1, 1, 0, 0, 0]
    assert b.lengths.tolist() == [2, 5]


def test_collate_counts_and_values(rng):
    stays = [random_stay(rng, int(rng.integers(1, 40)), stay_id=str(i)) for i in range(50)]
    b = collate(stays, SMALL_SCHEMA.diag_vocab)
    assert b.mask.sum() == sum(s.T for s in stays)
    for i, s in enumerate(stays):
        for m in SEQ_MODALITIES:
            np.testing.assert_array_equal(b.seq[m][i, : s.T], s.seq[m])
            assert not b.seq[m][i, s.T:].any()
        assert set(np.flatnonzero(b.diag[i])) == set(s.diag)


def test_collate_errors(rng):
    with pytest.raises(CollateError):
        collate([])
    other = CohortSchema(widths={**SMALL_SCHEMA.widths, "date": 5}, demo_vocab=SMALL_SCHEMA.demo_vocab,
                         diag_vocab=SMALL_SCHEMA.diag_vocab)
    with pytest.raises(CollateError):
        collate([random_stay(rng, 3), random_stay(rng, 3, schema=other)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=8))
def test_mask_matches_lengths(lengths):
    rng = np.random.default_rng(len(lengths))
    b = collate([random_stay(rng, T) for T in lengths])
    expected = (np.arange(b.t_max)[None, :] < np.array(lengths)[:, None]).astype(float)
    np.testing.assert_array_equal(b.mask, expected)


def test_split_is_a_seeded_partition(rng):
    stays = [random_stay(rng, 2, stay_id=f"s{i}") for i in range(100)]
    tr, va, te = split_cohort(stays, seed=3)
    assert (len(tr), len(va), len(te)) == (70, 15, 15)
    ids = [s.stay_id for s in tr + va + te]
    assert sorted(ids) == sorted(s.stay_id for s in stays)
    assert [s.stay_id for s in split_cohort(stays, seed=3)[2]] == [s.stay_id for s in te]


def test_icustay_rejects_mismatched_T(rng):
    seq = {m: np.zeros((3 if m != "ing" else 2, SMALL_SCHEMA.widths[m])) for m in SEQ_MODALITIES}
    with pytest.raises(ContractError):
        IcuStay(stay_id="a", seq=seq, demo=(0,) * 6, diag=frozenset(), label=0)
