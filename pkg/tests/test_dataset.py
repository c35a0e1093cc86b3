"""Dataset assembly: funnel counts, split rows, directory round trip."""

import numpy as np
import pytest

from fairrisk.dataset import build_cohort, prepare_dataset, read_dataset, write_dataset
from fairrisk.errors import ValidationError

from cohort_fixtures import NEUTRAL_CODE
from conftest import encounters, make_patient


def usable_patient(pid, extra_events=(), **kw):
    """Eligible, unexcluded patient with a couple of stray concepts."""
    events = (
        encounters("2005-01-01", "2006-02-01", "2007-06-01")
        + [
            ("2003-06-01", "Diagnosis", NEUTRAL_CODE),
            ("2009-06-01", "Diagnosis", "401.9"),
        ]
        + list(extra_events)
    )
    return make_patient(pid=pid, events=events, **kw)


def test_funnel_counts_each_stage():
    records = [
        usable_patient("OK1"),
        usable_patient("OK2"),
        # Eligible index but excluded by a historical CVD diagnosis.
        usable_patient("EXCL", extra_events=[("2004-01-01", "Diagnosis", "410")]),
        # Never eligible: a single encounter.
        make_patient(pid="INEL", events=encounters("2005-01-01")),
        # Eligible and positive: ASCVD after every candidate index.
        usable_patient("POS", extra_events=[("2008-12-01", "Diagnosis", "410.0")]),
    ]
    cohort, y, funnel = build_cohort(records, seed=0)
    assert funnel.records_read == 5
    assert funnel.with_eligible_index == 4
    assert funnel.after_exclusions == 3
    assert funnel.positives == 1
    assert [ip.patient.patient_id for ip in cohort] == ["OK1", "OK2", "POS"]
    assert y.tolist() == [0, 0, 1]


def test_duplicate_patient_ids_rejected():
    records = [usable_patient("DUP"), usable_patient("DUP")]
    with pytest.raises(ValidationError, match="patient_id"):
        prepare_dataset(records)


def test_empty_cohort_has_empty_shapes():
    ds, funnel = prepare_dataset([make_patient(pid="X")])
    assert funnel.after_exclusions == 0
    assert ds.n_rows == 0
    assert ds.X.shape == (0, ds.vocabulary.n_columns)
    for rows in ds.split_rows.values():
        assert rows.size == 0


def test_split_rows_partition_the_cohort():
    records = [usable_patient(f"P{i}") for i in range(30)]
    ds, _ = prepare_dataset(records, seed=4)
    all_rows = np.concatenate([ds.rows_for(s) for s in ("train", "val", "test")])
    assert sorted(all_rows.tolist()) == list(range(30))
    assert len(ds.rows_for("val")) == 3
    assert len(ds.rows_for("test")) == 3
    with pytest.raises(ValidationError):
        ds.rows_for("holdout")


def test_subset_slices_consistently():
    records = [usable_patient(f"P{i}") for i in range(25)]
    ds, _ = prepare_dataset(records, seed=1)
    X, y, groups = ds.subset("train")
    rows = ds.rows_for("train")
    assert X.shape[0] == y.shape[0] == len(rows)
    assert np.array_equal(y, ds.y[rows])
    assert np.array_equal(groups["gender"], ds.groups["gender"][rows])


def test_directory_round_trip(tmp_path):
    records = [
        usable_patient(f"P{i}", birth=f"{1940 + i % 30}-03-01") for i in range(40)
    ]
    ds, funnel = prepare_dataset(records, seed=2)
    write_dataset(tmp_path, ds, funnel, seed=2)
    back = read_dataset(tmp_path)
    assert back.patient_ids == ds.patient_ids
    assert np.array_equal(back.y, ds.y)
    assert np.array_equal(back.X.toarray(), ds.X.toarray())
    for attr in ("race", "gender", "age"):
        assert np.array_equal(back.groups[attr], ds.groups[attr])
    for split in ("train", "val", "test"):
        assert np.array_equal(back.rows_for(split), ds.rows_for(split))
    assert back.vocabulary.concepts == ds.vocabulary.concepts
    assert back.vocabulary.age_mean == ds.vocabulary.age_mean


def test_written_files_are_byte_stable(tmp_path):
    records = [usable_patient(f"P{i}") for i in range(20)]
    ds, funnel = prepare_dataset(records, seed=3)
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    write_dataset(a, ds, funnel, seed=3)
    write_dataset(b, ds, funnel, seed=3)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
