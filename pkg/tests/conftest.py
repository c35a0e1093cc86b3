"""Shared builders for patient fixtures and toy training datasets."""

import datetime

import numpy as np
import pytest
from scipy import sparse

from fairrisk.dataset import LabeledDataset
from fairrisk.features import Vocabulary
from fairrisk.records import ClinicalEvent, PatientRecord


def D(text: str) -> datetime.date:
    return datetime.date.fromisoformat(text)


def make_patient(
    pid="P1",
    birth="1960-06-15",
    gender="Female",
    race="White",
    death=None,
    events=(),
):
    """events: iterable of (iso_date, domain, code) triples."""
    return PatientRecord(
        patient_id=pid,
        birth_date=D(birth),
        gender=gender,
        race=race,
        death_date=D(death) if death else None,
        events=[ClinicalEvent(D(d), dom, code) for d, dom, code in events],
    )


def encounters(*dates, code="ENC.OUTPATIENT"):
    return [(d, "EncounterType", code) for d in dates]


def toy_dataset(
    n=2000,
    m=50,
    seed=0,
    gender_shift=0.0,
    age_shift=0.0,
    val_frac=0.1,
    test_frac=0.1,
    base_logit=-1.0,
    deterministic_labels=False,
):
    """Synthetic LabeledDataset with known structure, no cohort pipeline.

    X is 0/1 CSR; y follows a logistic model over the first m//2 columns;
    optional additive score shifts per gender / age group leak group
    signal into the label the way the cohort generator's shifts leak it
    into the features. ``deterministic_labels`` removes the Bernoulli
    noise (median split on the logit) for tests that need a learnable
    ceiling near 1.0.
    """
    rng = np.random.default_rng(seed)
    X = sparse.random(
        n, m, density=0.15, format="csr", dtype=np.float64,
        random_state=np.random.default_rng(seed + 1), data_rvs=lambda k: np.ones(k),
    )
    groups = {
        "race": rng.integers(0, 6, size=n).astype(np.int64),
        "gender": rng.integers(0, 2, size=n).astype(np.int64),
        "age": rng.integers(0, 4, size=n).astype(np.int64),
    }
    w = np.zeros(m)
    w[: m // 2] = rng.normal(1.2, 0.4, size=m // 2)
    logit = base_logit + X @ w
    logit = logit + gender_shift * (groups["gender"] - 0.5) * 2.0
    logit = logit + age_shift * (groups["age"] - 1.5)
    if deterministic_labels:
        y = (logit > np.median(logit)).astype(np.int64)
    else:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)

    n_val = int(n * val_frac)
    n_test = int(n * test_frac)
    rows = np.arange(n, dtype=np.int64)
    split_rows = {
        "train": rows[: n - n_val - n_test],
        "val": rows[n - n_val - n_test : n - n_test],
        "test": rows[n - n_test :],
    }
    vocab = Vocabulary(
        concepts=tuple(("Diagnosis", f"C{j:03d}") for j in range(m)),
        age_mean=0.0,
        age_std=1.0,
        include_demographics=False,
    )
    return LabeledDataset(
        patient_ids=[f"T{i:06d}" for i in range(n)],
        X=X.tocsr(),
        y=y,
        groups=groups,
        split_rows=split_rows,
        vocabulary=vocab,
    )


@pytest.fixture
def tiny_dataset():
    return toy_dataset(n=300, m=12, seed=7)
