"""Cohort assembly and the on-disk prepared-dataset layout.

``prepare_dataset`` runs the full pipeline over raw patient records:
index-time selection, exclusions, outcome labeling, train/val/test
splitting, vocabulary fitting (train rows only), and feature
extraction. The result round-trips through a directory of plain-text
artifacts so training and evaluation never touch raw records:

* ``rows.tsv``       patient id per feature-matrix row, in row order
* ``features.coo``   0/1 block of the feature matrix (text COO)
* ``ages.tsv``       standardized age per row (the matrix's last column)
* ``vocab.tsv``      concept columns plus age statistics
* ``labels.tsv``     ``patient_id<TAB>label``
* ``groups.tsv``     ``patient_id<TAB>race<TAB>gender<TAB>age`` group ids
* ``splits.tsv``     ``patient_id<TAB>split``
* ``meta.json``      shapes, seed, and funnel counts

All files are byte-stable for a fixed input and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ValidationError
from .extraction import (
    SPLIT_NAMES,
    apply_exclusions,
    assign_groups,
    label_outcome,
    read_splits,
    select_index_time,
    split_cohort,
    write_splits,
)
from .features import (
    Vocabulary,
    attach_age_column,
    build_vocabulary,
    extract_features,
    read_binary_coo,
    read_vocabulary,
    standardized_age_column,
    write_binary_coo,
    write_vocabulary,
)
from .records import IndexedPatient, PatientRecord, load_shipped_code_lists
from .streams import NS_INDEX_SELECT, substream

GROUP_ATTRIBUTES = ("race", "gender", "age")


@dataclass(frozen=True)
class FunnelCounts:
    records_read: int
    with_eligible_index: int
    after_exclusions: int
    positives: int

    def to_dict(self) -> dict[str, int]:
        return {
            "records_read": self.records_read,
            "with_eligible_index": self.with_eligible_index,
            "after_exclusions": self.after_exclusions,
            "positives": self.positives,
        }


@dataclass
class LabeledDataset:
    patient_ids: list[str]
    X: sparse.csr_matrix
    y: np.ndarray
    groups: dict[str, np.ndarray]
    split_rows: dict[str, np.ndarray]
    vocabulary: Vocabulary

    @property
    def n_rows(self) -> int:
        return len(self.patient_ids)

    def rows_for(self, split: str) -> np.ndarray:
        if split not in self.split_rows:
            raise ValidationError(f"split: unknown split {split!r}")
        return self.split_rows[split]

    def subset(self, split: str):
        """(X, y, groups) restricted to one split, in row order."""
        rows = self.rows_for(split)
        X = self.X[rows]
        y = self.y[rows]
        groups = {a: g[rows] for a, g in self.groups.items()}
        return X, y, groups


def build_cohort(
    records: Sequence[PatientRecord],
    seed: int = 0,
    code_list_dir: Path | str | None = None,
) -> tuple[list[IndexedPatient], np.ndarray, FunnelCounts]:
    """Select index times, apply exclusions, and label outcomes."""
    lists = load_shipped_code_lists(code_list_dir)
    rng = substream(seed, NS_INDEX_SELECT)
    cohort: list[IndexedPatient] = []
    labels: list[int] = []
    n_indexed = 0
    for rec in records:
        ip = select_index_time(rec, rng)
        if ip is None:
            continue
        n_indexed += 1
        if apply_exclusions(ip, lists["cvd_exclusion"], lists["lipid_lowering"]):
            continue
        cohort.append(ip)
        labels.append(label_outcome(ip, lists["ascvd_event"], lists["fatal_chd"]))
    y = np.asarray(labels, dtype=np.int64)
    funnel = FunnelCounts(
        records_read=len(records),
        with_eligible_index=n_indexed,
        after_exclusions=len(cohort),
        positives=int(y.sum()) if len(labels) else 0,
    )
    return cohort, y, funnel


def prepare_dataset(
    records: Sequence[PatientRecord],
    seed: int = 0,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    code_list_dir: Path | str | None = None,
) -> tuple[LabeledDataset, FunnelCounts]:
    cohort, y, funnel = build_cohort(records, seed=seed, code_list_dir=code_list_dir)
    ids = [ip.patient.patient_id for ip in cohort]
    if len(set(ids)) != len(ids):
        raise ValidationError("patient_id: duplicate ids in cohort")

    if not cohort:
        vocab = Vocabulary(concepts=(), age_mean=0.0, age_std=1.0)
        empty = sparse.csr_matrix((0, vocab.n_columns), dtype=np.float64)
        ds = LabeledDataset(
            patient_ids=[],
            X=empty,
            y=y,
            groups={a: np.zeros(0, dtype=np.int64) for a in GROUP_ATTRIBUTES},
            split_rows={s: np.zeros(0, dtype=np.int64) for s in SPLIT_NAMES},
            vocabulary=vocab,
        )
        return ds, funnel

    splits = split_cohort(ids, ratios=ratios, seed=seed)
    split_of = {}
    for name, split_ids in zip(SPLIT_NAMES, splits):
        for pid in split_ids:
            split_of[pid] = name
    row_of = {pid: r for r, pid in enumerate(ids)}

    train_rows = [cohort[row_of[pid]] for pid in splits[0]]
    vocab = build_vocabulary(train_rows)
    X = extract_features(cohort, vocab)

    assignments = [assign_groups(ip) for ip in cohort]
    groups = {
        "race": np.asarray([a.race_group for a in assignments], dtype=np.int64),
        "gender": np.asarray([a.gender_group for a in assignments], dtype=np.int64),
        "age": np.asarray([a.age_group for a in assignments], dtype=np.int64),
    }
    split_rows = {
        name: np.asarray(sorted(row_of[pid] for pid in split_ids), dtype=np.int64)
        for name, split_ids in zip(SPLIT_NAMES, splits)
    }
    ds = LabeledDataset(
        patient_ids=ids,
        X=X,
        y=y,
        groups=groups,
        split_rows=split_rows,
        vocabulary=vocab,
    )
    return ds, funnel


def write_dataset(out_dir: Path | str, ds: LabeledDataset, funnel: FunnelCounts, seed: int):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "rows.tsv", "w", encoding="utf-8") as f:
        for pid in ds.patient_ids:
            f.write(pid + "\n")

    write_binary_coo(out / "features.coo", ds.X, ds.vocabulary.n_columns - 1)

    ages = (
        ds.X[:, -1].toarray().ravel()
        if ds.n_rows
        else np.zeros(0, dtype=np.float64)
    )
    with open(out / "ages.tsv", "w", encoding="utf-8") as f:
        for v in ages:
            f.write(f"{float(v)!r}\n")

    write_vocabulary(out / "vocab.tsv", ds.vocabulary)

    with open(out / "labels.tsv", "w", encoding="utf-8") as f:
        for pid, label in zip(ds.patient_ids, ds.y):
            f.write(f"{pid}\t{int(label)}\n")

    with open(out / "groups.tsv", "w", encoding="utf-8") as f:
        for r, pid in enumerate(ds.patient_ids):
            f.write(
                f"{pid}\t{ds.groups['race'][r]}"
                f"\t{ds.groups['gender'][r]}\t{ds.groups['age'][r]}\n"
            )

    splits_as_lists = tuple(
        [ds.patient_ids[r] for r in ds.split_rows[name]] for name in SPLIT_NAMES
    )
    write_splits(out / "splits.tsv", splits_as_lists)

    meta = {
        "n_rows": ds.n_rows,
        "n_columns": ds.vocabulary.n_columns,
        "n_concepts": ds.vocabulary.n_concepts,
        "age_mean": ds.vocabulary.age_mean,
        "age_std": ds.vocabulary.age_std,
        "seed": seed,
        "funnel": funnel.to_dict(),
    }
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_dataset(in_dir: Path | str) -> LabeledDataset:
    src = Path(in_dir)
    for name in ("rows.tsv", "features.coo", "ages.tsv", "vocab.tsv",
                 "labels.tsv", "groups.tsv", "splits.tsv"):
        if not (src / name).exists():
            raise ValidationError(f"prepared dataset missing {name}")

    patient_ids = [
        line.strip()
        for line in (src / "rows.tsv").read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    vocab = read_vocabulary(src / "vocab.tsv")
    binary = read_binary_coo(src / "features.coo")
    if binary.shape != (len(patient_ids), vocab.n_columns):
        raise ValidationError(
            "features.coo shape does not match rows.tsv and vocab.tsv"
        )

    age_lines = (src / "ages.tsv").read_text(encoding="utf-8").splitlines()
    ages = np.asarray([float(v) for v in age_lines if v.strip()], dtype=np.float64)
    if len(ages) != len(patient_ids):
        raise ValidationError("ages.tsv length does not match rows.tsv")
    X = attach_age_column(binary, ages) if len(patient_ids) else binary

    labels = {}
    for line in (src / "labels.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        pid, val = line.split("\t")
        labels[pid] = int(val)
    y = np.asarray([labels[pid] for pid in patient_ids], dtype=np.int64)

    groups = {a: np.zeros(len(patient_ids), dtype=np.int64) for a in GROUP_ATTRIBUTES}
    rows_seen = 0
    row_of = {pid: r for r, pid in enumerate(patient_ids)}
    for line in (src / "groups.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        pid, race, gender, age = line.split("\t")
        r = row_of[pid]
        groups["race"][r] = int(race)
        groups["gender"][r] = int(gender)
        groups["age"][r] = int(age)
        rows_seen += 1
    if rows_seen != len(patient_ids):
        raise ValidationError("groups.tsv does not cover every row")

    split_of = read_splits(src / "splits.tsv")
    split_rows = {
        name: np.asarray(
            sorted(r for pid, r in row_of.items() if split_of.get(pid) == name),
            dtype=np.int64,
        )
        for name in SPLIT_NAMES
    }
    covered = sum(len(v) for v in split_rows.values())
    if covered != len(patient_ids):
        raise ValidationError("splits.tsv does not cover every row exactly once")

    return LabeledDataset(
        patient_ids=patient_ids,
        X=X,
        y=y,
        groups=groups,
        split_rows=split_rows,
        vocabulary=vocab,
    )
