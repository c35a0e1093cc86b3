"""Pre-index feature construction.

A patient's features are the set of (domain, code) concepts observed
strictly before the index time, encoded as 0/1 indicators over a
vocabulary fit on training patients only, followed by a fixed
demographic tail: six race indicators, two gender indicators, and one
standardized age column. Concepts outside the vocabulary are dropped.

The binary part of the matrix travels as a COO text file (header
``n_rows n_cols``, then one ``row col`` pair per line); the age column
is real-valued and is stored separately by the dataset layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import ContractError, ValidationError
from .extraction import assign_groups
from .records import GENDER_IDS, GENDERS, IndexedPatient, RACE_IDS, RACES

N_DEMOGRAPHIC_COLUMNS = len(RACES) + len(GENDERS) + 1


@dataclass
class Vocabulary:
    """Concept index plus age standardization constants, fit on train."""

    concepts: tuple[tuple[str, str], ...]
    age_mean: float
    age_std: float
    include_demographics: bool = True
    index: dict[tuple[str, str], int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.concepts)}
        if len(self.index) != len(self.concepts):
            raise ContractError("vocabulary contains duplicate concepts")
        if self.age_std <= 0:
            raise ContractError("age_std must be positive")

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def n_columns(self) -> int:
        tail = N_DEMOGRAPHIC_COLUMNS if self.include_demographics else 0
        return len(self.concepts) + tail

    def column_names(self) -> list[str]:
        names = [f"{domain}:{code}" for domain, code in self.concepts]
        if self.include_demographics:
            names.extend(f"race:{r}" for r in RACES)
            names.extend(f"gender:{g}" for g in GENDERS)
            names.append("age:standardized")
        return names


def pre_index_concepts(ip: IndexedPatient) -> set[tuple[str, str]]:
    return {
        (e.domain, e.code)
        for e in ip.patient.events
        if e.date < ip.index_time
    }


def build_vocabulary(
    train_patients: Sequence[IndexedPatient], include_demographics: bool = True
) -> Vocabulary:
    """Fit the concept index and age statistics on training patients only."""
    if not train_patients:
        raise ValidationError("cannot fit a vocabulary on an empty train split")
    seen: set[tuple[str, str]] = set()
    ages = []
    for ip in train_patients:
        seen.update(pre_index_concepts(ip))
        ages.append(ip.age_at_index())
    concepts = tuple(sorted(seen))
    age_arr = np.asarray(ages, dtype=np.float64)
    mean = float(age_arr.mean())
    std = float(age_arr.std())
    if std == 0.0:
        std = 1.0
    return Vocabulary(
        concepts=concepts,
        age_mean=mean,
        age_std=std,
        include_demographics=include_demographics,
    )


def extract_features(
    patients: Sequence[IndexedPatient], vocab: Vocabulary
) -> sparse.csr_matrix:
    """Encode patients as a CSR matrix over the vocabulary columns.

    Column order: concepts, race indicators, gender indicators,
    standardized age. Unknown concepts are dropped.
    """
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    n_concepts = vocab.n_concepts
    race_base = n_concepts
    gender_base = n_concepts + len(RACES)
    age_col = vocab.n_columns - 1
    for r, ip in enumerate(patients):
        hits = sorted(
            vocab.index[c] for c in pre_index_concepts(ip) if c in vocab.index
        )
        for c in hits:
            rows.append(r)
            cols.append(c)
            vals.append(1.0)
        if not vocab.include_demographics:
            continue
        groups = assign_groups(ip)
        rows.append(r)
        cols.append(race_base + groups.race_group)
        vals.append(1.0)
        rows.append(r)
        cols.append(gender_base + groups.gender_group)
        vals.append(1.0)
        age = (ip.age_at_index() - vocab.age_mean) / vocab.age_std
        if age != 0.0:
            rows.append(r)
            cols.append(age_col)
            vals.append(age)
    return sparse.csr_matrix(
        (vals, (rows, cols)),
        shape=(len(patients), vocab.n_columns),
        dtype=np.float64,
    )


def write_vocabulary(path, vocab: Vocabulary):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# age_mean\t{vocab.age_mean!r}\n")
        f.write(f"# age_std\t{vocab.age_std!r}\n")
        f.write(f"# demographics\t{int(vocab.include_demographics)}\n")
        for domain, code in vocab.concepts:
            f.write(f"{domain}\t{code}\n")


def read_vocabulary(path) -> Vocabulary:
    age_mean = None
    age_std = None
    demographics = True
    concepts: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split("\t")
                if len(parts) == 2 and parts[0] == "age_mean":
                    age_mean = float(parts[1])
                elif len(parts) == 2 and parts[0] == "age_std":
                    age_std = float(parts[1])
                elif len(parts) == 2 and parts[0] == "demographics":
                    demographics = bool(int(parts[1]))
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(f"malformed vocabulary line: {line!r}")
            concepts.append((parts[0], parts[1]))
    if age_mean is None or age_std is None:
        raise ValidationError("vocabulary file missing age statistics header")
    return Vocabulary(
        concepts=tuple(concepts),
        age_mean=age_mean,
        age_std=age_std,
        include_demographics=demographics,
    )


def write_binary_coo(path, matrix: sparse.spmatrix, binary_columns: int):
    """Write the leading 0/1 block of ``matrix`` as a COO text file.

    Columns at ``binary_columns`` and beyond (the age column) are the
    caller's responsibility; values in the written block must be 1.
    """
    coo = matrix.tocoo()
    keep = coo.col < binary_columns
    r = coo.row[keep]
    c = coo.col[keep]
    v = coo.data[keep]
    if not np.all(v == 1.0):
        raise ContractError("binary block contains values other than 1")
    order = np.lexsort((c, r))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for i in order:
            f.write(f"{r[i]} {c[i]}\n")


def read_binary_coo(path) -> sparse.csr_matrix:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValidationError("COO header must be 'n_rows n_cols'")
        n_rows, n_cols = int(header[0]), int(header[1])
        rows: list[int] = []
        cols: list[int] = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"malformed COO line: {line!r}")
            r, c = int(parts[0]), int(parts[1])
            if not (0 <= r < n_rows and 0 <= c < n_cols):
                raise ValidationError(f"COO entry out of bounds: {line!r}")
            rows.append(r)
            cols.append(c)
    data = np.ones(len(rows), dtype=np.float64)
    return sparse.csr_matrix(
        (data, (rows, cols)), shape=(n_rows, n_cols), dtype=np.float64
    )


def standardized_age_column(
    patients: Iterable[IndexedPatient], vocab: Vocabulary
) -> np.ndarray:
    ages = np.asarray([ip.age_at_index() for ip in patients], dtype=np.float64)
    return (ages - vocab.age_mean) / vocab.age_std


def attach_age_column(
    binary: sparse.csr_matrix, age_values: np.ndarray
) -> sparse.csr_matrix:
    """Overwrite the last column of ``binary`` with real-valued ages."""
    n_rows, n_cols = binary.shape
    age_values = np.asarray(age_values, dtype=np.float64)
    if n_rows != age_values.shape[0]:
        raise ContractError("age column length does not match matrix rows")
    coo = binary.tocoo()
    keep = coo.col < n_cols - 1
    nz = np.flatnonzero(age_values != 0.0)
    rows = np.concatenate([coo.row[keep], nz])
    cols = np.concatenate([coo.col[keep], np.full(len(nz), n_cols - 1)])
    data = np.concatenate([coo.data[keep], age_values[nz]])
    return sparse.csr_matrix(
        (data, (rows, cols)), shape=(n_rows, n_cols), dtype=np.float64
    )


def feature_density(matrix: sparse.spmatrix) -> float:
    total = matrix.shape[0] * matrix.shape[1]
    return matrix.nnz / total if total else math.nan
