"""Cohort extraction rules.

A patient enters the cohort when they have at least two clinical
encounters, at least two years apart, while aged 40 or older. The index
time is one encounter drawn uniformly from those that leave at least one
year of history and one year of follow-up; history is anchored to the
first event date and follow-up to min(last event date, death date).
Encounters are events with domain ``EncounterType``.

Exclusions: any CVD diagnosis before the index (unlimited lookback), or
a lipid lowering prescription within the five calendar years before it.
Outcome: an ASCVD event code at or after the index, or a CHD code at or
after the index followed by death within 365 days.
"""

from __future__ import annotations

import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dates import DAYS_PER_YEAR, DAYS_TWO_YEARS, add_years, age_in_years
from .errors import ContractError, ValidationError
from .records import (
    AGE_BIN_EDGES,
    CodeList,
    GENDER_IDS,
    GroupAssignment,
    IndexedPatient,
    PatientRecord,
    RACE_IDS,
)

MIN_INDEX_AGE = 40
SPLIT_NAMES = ("train", "val", "test")


def record_end(patient: PatientRecord) -> Optional[datetime.date]:
    """min(last event date, death date); None for an empty record."""
    if not patient.events:
        return None
    last = max(e.date for e in patient.events)
    if patient.death_date is not None and patient.death_date < last:
        return patient.death_date
    return last


def eligible_index_times(patient: PatientRecord) -> list[datetime.date]:
    """Encounter dates that satisfy every index-time requirement.

    Returns the empty list when the patient fails the two-encounter /
    two-year / age-40 prescreen or no encounter leaves a year of history
    and a year of follow-up.
    """
    if not patient.events:
        return []
    encounters_40 = sorted(
        {
            e.date
            for e in patient.events
            if e.domain == "EncounterType"
            and age_in_years(patient.birth_date, e.date) >= MIN_INDEX_AGE
        }
    )
    if len(encounters_40) < 2:
        return []
    if (encounters_40[-1] - encounters_40[0]).days < DAYS_TWO_YEARS:
        return []
    first_event = min(e.date for e in patient.events)
    end = record_end(patient)
    return [
        d
        for d in encounters_40
        if (d - first_event).days >= DAYS_PER_YEAR
        and (end - d).days >= DAYS_PER_YEAR
    ]


def select_index_time(
    patient: PatientRecord, rng: np.random.Generator
) -> Optional[IndexedPatient]:
    """Draw one index time uniformly from the eligible encounters.

    Returns None when the patient is excluded for lack of an eligible
    encounter.
    """
    eligible = eligible_index_times(patient)
    if not eligible:
        return None
    index_time = eligible[int(rng.integers(0, len(eligible)))]
    return IndexedPatient(
        patient=patient, index_time=index_time, followup_end=record_end(patient)
    )


def apply_exclusions(
    ip: IndexedPatient, cvd_codes: CodeList, lipid_codes: CodeList
) -> bool:
    """True when the patient must be excluded from the cohort.

    CVD diagnoses exclude with unlimited lookback; lipid lowering orders
    exclude within [index - 5 calendar years, index). Codes are matched
    exactly (after trimming) against their own event domain.
    """
    lipid_window_start = add_years(ip.index_time, -5)
    for e in ip.patient.events:
        if e.date >= ip.index_time:
            continue
        code = e.code.strip()
        if e.domain == "Diagnosis" and code in cvd_codes:
            return True
        if (
            e.domain == "MedicationOrder"
            and e.date >= lipid_window_start
            and code in lipid_codes
        ):
            return True
    return False


def label_outcome(
    ip: IndexedPatient, ascvd_codes: CodeList, chd_codes: CodeList
) -> int:
    """1 when an ASCVD event follows the index time, else 0.

    A CHD diagnosis counts only when the patient dies within 365 days of
    the diagnosis date (death on or after the diagnosis).
    """
    death = ip.patient.death_date
    for e in ip.patient.events:
        if e.date < ip.index_time or e.domain != "Diagnosis":
            continue
        code = e.code.strip()
        if code in ascvd_codes:
            return 1
        if code in chd_codes and death is not None:
            if 0 <= (death - e.date).days <= DAYS_PER_YEAR:
                return 1
    return 0


def age_group_of(age: int) -> int:
    if age < MIN_INDEX_AGE:
        raise ContractError(f"age {age} below cohort minimum {MIN_INDEX_AGE}")
    group = 0
    for g, lower in enumerate(AGE_BIN_EDGES):
        if age >= lower:
            group = g
    return group


def assign_groups(ip: IndexedPatient) -> GroupAssignment:
    """Map race/gender/age-at-index onto the fixed integer group ids."""
    age = age_in_years(ip.patient.birth_date, ip.index_time)
    return GroupAssignment(
        race_group=RACE_IDS[ip.patient.race],
        gender_group=GENDER_IDS[ip.patient.gender],
        age_group=age_group_of(age),
    )


def split_cohort(
    ids: Sequence[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[str], list[str], list[str]]:
    """Shuffle ids and partition into train/val/test.

    Validation and test take floor(N * ratio) ids each; the remainder
    goes to training. Deterministic for a fixed seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios: must sum to 1, got {ratios}")
    from .streams import NS_SPLIT, substream

    ids = list(ids)
    order = substream(seed, NS_SPLIT).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def write_splits(
    path: Path | str, splits: tuple[list[str], list[str], list[str]]
):
    """Emit `patient_id<TAB>split` lines, train then val then test."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, split_ids in zip(SPLIT_NAMES, splits):
            for pid in split_ids:
                fh.write(f"{pid}\t{name}\n")


def read_splits(path: Path | str) -> dict[str, str]:
    assignment = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            pid, split = line.split("\t")
            if split not in SPLIT_NAMES:
                raise ValidationError(f"split: unknown split tag {split!r}")
            assignment[pid] = split
    return assignment
