"""Synthetic longitudinal patient generator.

Each patient gets a planned index date, a record reaching at least a
year on both sides of it, and encounter/concept events drawn from a
namespaced synthetic vocabulary (``DX.*``, ``LAB.*``, ... never colliding
with ICD-9-CM or ATC codes). The outcome is drawn per patient from
``base_incidence`` times the product of the patient's per-attribute
multipliers; positive patients carry real ASCVD outcome codes placed in
the final year of the record, so they are labeled positive no matter
which eligible encounter the extractor later draws as the index.

Group-dependent score structure comes from two levers: per-group
incidence multipliers, and ``*_shift`` terms that raise or lower the
prevalence of a designated informative-concept block per group. Both
make a naively trained model score groups differently.

Patient i draws from the substream (seed, NS_GENERATOR, i), so output
is byte-identical for a fixed config regardless of sharding.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .dates import add_years, age_in_years
from .errors import ValidationError
from .records import (
    AGE_BIN_EDGES,
    ClinicalEvent,
    GENDERS,
    PatientRecord,
    RACES,
    load_shipped_code_lists,
)
from .streams import NS_GENERATOR, substream

ENCOUNTER_CODES = ("ENC.OUTPATIENT", "ENC.INPATIENT", "ENC.ED", "ENC.TELEHEALTH")
_ENCOUNTER_P = (0.55, 0.20, 0.15, 0.10)

# Noise vocabulary split across the non-encounter domains.
_DOMAIN_SHARES = (
    ("Diagnosis", "DX", 0.30),
    ("LabTest", "LAB", 0.25),
    ("MedicationOrder", "RX", 0.15),
    ("Procedure", "PX", 0.12),
    ("Observation", "OBS", 0.10),
    ("Department", "DEPT", 0.08),
)

_AGE_BIN_UPPER = AGE_BIN_EDGES[1:] + (92,)
_FATAL_ROUTE_P = 0.25
_NEG_DEATH_P = 0.05
_INDEX_ERA_START = datetime.date(2012, 1, 1).toordinal()
_INDEX_ERA_DAYS = 1461  # planned index dates spread over 2012-2015


@dataclass(frozen=True)
class SyntheticCohortConfig:
    n_patients: int
    race_proportions: tuple[float, ...]
    gender_proportions: tuple[float, ...]
    age_proportions: tuple[float, ...]
    base_incidence: float
    race_multipliers: tuple[float, ...] = (1.0,) * 6
    gender_multipliers: tuple[float, ...] = (1.0,) * 2
    age_multipliers: tuple[float, ...] = (1.0,) * 4
    race_shift: tuple[float, ...] = (0.0,) * 6
    gender_shift: tuple[float, ...] = (0.0,) * 2
    age_shift: tuple[float, ...] = (0.0,) * 4
    concept_vocab_size: int = 2000
    mean_events_per_patient: float = 30.0
    seed: int = 0

    def validate(self):
        if self.n_patients < 0:
            raise ValidationError("n_patients: must be non-negative")
        for name, probs, k in (
            ("race_proportions", self.race_proportions, 6),
            ("gender_proportions", self.gender_proportions, 2),
            ("age_proportions", self.age_proportions, 4),
        ):
            if len(probs) != k:
                raise ValidationError(f"{name}: expected {k} entries")
            if any(p < 0 for p in probs):
                raise ValidationError(f"{name}: negative probability")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ValidationError(f"{name}: must sum to 1")
        if not 0.0 < self.base_incidence < 1.0:
            raise ValidationError("base_incidence: must lie in (0, 1)")
        for name, mult, k in (
            ("race_multipliers", self.race_multipliers, 6),
            ("gender_multipliers", self.gender_multipliers, 2),
            ("age_multipliers", self.age_multipliers, 4),
        ):
            if len(mult) != k:
                raise ValidationError(f"{name}: expected {k} entries")
            if any(m <= 0 for m in mult):
                raise ValidationError(f"{name}: multipliers must be positive")
        for name, shift, k in (
            ("race_shift", self.race_shift, 6),
            ("gender_shift", self.gender_shift, 2),
            ("age_shift", self.age_shift, 4),
        ):
            if len(shift) != k:
                raise ValidationError(f"{name}: expected {k} entries")
        if self.concept_vocab_size < 16:
            raise ValidationError("concept_vocab_size: must be at least 16")
        if self.mean_events_per_patient <= 0:
            raise ValidationError("mean_events_per_patient: must be positive")


@dataclass(frozen=True)
class PlanRow:
    """Generator-side truth about one patient, for summaries and tests."""

    patient_id: str
    race_group: int
    gender_group: int
    age_group: int
    age_at_index: int
    outcome: int
    planned_index: datetime.date
    followup_years: float


class _ConceptSpace:
    """Deterministic vocabulary layout derived from a config."""

    def __init__(self, config: SyntheticCohortConfig):
        remaining = config.concept_vocab_size - len(ENCOUNTER_CODES)
        self.n_informative = max(4, min(40, remaining // 6))
        noise_total = remaining - self.n_informative
        self.informative_codes = tuple(
            f"DX.I{j:04d}" for j in range(self.n_informative)
        )
        pool_codes: list[str] = []
        pool_domains: list[str] = []
        allocated = 0
        for i, (domain, prefix, share) in enumerate(_DOMAIN_SHARES):
            count = (
                noise_total - allocated
                if i == len(_DOMAIN_SHARES) - 1
                else int(round(noise_total * share))
            )
            count = max(0, min(count, noise_total - allocated))
            for j in range(count):
                pool_codes.append(f"{prefix}.{j:05d}")
                pool_domains.append(domain)
            allocated += count
        self.pool_codes = tuple(pool_codes)
        self.pool_domains = tuple(pool_domains)
        # Zipf-like popularity over the noise pool.
        ranks = np.arange(1, len(pool_codes) + 1, dtype=np.float64)
        weights = 1.0 / ranks**0.9
        self.pool_cdf = np.cumsum(weights / weights.sum())
        # Informative-concept response: baseline prevalence ~6%, outcome
        # effect ramping from 1.0 to 2.5 across the block. Group shifts
        # touch only the first half, so a debiased model can lean on the
        # clean half without losing the outcome signal.
        n = self.n_informative
        self.alpha = np.full(n, math.log(0.06 / 0.94))
        ramp = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
        self.beta = 1.0 + 1.5 * ramp
        self.shift_mask = (np.arange(n) < n // 2).astype(np.float64)


def _categorical(rng: np.random.Generator, cdf: np.ndarray) -> int:
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), len(cdf) - 1))


def _generate_patient(
    i: int,
    config: SyntheticCohortConfig,
    space: _ConceptSpace,
    cdfs: dict[str, np.ndarray],
    ascvd_codes: tuple[str, ...],
    chd_codes: tuple[str, ...],
) -> tuple[PatientRecord, PlanRow]:
    rng = substream(config.seed, NS_GENERATOR, i)

    race = _categorical(rng, cdfs["race"])
    gender = _categorical(rng, cdfs["gender"])
    age_bin = _categorical(rng, cdfs["age"])

    lo = AGE_BIN_EDGES[age_bin]
    hi = _AGE_BIN_UPPER[age_bin]
    age_years = int(rng.integers(lo, hi))

    index_day = _INDEX_ERA_START + int(rng.integers(0, _INDEX_ERA_DAYS))
    planned_index = datetime.date.fromordinal(index_day)
    # Birth placed so completed age at the planned index is exactly age_years.
    extra_days = int(rng.integers(0, 365))
    birth = add_years(planned_index, -age_years)
    birth = datetime.date.fromordinal(birth.toordinal() - extra_days)

    history_days = int(round(float(rng.uniform(1.15, 5.0)) * 365.25))
    followup_days = int(round(float(rng.uniform(1.1, 4.7)) * 365.25))
    t0 = index_day - history_days
    t1 = index_day + followup_days

    incidence = (
        config.base_incidence
        * config.race_multipliers[race]
        * config.gender_multipliers[gender]
        * config.age_multipliers[age_bin]
    )
    incidence = min(max(incidence, 1e-6), 0.95)
    outcome = int(rng.random() < incidence)

    events: list[tuple[int, str, str]] = []

    n_extra_enc = int(rng.poisson(6.0))
    enc_days = [t0, index_day, t1]
    if n_extra_enc:
        enc_days.extend(int(d) for d in rng.integers(t0 + 1, t1, size=n_extra_enc))
    for d in enc_days:
        code = ENCOUNTER_CODES[_categorical(rng, cdfs["enc"])]
        events.append((d, "EncounterType", code))

    # Informative concepts sit in the first 300 days of the record, which
    # is always before the earliest eligible index time.
    shift = (
        config.race_shift[race]
        + config.gender_shift[gender]
        + config.age_shift[age_bin]
    )
    logits = space.alpha + space.beta * outcome + shift * space.shift_mask
    present = rng.random(space.n_informative) < 1.0 / (1.0 + np.exp(-logits))
    if present.any():
        info_days = rng.integers(t0, t0 + 301, size=int(present.sum()))
        for j, d in zip(np.flatnonzero(present), info_days):
            events.append((int(d), "Diagnosis", space.informative_codes[j]))

    n_noise = int(rng.poisson(config.mean_events_per_patient))
    if n_noise:
        picks = np.searchsorted(space.pool_cdf, rng.random(n_noise), side="right")
        picks = np.minimum(picks, len(space.pool_codes) - 1)
        noise_days = rng.integers(t0, t1 + 1, size=n_noise)
        for p, d in zip(picks, noise_days):
            events.append((int(d), space.pool_domains[p], space.pool_codes[p]))

    death_day: int | None = None
    if outcome:
        if rng.random() < _FATAL_ROUTE_P:
            chd_day = t1 - int(rng.integers(30, 301))
            death_day = chd_day + int(rng.integers(30, 351))
            code = chd_codes[int(rng.integers(0, len(chd_codes)))]
            events.append((chd_day, "Diagnosis", code))
        else:
            n_out = 1 + int(rng.integers(0, 3))
            out_days = rng.integers(t1 - 330, t1 + 1, size=n_out)
            for d in out_days:
                code = ascvd_codes[int(rng.integers(0, len(ascvd_codes)))]
                events.append((int(d), "Diagnosis", code))
    elif rng.random() < _NEG_DEATH_P:
        death_day = t1 + int(rng.integers(0, 600))

    if death_day is not None:
        events = [e for e in events if e[0] <= death_day]
    events.sort()

    last_day = events[-1][0]
    end_day = min(last_day, death_day) if death_day is not None else last_day
    followup_years = (end_day - index_day) / 365.2425

    record = PatientRecord(
        patient_id=f"P{i:08d}",
        birth_date=birth,
        gender=GENDERS[gender],
        race=RACES[race],
        death_date=datetime.date.fromordinal(death_day) if death_day else None,
        events=[
            ClinicalEvent(datetime.date.fromordinal(d), dom, code)
            for d, dom, code in events
        ],
    )
    plan = PlanRow(
        patient_id=record.patient_id,
        race_group=race,
        gender_group=gender,
        age_group=age_bin,
        age_at_index=age_in_years(birth, planned_index),
        outcome=outcome,
        planned_index=planned_index,
        followup_years=followup_years,
    )
    return record, plan


def iter_cohort_with_plan(
    config: SyntheticCohortConfig,
) -> Iterator[tuple[PatientRecord, PlanRow]]:
    """Yield (record, plan) pairs one patient at a time.

    Streaming form of generate_cohort_with_plan; large cohorts can be
    written to disk without holding every event in memory.
    """
    config.validate()
    space = _ConceptSpace(config)
    cdfs = {
        "race": np.cumsum(config.race_proportions),
        "gender": np.cumsum(config.gender_proportions),
        "age": np.cumsum(config.age_proportions),
        "enc": np.cumsum(_ENCOUNTER_P),
    }
    lists = load_shipped_code_lists()
    ascvd = tuple(sorted(lists["ascvd_event"].codes))
    chd = tuple(sorted(lists["fatal_chd"].codes))
    for i in range(config.n_patients):
        yield _generate_patient(i, config, space, cdfs, ascvd, chd)


def generate_cohort_with_plan(
    config: SyntheticCohortConfig,
) -> tuple[list[PatientRecord], list[PlanRow]]:
    """Generate records plus the per-patient plan used to summarize them."""
    records: list[PatientRecord] = []
    plan: list[PlanRow] = []
    for rec, row in iter_cohort_with_plan(config):
        records.append(rec)
        plan.append(row)
    return records, plan


def generate_synthetic_cohort(config: SyntheticCohortConfig) -> list[PatientRecord]:
    records, _ = generate_cohort_with_plan(config)
    return records


# Published cohort characteristics used to calibrate the default config:
# per-group patient counts and outcome incidences.
TABLE1_RACE_COUNTS = (34156, 9018, 21587, 19100, 30300, 136348)
TABLE1_RACE_INCIDENCE = (0.0144, 0.0271, 0.0152, 0.013, 0.00512, 0.0141)
TABLE1_GENDER_COUNTS = (154266, 96074)
TABLE1_GENDER_INCIDENCE = (0.0116, 0.0167)
TABLE1_AGE_COUNTS = (117510, 64477, 44149, 24373)
TABLE1_AGE_INCIDENCE = (0.00603, 0.0128, 0.02, 0.0398)
TABLE1_TOTAL = 250509
TABLE1_OVERALL_INCIDENCE = 0.0135


def _proportions(counts: Sequence[int]) -> tuple[float, ...]:
    total = sum(counts)
    return tuple(c / total for c in counts)


def _calibrated_multipliers(
    proportions: Sequence[float], incidences: Sequence[float]
) -> tuple[float, ...]:
    # Scale so the proportion-weighted mean multiplier is exactly 1; the
    # expected overall incidence then equals base_incidence.
    raw = [inc / TABLE1_OVERALL_INCIDENCE for inc in incidences]
    mean = sum(p * m for p, m in zip(proportions, raw))
    return tuple(m / mean for m in raw)


def table1_config(
    n_patients: int = TABLE1_TOTAL,
    seed: int = 0,
    concept_vocab_size: int = 2000,
    mean_events_per_patient: float = 25.0,
) -> SyntheticCohortConfig:
    """Config calibrated to the published per-group counts and incidences."""
    race_p = _proportions(TABLE1_RACE_COUNTS)
    gender_p = _proportions(TABLE1_GENDER_COUNTS)
    age_p = _proportions(TABLE1_AGE_COUNTS)
    return SyntheticCohortConfig(
        n_patients=n_patients,
        race_proportions=race_p,
        gender_proportions=gender_p,
        age_proportions=age_p,
        base_incidence=TABLE1_OVERALL_INCIDENCE,
        race_multipliers=_calibrated_multipliers(race_p, TABLE1_RACE_INCIDENCE),
        gender_multipliers=_calibrated_multipliers(gender_p, TABLE1_GENDER_INCIDENCE),
        age_multipliers=_calibrated_multipliers(age_p, TABLE1_AGE_INCIDENCE),
        race_shift=(0.2, 0.5, 0.1, 0.0, -0.8, 0.0),
        gender_shift=(-0.15, 0.15),
        age_shift=(-0.5, 0.0, 0.4, 0.9),
        concept_vocab_size=concept_vocab_size,
        mean_events_per_patient=mean_events_per_patient,
        seed=seed,
    )
