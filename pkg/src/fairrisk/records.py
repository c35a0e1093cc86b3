"""Patient records, clinical events, code lists, and their file formats.

Patients are stored as line-delimited JSON, one object per line, with
ISO-8601 dates. Code lists are plain text, one code per line, with
``#`` comments. The integer ids used for sensitive groups are fixed
here and documented in the README:

* race: Asian=0, Black=1, Hispanic=2, Other=3, Unknown=4, White=5
* gender: Female=0, Male=1
* age bins (at index time, lower bound inclusive):
  40-55=0, 55-65=1, 65-75=2, 75+=3
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .dates import age_in_years, format_date, parse_date
from .errors import ValidationError

DOMAINS = (
    "Diagnosis",
    "Procedure",
    "MedicationOrder",
    "LabTest",
    "EncounterType",
    "Department",
    "Observation",
)

RACES = ("Asian", "Black", "Hispanic", "Other", "Unknown", "White")
GENDERS = ("Female", "Male")
AGE_BIN_LABELS = ("40-55", "55-65", "65-75", "75+")
AGE_BIN_EDGES = (40, 55, 65, 75)  # lower bounds; last bin is open-ended

RACE_IDS = {name: i for i, name in enumerate(RACES)}
GENDER_IDS = {name: i for i, name in enumerate(GENDERS)}

# Group counts per sensitive attribute, keyed by attribute name.
GROUP_COUNTS = {"race": len(RACES), "gender": len(GENDERS), "age": len(AGE_BIN_LABELS)}

_DOMAIN_SET = frozenset(DOMAINS)


@dataclass(slots=True)
class ClinicalEvent:
    date: datetime.date
    domain: str
    code: str

    def validate(self):
        if self.domain not in _DOMAIN_SET:
            raise ValidationError(f"domain: unknown event domain {self.domain!r}")
        if not self.code:
            raise ValidationError("code: event code must be non-empty")


@dataclass(slots=True)
class PatientRecord:
    patient_id: str
    birth_date: datetime.date
    gender: str
    race: str
    death_date: Optional[datetime.date] = None
    events: list[ClinicalEvent] = field(default_factory=list)

    def validate(self):
        if self.gender not in GENDER_IDS:
            raise ValidationError(f"gender: unknown gender {self.gender!r}")
        if self.race not in RACE_IDS:
            raise ValidationError(f"race: unknown race {self.race!r}")
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.date < prev.date:
                raise ValidationError(
                    f"events: not sorted by date for patient {self.patient_id}"
                )


@dataclass(slots=True)
class IndexedPatient:
    """A patient with a selected index time.

    ``followup_end`` is min(last event date, death date) and is kept for
    reporting; labeling itself uses the entire record after the index.
    """

    patient: PatientRecord
    index_time: datetime.date
    followup_end: datetime.date

    def age_at_index(self) -> int:
        return age_in_years(self.patient.birth_date, self.index_time)


@dataclass(slots=True)
class GroupAssignment:
    race_group: int
    gender_group: int
    age_group: int


@dataclass(frozen=True)
class CodeList:
    name: str
    codes: frozenset[str]

    def __post_init__(self):
        if not self.codes:
            raise ValidationError(f"codes: code list {self.name!r} is empty")

    def __contains__(self, code: str) -> bool:
        return code in self.codes


def load_code_list(path: Path | str, name: str | None = None) -> CodeList:
    """Read a one-code-per-line text file; ``#`` starts a comment."""
    path = Path(path)
    codes = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            codes.append(line)
    if len(codes) != len(set(codes)):
        raise ValidationError(f"codes: duplicate entries in {path}")
    return CodeList(name=name or path.stem, codes=frozenset(codes))


def shipped_code_list_dir() -> Path:
    """Directory holding the four code lists bundled with the package."""
    return Path(resources.files("fairrisk") / "data")


def load_shipped_code_lists(directory: Path | str | None = None) -> dict[str, CodeList]:
    """Load the CVD exclusion, lipid drug, ASCVD event, and fatal CHD lists."""
    directory = Path(directory) if directory is not None else shipped_code_list_dir()
    names = {
        "cvd_exclusion": "cvd_exclusion_icd9.txt",
        "lipid_lowering": "lipid_lowering_atc.txt",
        "ascvd_event": "ascvd_event_icd9.txt",
        "fatal_chd": "fatal_chd_icd9.txt",
    }
    return {
        key: load_code_list(directory / fname, name=key) for key, fname in names.items()
    }


def record_to_dict(rec: PatientRecord) -> dict:
    return {
        "patient_id": rec.patient_id,
        "birth_date": format_date(rec.birth_date),
        "gender": rec.gender,
        "race": rec.race,
        "death_date": format_date(rec.death_date) if rec.death_date else None,
        "events": [[format_date(e.date), e.domain, e.code] for e in rec.events],
    }


def record_from_dict(obj: dict) -> PatientRecord:
    rec = PatientRecord(
        patient_id=obj["patient_id"],
        birth_date=parse_date(obj["birth_date"]),
        gender=obj["gender"],
        race=obj["race"],
        death_date=parse_date(obj["death_date"]) if obj.get("death_date") else None,
        events=[ClinicalEvent(parse_date(d), dom, code) for d, dom, code in obj["events"]],
    )
    rec.validate()
    return rec


def write_records(records: Iterable[PatientRecord], path: Path | str):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), separators=(",", ":")))
            fh.write("\n")


def read_records(path: Path | str) -> list[PatientRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records
