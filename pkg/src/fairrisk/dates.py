"""Calendar arithmetic helpers.

All windowed cohort rules use one of two conventions, fixed here:

* day-based windows (history >= 365 days, follow-up >= 365 days,
  encounter span >= 730 days, death within 365 days of a diagnosis);
* calendar-year windows (the 5-year medication lookback), computed with
  ``add_years`` so the window start lands on the same month/day.

Ages are completed years: a patient is 40 from their 40th birthday
(inclusive) to the day before their 41st.
"""

from __future__ import annotations

import datetime

DAYS_PER_YEAR = 365
DAYS_TWO_YEARS = 730


def add_years(d: datetime.date, n: int) -> datetime.date:
    """Shift a date by whole calendar years; Feb 29 clamps to Feb 28."""
    try:
        return d.replace(year=d.year + n)
    except ValueError:
        return d.replace(year=d.year + n, day=28)


def age_in_years(birth_date: datetime.date, at: datetime.date) -> int:
    """Completed years of age at ``at``. Feb 29 birthdays roll to Feb 28."""
    years = at.year - birth_date.year
    if (at.month, at.day) < (birth_date.month, birth_date.day):
        years -= 1
    return years


def days_between(a: datetime.date, b: datetime.date) -> int:
    """Signed day count b - a."""
    return (b - a).days


def parse_date(text: str) -> datetime.date:
    return datetime.date.fromisoformat(text)


def format_date(d: datetime.date) -> str:
    return d.isoformat()
