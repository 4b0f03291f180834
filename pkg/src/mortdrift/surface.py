"""Mortality surfaces: storage, CSV I/O, hazard conversion and cohort reads.

A surface holds instantaneous mortality rates (forces of mortality) on a
complete age x calendar-year grid.  Annual death probabilities are derived
assuming a constant hazard inside each year of age.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import ValidationError

DEFAULT_OMEGA_MAX = 120

SURFACE_HEADER = ("age", "year", "mu")
COHORT_HEADER = ("age", "year", "q")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MortalitySurface:
    """Complete grid of hazards ``rates[i, j]`` for ``ages[i]`` and ``years[j]``."""

    ages: np.ndarray
    years: np.ndarray
    rates: np.ndarray

    def __post_init__(self) -> None:
        ages = np.asarray(self.ages)
        years = np.asarray(self.years)
        rates = np.asarray(self.rates, dtype=float)
        for name, idx in (("ages", ages), ("years", years)):
            if idx.ndim != 1 or idx.size < 2:
                raise ValidationError(f"{name} must contain at least 2 points")
            if not np.array_equal(idx, np.arange(idx[0], idx[0] + idx.size)):
                raise ValidationError(f"{name} must be a contiguous integer range")
        if rates.shape != (ages.size, years.size):
            raise ValidationError(
                f"rates shape {rates.shape} does not match "
                f"{ages.size} ages x {years.size} years"
            )
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0.0):
            raise ValidationError("all rates must be strictly positive and finite")
        object.__setattr__(self, "ages", _frozen(ages.astype(np.int64)))
        object.__setattr__(self, "years", _frozen(years.astype(np.int64)))
        object.__setattr__(self, "rates", _frozen(rates))

    @classmethod
    def from_ranges(cls, x_min: int, t_min: int, rates) -> "MortalitySurface":
        rates = np.asarray(rates, dtype=float)
        if rates.ndim != 2:
            raise ValidationError("rates must be a 2-d grid")
        return cls(
            np.arange(x_min, x_min + rates.shape[0]),
            np.arange(t_min, t_min + rates.shape[1]),
            rates,
        )

    @property
    def x_min(self) -> int:
        return int(self.ages[0])

    @property
    def x_max(self) -> int:
        return int(self.ages[-1])

    @property
    def t_min(self) -> int:
        return int(self.years[0])

    @property
    def t_max(self) -> int:
        return int(self.years[-1])

    def rate(self, age: int, year: int) -> float:
        if not (self.x_min <= age <= self.x_max and self.t_min <= year <= self.t_max):
            raise KeyError((age, year))
        return float(self.rates[age - self.x_min, year - self.t_min])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MortalitySurface):
            return NotImplemented
        return (
            np.array_equal(self.ages, other.ages)
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.rates, other.rates)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class CohortRateVector:
    """Annual death probabilities along one birth cohort.

    Entry ``k`` of ``q`` applies at age ``start_age + k`` during calendar
    year ``generation + start_age + k``.  The last entry is the closure
    age, where death is certain.
    """

    generation: int
    start_age: int
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ValidationError("q must be a non-empty vector")
        if np.any(q < 0.0) or np.any(q > 1.0) or not np.all(np.isfinite(q)):
            raise ValidationError("death probabilities must lie in [0, 1]")
        object.__setattr__(self, "q", _frozen(q))

    @property
    def omega_max(self) -> int:
        return self.start_age + self.q.size - 1

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.start_age, self.start_age + self.q.size)

    @property
    def years(self) -> np.ndarray:
        return self.ages + self.generation

    def survival(self) -> np.ndarray:
        """Survival probabilities ``S_0 = 1, S_k = prod_{m<k} (1 - q_m)``."""
        return np.concatenate(([1.0], np.cumprod(1.0 - self.q)))


def mu_to_q(mu):
    """One-year death probability under a constant hazard: ``1 - exp(-mu)``.

    Works elementwise on arrays; negative hazards are rejected.
    """
    arr = np.asarray(mu, dtype=float)
    if np.any(arr < 0.0) or np.any(np.isnan(arr)):
        raise ValidationError("hazard must be non-negative")
    q = -np.expm1(-arr)
    return float(q) if q.ndim == 0 else q


def cohort_view(
    surface: MortalitySurface,
    generation: int,
    start_age: int,
    omega_max: int = DEFAULT_OMEGA_MAX,
    extend_ages: bool = True,
) -> CohortRateVector:
    """Read the diagonal of ``surface`` for one generation.

    Ages above the last tabulated age reuse the last-age rate of the same
    calendar year when ``extend_ages`` is set.  Calendar years are never
    extrapolated; project the surface far enough beforehand.
    """
    if start_age > omega_max:
        raise ValidationError(f"start age {start_age} exceeds closure age {omega_max}")
    if start_age < surface.x_min:
        raise ValidationError(
            f"start age {start_age} is below the first surface age {surface.x_min}"
        )
    ages = np.arange(start_age, omega_max)
    years = generation + ages
    if ages.size:
        if years[0] < surface.t_min or years[-1] > surface.t_max:
            raise ValidationError(
                f"generation {generation} diagonal covers years "
                f"{years[0]}..{years[-1]}, outside surface years "
                f"{surface.t_min}..{surface.t_max}"
            )
        if not extend_ages and ages[-1] > surface.x_max:
            raise ValidationError(
                f"diagonal reaches age {ages[-1]} beyond last surface age "
                f"{surface.x_max} and age extension is disabled"
            )
    rows = np.minimum(ages, surface.x_max) - surface.x_min
    mu = surface.rates[rows, years - surface.t_min]
    q = np.append(mu_to_q(mu), 1.0)
    return CohortRateVector(generation, start_age, q)


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def load_surface(stream: IO[str] | Iterable[str]) -> MortalitySurface:
    """Parse a long-format ``age,year,mu`` CSV into a complete surface."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip().lower() for h in header) != SURFACE_HEADER:
        raise ValidationError(f"line 1: expected header {','.join(SURFACE_HEADER)}")
    cells: dict[tuple[int, int], float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ValidationError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            age, year, mu = _parse_int(row[0]), _parse_int(row[1]), float(row[2])
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: malformed row: {exc}") from None
        if not math.isfinite(mu) or mu <= 0.0:
            raise ValidationError(f"line {lineno}: non-positive rate {row[2].strip()}")
        if (age, year) in cells:
            raise ValidationError(f"line {lineno}: duplicate cell ({age}, {year})")
        cells[(age, year)] = mu
    if not cells:
        raise ValidationError("surface file has no data rows")

    ages = sorted({a for a, _ in cells})
    years = sorted({t for _, t in cells})
    age_range = range(ages[0], ages[-1] + 1)
    year_range = range(years[0], years[-1] + 1)
    missing = [(a, t) for a in age_range for t in year_range if (a, t) not in cells]
    if missing:
        shown = ", ".join(f"({a}, {t})" for a, t in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise ValidationError(f"incomplete grid, missing cells: {shown}{more}")
    rates = np.array([[cells[(a, t)] for t in year_range] for a in age_range])
    return MortalitySurface(np.array(age_range), np.array(year_range), rates)


def save_surface(surface: MortalitySurface, stream: IO[str]) -> None:
    # repr() gives the shortest string that round-trips the float exactly
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SURFACE_HEADER)
    for i, age in enumerate(surface.ages):
        for j, year in enumerate(surface.years):
            writer.writerow((int(age), int(year), repr(float(surface.rates[i, j]))))


def save_cohort(cohort: CohortRateVector, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(COHORT_HEADER)
    for age, year, q in zip(cohort.ages, cohort.years, cohort.q):
        writer.writerow((int(age), int(year), repr(float(q))))
