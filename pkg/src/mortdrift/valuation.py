"""Monte Carlo valuation of a life-annuity portfolio.

Each sample is one realisation of the discounted annuity outgo
``sum_j r_j * sum_{t=1..K_j} (1+i)^-t`` where ``K_j`` is the curtate
lifetime of member ``j``.  In stochastic mode the outer loop draws a trend
scenario and rebuilds the projected surface; the inner loop simulates
lifetimes under that surface.  Every (scenario, inner) pair has its own
random substream, so results do not depend on how work is split.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DegenerateError, ValidationError
from .leecarter import LeeCarterParams
from .rng import LIFETIME_STREAM, substream
from .surface import DEFAULT_OMEGA_MAX, CohortRateVector, MortalitySurface, cohort_view
from .trend import SurfaceVariant, TrendFit, build_surface, scenario_for_index

REPORT_QUANTILES = (0.5, 0.75, 0.95, 0.995)
MIN_SAMPLES = 1000
_CHUNK = 512


class Mode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class Member:
    id: str
    age: int
    annuity: float


@dataclass(frozen=True)
class Portfolio:
    members: tuple[Member, ...]

    def __post_init__(self) -> None:
        members = tuple(self.members)
        if not members:
            raise ValidationError("portfolio is empty")
        seen: set[str] = set()
        for m in members:
            if m.id in seen:
                raise ValidationError(f"duplicate member id {m.id!r}")
            seen.add(m.id)
            if not m.annuity > 0.0 or not math.isfinite(m.annuity):
                raise ValidationError(f"member {m.id!r}: annuity must be positive")
            if m.age < 0:
                raise ValidationError(f"member {m.id!r}: negative age")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def ages(self) -> np.ndarray:
        return np.array([m.age for m in self.members], dtype=np.int64)

    @property
    def annuities(self) -> np.ndarray:
        return np.array([m.annuity for m in self.members], dtype=float)

    def summary(self) -> dict:
        return {
            "size": len(self),
            "mean_age": float(self.ages.mean()),
            "mean_annuity": float(self.annuities.mean()),
            "total_annuity": math.fsum(self.annuities),
        }


def load_portfolio(stream: IO[str] | Iterable[str]) -> Portfolio:
    """Read an ``id,age,annuity`` CSV."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header] != ["id", "age", "annuity"]:
        raise ValidationError("line 1: expected header id,age,annuity")
    members = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ValidationError(f"line {lineno}: expected 3 fields, got {len(row)}")
        ident = row[0].strip()
        try:
            age_f = float(row[1])
            annuity = float(row[2])
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: malformed row: {exc}") from None
        if not ident or not age_f.is_integer():
            raise ValidationError(f"line {lineno}: malformed row")
        if not annuity > 0.0 or not math.isfinite(annuity):
            raise ValidationError(f"line {lineno}: annuity must be positive")
        if ident in seen:
            raise ValidationError(f"line {lineno}: duplicate id {ident!r}")
        seen.add(ident)
        members.append(Member(ident, int(age_f), annuity))
    return Portfolio(tuple(members))


def save_portfolio(portfolio: Portfolio, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("id", "age", "annuity"))
    for m in portfolio.members:
        writer.writerow((m.id, m.age, repr(m.annuity)))


def replicate(portfolio: Portfolio, n: int) -> Portfolio:
    """``n`` disjoint copies of the portfolio; ids become ``<id>#<copy>``."""
    if n < 1:
        raise ValidationError("replication factor must be >= 1")
    if n == 1:
        return portfolio
    return Portfolio(
        tuple(
            Member(f"{m.id}#{c}", m.age, m.annuity)
            for c in range(1, n + 1)
            for m in portfolio.members
        )
    )


@dataclass(frozen=True)
class ValuationConfig:
    discount_rate: float = 0.025
    n_scenarios: int = 1
    n_inner: int = 20_000
    seed: int = 0
    omega_max: int = DEFAULT_OMEGA_MAX
    replication: int = 1
    variant: SurfaceVariant = SurfaceVariant.RAW
    mode: Mode = Mode.DETERMINISTIC
    valuation_year: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", SurfaceVariant(self.variant))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.discount_rate < 0.0:
            raise ValidationError("discount rate must be >= 0")
        if self.n_scenarios < 1 or self.n_inner < 1:
            raise ValidationError("n_scenarios and n_inner must be positive")
        if self.n_scenarios * self.n_inner < MIN_SAMPLES:
            raise ValidationError(f"need at least {MIN_SAMPLES} samples in total")
        if self.mode is Mode.DETERMINISTIC and self.n_scenarios != 1:
            raise ValidationError("deterministic mode uses a single scenario")
        if self.replication < 1 or self.workers < 1:
            raise ValidationError("replication and workers must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def n_samples(self) -> int:
        return self.n_scenarios * self.n_inner

    def to_dict(self) -> dict:
        return {
            "discount_rate": self.discount_rate,
            "n_scenarios": self.n_scenarios,
            "n_inner": self.n_inner,
            "seed": self.seed,
            "omega_max": self.omega_max,
            "replication": self.replication,
            "variant": self.variant.value,
            "mode": self.mode.value,
            "valuation_year": self.valuation_year,
        }


def _fsum_mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size


def _fsum_var(x: np.ndarray, ddof: int = 1) -> float:
    m = _fsum_mean(x)
    return math.fsum(((x - m) ** 2).tolist()) / (x.size - ddof)


@dataclass(frozen=True, eq=False)
class ValuationResult:
    """Liability samples laid out as ``n_scenarios`` groups of ``n_inner``."""

    samples: np.ndarray
    n_scenarios: int
    n_inner: int
    mean: float = field(init=False)
    std: float = field(init=False)
    cv: float = field(init=False)
    quantiles: dict = field(init=False)
    ci95: tuple = field(init=False)
    quantile_band95: tuple = field(init=False)
    degenerate: bool = field(init=False)

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=float)
        if s.size != self.n_scenarios * self.n_inner:
            raise ValidationError("sample count does not match the grouping")
        if s.size < 2:
            raise ValidationError("need at least 2 samples")
        object.__setattr__(self, "samples", s)
        mean = _fsum_mean(s)
        std = math.sqrt(_fsum_var(s))
        degenerate = std == 0.0 or mean == 0.0
        cv = std / mean if mean != 0.0 else math.nan
        half = 1.96 * std / math.sqrt(s.size)
        qs = np.quantile(s, REPORT_QUANTILES)
        band = np.quantile(s, (0.025, 0.975))
        for name, value in (
            ("mean", mean),
            ("std", std),
            ("cv", cv),
            ("quantiles", {p: float(q) for p, q in zip(REPORT_QUANTILES, qs)}),
            ("ci95", (mean - half, mean + half)),
            ("quantile_band95", (float(band[0]), float(band[1]))),
            ("degenerate", degenerate),
        ):
            object.__setattr__(self, name, value)

    @property
    def grouped(self) -> np.ndarray:
        return self.samples.reshape(self.n_scenarios, self.n_inner)

    def quantile(self, p: float) -> float:
        return float(np.quantile(self.samples, p))

    def to_dict(self) -> dict:
        return {
            "n_samples": int(self.samples.size),
            "n_scenarios": self.n_scenarios,
            "n_inner": self.n_inner,
            "mean": self.mean,
            "std": self.std,
            "cv": None if math.isnan(self.cv) else self.cv,
            "degenerate": self.degenerate,
            "quantiles": {repr(p): q for p, q in self.quantiles.items()},
            "ci95_mean": list(self.ci95),
            "quantile_band95": list(self.quantile_band95),
        }


@dataclass(frozen=True)
class VarianceDecomposition:
    between: float
    within: float
    omega: float
    total: float


def annuity_certain(n_years: int, discount_rate: float) -> np.ndarray:
    """``a[K] = sum_{t=1..K} v^t`` for ``K = 0..n_years``."""
    v = 1.0 / (1.0 + discount_rate)
    return np.concatenate(([0.0], np.cumsum(v ** np.arange(1, n_years + 1))))


def simulate_lifetimes(
    cohorts: Sequence[CohortRateVector], rng: np.random.Generator
) -> np.ndarray:
    """Curtate lifetimes, one per cohort vector, from a single stream.

    Drawing ``K`` by inverting the survival curve with one uniform per
    member has the same law as independent yearly survival trials with
    probabilities ``1 - q_k``.
    """
    u = rng.random(len(cohorts))
    return np.array(
        [_invert_survival(c.survival()[1:], x) for c, x in zip(cohorts, u)], dtype=np.int64
    )


def _invert_survival(surv_tail: np.ndarray, u) -> np.ndarray:
    # K = #{k >= 1 : S_k > u}; -S is non-decreasing so searchsorted applies
    return np.searchsorted(-surv_tail, -np.asarray(u), side="left")


def liability(lifetimes, annuities, discount_rate: float) -> float:
    """Present value of annuities paid in arrears at ``t = 1..K_j``."""
    k = np.asarray(lifetimes, dtype=np.int64)
    r = np.asarray(annuities, dtype=float)
    if k.shape != r.shape:
        raise ValidationError("one lifetime per member is required")
    if k.size == 0:
        return 0.0
    table = annuity_certain(int(k.max()), discount_rate)
    return math.fsum((r * table[k]).tolist())


class _CohortBook:
    """Members grouped by shared cohort vector, ready for vectorised sampling."""

    def __init__(self, cohorts: Sequence[CohortRateVector], annuities: np.ndarray,
                 discount_rate: float):
        keys: dict[bytes, int] = {}
        groups: list[list[int]] = []
        curves: list[np.ndarray] = []
        for j, c in enumerate(cohorts):
            key = c.q.tobytes()
            if key not in keys:
                keys[key] = len(groups)
                groups.append([])
                curves.append(-c.survival()[1:])
            groups[keys[key]].append(j)
        self.members = [np.array(g, dtype=np.int64) for g in groups]
        self.neg_surv = curves
        self.annuities = np.asarray(annuities, dtype=float)
        longest = max(c.size for c in curves)
        self.acert = annuity_certain(longest, discount_rate)
        self.size = len(cohorts)

    def liabilities(self, uniforms: np.ndarray) -> np.ndarray:
        """Liabilities for a ``(n, members)`` block of uniforms."""
        out = np.zeros(uniforms.shape[0])
        for idx, curve in zip(self.members, self.neg_surv):
            k = np.searchsorted(curve, -uniforms[:, idx], side="left")
            out += self.acert[k] @ self.annuities[idx]
        return out


def _cohorts_for(portfolio: Portfolio, surface: MortalitySurface, valuation_year: int,
                 omega_max: int) -> list[CohortRateVector]:
    cache: dict[int, CohortRateVector] = {}
    out = []
    for m in portfolio.members:
        if m.age >= omega_max:
            raise ValidationError(f"member {m.id!r}: age {m.age} >= closure age {omega_max}")
        if m.age not in cache:
            cache[m.age] = cohort_view(surface, valuation_year - m.age, m.age, omega_max)
        out.append(cache[m.age])
    return out


def _sample_block(book: _CohortBook, seed: int, scenario: int, start: int,
                  stop: int) -> np.ndarray:
    u = np.empty((stop - start, book.size))
    for row, inner in enumerate(range(start, stop)):
        u[row] = substream(seed, LIFETIME_STREAM, scenario, inner).random(book.size)
    return book.liabilities(u)


def _sample_scenario(book: _CohortBook, seed: int, scenario: int, n_inner: int) -> np.ndarray:
    return np.concatenate(
        [
            _sample_block(book, seed, scenario, lo, min(lo + _CHUNK, n_inner))
            for lo in range(0, n_inner, _CHUNK)
        ]
    )


def value_cohorts(
    cohorts: Sequence[CohortRateVector],
    annuities,
    config: ValuationConfig,
) -> ValuationResult:
    """Deterministic valuation when each member's cohort vector is known."""
    annuities = np.asarray(annuities, dtype=float)
    if len(cohorts) != annuities.size:
        raise ValidationError("one cohort vector per member is required")
    book = _CohortBook(cohorts, annuities, config.discount_rate)
    blocks = [(lo, min(lo + _CHUNK, config.n_inner)) for lo in range(0, config.n_inner, _CHUNK)]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(lambda b: _sample_block(book, config.seed, 0, *b), blocks))
    return ValuationResult(np.concatenate(parts), 1, config.n_inner)


def _horizon(portfolio: Portfolio, fit: TrendFit, valuation_year: int, omega_max: int) -> int:
    return max(valuation_year + omega_max - int(portfolio.ages.min()), fit.t_M + 1)


def run_valuation(
    config: ValuationConfig,
    params: LeeCarterParams | None,
    fit: TrendFit | None,
    portfolio: Portfolio,
    surface: MortalitySurface | None = None,
) -> ValuationResult:
    """Simulate the liability distribution of ``portfolio``.

    Deterministic mode values the portfolio under ``surface`` when given,
    otherwise under the mean-reference projection.  Stochastic mode draws
    one trend scenario per outer index and builds the surface variant named
    in ``config``.
    """
    portfolio = replicate(portfolio, config.replication)
    valuation_year = config.valuation_year
    if valuation_year is None:
        if fit is None:
            raise ValidationError("valuation_year is required when no trend fit is given")
        valuation_year = fit.t_M + 1
    annuities = portfolio.annuities

    if config.mode is Mode.DETERMINISTIC:
        if surface is None:
            if params is None or fit is None:
                raise ValidationError("a surface or fitted parameters are required")
            horizon = _horizon(portfolio, fit, valuation_year, config.omega_max)
            surface = build_surface(params, fit, None, SurfaceVariant.MEAN_REFERENCE, horizon)
        cohorts = _cohorts_for(portfolio, surface, valuation_year, config.omega_max)
        return value_cohorts(cohorts, annuities, config)

    if surface is not None:
        raise ValidationError("a fixed surface is only meaningful in deterministic mode")
    if config.variant is SurfaceVariant.MEAN_REFERENCE:
        raise ValidationError("stochastic mode needs a scenario-driven surface variant")
    if params is None or fit is None:
        raise ValidationError("stochastic mode needs fitted parameters and a trend fit")
    horizon = _horizon(portfolio, fit, valuation_year, config.omega_max)

    def one(s: int) -> np.ndarray:
        scenario = scenario_for_index(fit, config.seed, s)
        surf = build_surface(params, fit, scenario, config.variant, horizon)
        cohorts = _cohorts_for(portfolio, surf, valuation_year, config.omega_max)
        book = _CohortBook(cohorts, annuities, config.discount_rate)
        return _sample_scenario(book, config.seed, s, config.n_inner)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(one, range(config.n_scenarios)))
    return ValuationResult(np.concatenate(parts), config.n_scenarios, config.n_inner)


def decompose(result: ValuationResult) -> VarianceDecomposition:
    """Split the liability variance into trend (between) and sampling (within).

    ``within`` averages the unbiased per-scenario variances; ``between`` is
    the variance of scenario means less the sampling noise it carries,
    ``within / n_inner``, floored at zero.
    """
    if result.n_scenarios < 2 or result.n_inner < 2:
        raise ValidationError("decomposition needs >= 2 scenarios of >= 2 samples each")
    groups = result.grouped
    within = math.fsum(_fsum_var(g) for g in groups) / result.n_scenarios
    means = np.array([_fsum_mean(g) for g in groups])
    between = max(_fsum_var(means) - within / result.n_inner, 0.0)
    denom = between + within
    if denom == 0.0:
        raise DegenerateError("liability variance is zero; omega is undefined")
    omega = min(max(between / denom, 0.0), 1.0)
    return VarianceDecomposition(between, within, omega, _fsum_var(result.samples))


def omega_n(omega: float, n: int) -> float:
    """Systematic variance share after replicating the portfolio ``n`` times."""
    if not 0.0 < omega <= 1.0:
        raise ValidationError("omega must lie in (0, 1]")
    if n < 1:
        raise ValidationError("n must be >= 1")
    return 1.0 / (1.0 + (1.0 / omega - 1.0) / n)


def curtate_expectancy(cohort: CohortRateVector) -> float:
    return math.fsum(cohort.survival()[1:].tolist())


def cohort_annuity_factor(cohort: CohortRateVector, discount_rate: float) -> float:
    surv = cohort.survival()[1:]
    v = 1.0 / (1.0 + discount_rate)
    return math.fsum((surv * v ** np.arange(1, surv.size + 1)).tolist())


def life_expectancy(surface: MortalitySurface, age: int, generation: int,
                    omega_max: int = DEFAULT_OMEGA_MAX) -> float:
    """Curtate expectation of life at ``age`` for the ``generation`` cohort."""
    return curtate_expectancy(cohort_view(surface, generation, age, omega_max))


def annuity_factor(surface: MortalitySurface, age: int, generation: int,
                   discount_rate: float, omega_max: int = DEFAULT_OMEGA_MAX) -> float:
    """Present value of a unit life annuity in arrears."""
    return cohort_annuity_factor(cohort_view(surface, generation, age, omega_max),
                                 discount_rate)


def expectancy_series(surface: MortalitySurface, age: int, generations: Iterable[int],
                      omega_max: int = DEFAULT_OMEGA_MAX) -> list[tuple[int, float]]:
    return [(int(g), life_expectancy(surface, age, int(g), omega_max)) for g in generations]


def expectancy_drift(surface: MortalitySurface, age: int, generations: Iterable[int],
                     omega_max: int = DEFAULT_OMEGA_MAX) -> float:
    """OLS slope of cohort life expectancy on generation, in months per year."""
    series = expectancy_series(surface, age, generations, omega_max)
    if len(series) < 3:
        raise ValidationError("expectancy drift needs at least 3 generations")
    g = np.array([s[0] for s in series], dtype=float)
    e = np.array([s[1] for s in series])
    slope = np.dot(g - g.mean(), e - e.mean()) / np.dot(g - g.mean(), g - g.mean())
    return 12.0 * float(slope)


def drift_gap(reference: float, other: float) -> dict:
    """Relative gap between two drifts, against each of the two bases."""
    return {
        "relative_to_reference": (other - reference) / reference,
        "relative_to_other": (other - reference) / other,
    }


def histogram(samples, bins: int = 50) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(counts.size)]


def write_histogram(rows, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("bin_lo", "bin_hi", "count"))
    for lo, hi, count in rows:
        writer.writerow((repr(lo), repr(hi), count))
