"""Affine trend on the period index and the stochastic projected surfaces.

The period index is regressed on ``tau = t - t_m + 1``.  Uncertainty on the
fitted slope and intercept is propagated into future mortality by drawing
``(a*, b*)`` from their joint normal law and extending the line; there is
no year-to-year noise around a drawn line.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from statistics import NormalDist
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .leecarter import LeeCarterParams
from .rng import SCENARIO_STREAM, substream
from .surface import MortalitySurface


class SurfaceVariant(str, enum.Enum):
    RAW = "raw"
    BIAS_CORRECTED = "bias_corrected"
    MEAN_REFERENCE = "mean_reference"


def trend_cov(sigma_gamma: float, T: int) -> np.ndarray:
    """Covariance of the OLS estimator ``(a_hat, b_hat)`` for ``tau = 1..T``."""
    c = 12.0 * sigma_gamma**2 / (T * (T * T - 1.0))
    half = (T + 1) / 2.0
    return c * np.array([[1.0, -half], [-half, (T + 1) * (2 * T + 1) / 6.0]])


@dataclass(frozen=True)
class TrendFit:
    a_hat: float
    b_hat: float
    sigma_gamma: float
    t_m: int
    t_M: int
    k_bar: float

    def __post_init__(self) -> None:
        if self.t_M - self.t_m + 1 < 3:
            raise ValidationError("a trend fit needs at least 3 years")
        if not self.sigma_gamma >= 0.0:
            raise ValidationError("sigma_gamma must be non-negative")

    @property
    def T(self) -> int:
        return self.t_M - self.t_m + 1

    @property
    def cov(self) -> np.ndarray:
        return trend_cov(self.sigma_gamma, self.T)

    def tau(self, year):
        return np.asarray(year) - self.t_m + 1

    def line(self, tau):
        return self.a_hat * np.asarray(tau, dtype=float) + self.b_hat


@dataclass(frozen=True)
class TrendScenario:
    a_star: float
    b_star: float


def fit_trend(kappa: Sequence[float], years: int | Iterable[int]) -> TrendFit:
    """Closed-form OLS of ``kappa`` on ``tau``.

    ``years`` is either the first calendar year or the full year vector
    matching ``kappa``.
    """
    k = np.asarray(kappa, dtype=float)
    if k.ndim != 1 or k.size < 3:
        raise ValidationError("trend fit needs a series of length >= 3")
    if np.isscalar(years):
        t_m = int(years)  # type: ignore[arg-type]
    else:
        yrs = np.asarray(list(years), dtype=np.int64)  # type: ignore[arg-type]
        if yrs.size != k.size or not np.array_equal(yrs, np.arange(yrs[0], yrs[0] + k.size)):
            raise ValidationError("years must be contiguous and match the series length")
        t_m = int(yrs[0])
    T = k.size
    tau = np.arange(1, T + 1, dtype=float)
    k_bar = float(k.mean())
    a_hat = (np.dot(tau, k) / T - (T + 1) / 2.0 * k_bar) / ((T * T - 1.0) / 12.0)
    b_hat = k_bar - a_hat * (T + 1) / 2.0
    resid = k - (a_hat * tau + b_hat)
    sigma_gamma = float(np.sqrt(np.dot(resid, resid) / (T - 2)))
    return TrendFit(float(a_hat), float(b_hat), sigma_gamma, t_m, t_m + T - 1, k_bar)


def sigma_t_sq_coefficients(fit: TrendFit) -> tuple[float, float, float]:
    """Coefficients ``(c2, c1, c0)`` with ``sigma_tau^2 = c2 tau^2 + c1 tau + c0``."""
    T = fit.T
    c = 12.0 * fit.sigma_gamma**2 / (T * (T * T - 1.0))
    return c, -c * (T + 1), c * (T + 1) * (2 * T + 1) / 6.0


def sigma_t_sq(fit: TrendFit, tau):
    """Variance of ``a* tau + b*``; accepts a scalar or an array of ``tau``."""
    c2, c1, c0 = sigma_t_sq_coefficients(fit)
    t = np.asarray(tau, dtype=float)
    out = np.maximum(c2 * t * t + c1 * t + c0, 0.0)
    return float(out) if out.ndim == 0 else out


def _cov_factor(fit: TrendFit) -> tuple[float, float, float]:
    cov = fit.cov
    l11 = np.sqrt(cov[0, 0])
    if l11 == 0.0:
        return 0.0, 0.0, 0.0
    l21 = cov[1, 0] / l11
    l22 = np.sqrt(max(cov[1, 1] - l21 * l21, 0.0))
    return float(l11), float(l21), float(l22)


def draw_scenario(fit: TrendFit, rng: np.random.Generator) -> TrendScenario:
    """One draw of ``(a*, b*)`` from N((a_hat, b_hat), cov)."""
    if fit.sigma_gamma == 0.0:
        return TrendScenario(fit.a_hat, fit.b_hat)
    l11, l21, l22 = _cov_factor(fit)
    z0, z1 = rng.standard_normal(2)
    return TrendScenario(fit.a_hat + l11 * z0, fit.b_hat + l21 * z0 + l22 * z1)


def scenario_for_index(fit: TrendFit, seed: int, index: int) -> TrendScenario:
    return draw_scenario(fit, substream(seed, SCENARIO_STREAM, index))


def draw_scenario_array(fit: TrendFit, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` draws from one stream as an ``(n, 2)`` array; for bulk analysis."""
    mean = np.array([fit.a_hat, fit.b_hat])
    if fit.sigma_gamma == 0.0:
        return np.tile(mean, (n, 1))
    l11, l21, l22 = _cov_factor(fit)
    chol = np.array([[l11, 0.0], [l21, l22]])
    return mean + rng.standard_normal((n, 2)) @ chol.T


def project_kappa(scenario: TrendScenario, tau) -> np.ndarray:
    return scenario.a_star * np.asarray(tau, dtype=float) + scenario.b_star


def build_surface(
    params: LeeCarterParams,
    fit: TrendFit,
    scenario: TrendScenario | None,
    variant: SurfaceVariant | str,
    horizon_year: int,
) -> MortalitySurface:
    """Fitted history followed by projected rates up to ``horizon_year``."""
    variant = SurfaceVariant(variant)
    if variant is SurfaceVariant.MEAN_REFERENCE:
        if scenario is not None:
            raise ValidationError("the mean-reference surface takes no scenario")
    elif scenario is None:
        raise ValidationError(f"variant {variant.value} requires a trend scenario")
    if fit.t_m != params.t_m or fit.t_M != params.t_M:
        raise ValidationError("trend fit and Lee-Carter parameters cover different years")
    if horizon_year <= fit.t_M:
        raise ValidationError(f"horizon year {horizon_year} must exceed {fit.t_M}")

    tau = np.arange(fit.T + 1, horizon_year - fit.t_m + 2)
    beta = params.beta[:, None]
    if variant is SurfaceVariant.MEAN_REFERENCE:
        log_future = (
            params.alpha[:, None]
            + beta * fit.line(tau)
            + 0.5 * beta**2 * sigma_t_sq(fit, tau)
        )
    else:
        log_future = params.alpha[:, None] + beta * project_kappa(scenario, tau)
        if variant is SurfaceVariant.BIAS_CORRECTED:
            log_future -= 0.5 * beta**2 * sigma_t_sq(fit, tau)
    rates = np.hstack([np.exp(params.log_rates()), np.exp(log_future)])
    return MortalitySurface(params.ages, np.arange(fit.t_m, horizon_year + 1), rates)


def lee_carter_extrapolation(
    params: LeeCarterParams, fit: TrendFit, horizon_year: int
) -> MortalitySurface:
    """Deterministic projection along the fitted line itself."""
    return build_surface(
        params, fit, TrendScenario(fit.a_hat, fit.b_hat), SurfaceVariant.RAW, horizon_year
    )


def fan_chart(
    fit: TrendFit, horizon_year: int, level: float = 0.95, start_year: int | None = None
) -> list[tuple[int, int, float, float, float]]:
    """Rows ``(tau, year, k_mean, k_lo, k_hi)`` of the trend corridor."""
    if not 0.0 < level < 1.0:
        raise ValidationError("confidence level must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    first = fit.t_m if start_year is None else start_year
    years = np.arange(first, horizon_year + 1)
    tau = fit.tau(years)
    mean = fit.line(tau)
    half = z * np.sqrt(sigma_t_sq(fit, tau))
    return [
        (int(tt), int(y), float(m), float(m - h), float(m + h))
        for tt, y, m, h in zip(tau, years, mean, half)
    ]


def write_fan_chart(rows, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("tau", "year", "k_mean", "k_lo", "k_hi"))
    for tau, year, mean, lo, hi in rows:
        writer.writerow((tau, year, repr(mean), repr(lo), repr(hi)))


def trend_to_dict(fit: TrendFit) -> dict:
    return {
        "a_hat": fit.a_hat,
        "b_hat": fit.b_hat,
        "sigma_gamma": fit.sigma_gamma,
        "t_m": fit.t_m,
        "t_M": fit.t_M,
        "k_bar": fit.k_bar,
    }


def trend_from_dict(data: dict) -> TrendFit:
    try:
        a_hat, b_hat = float(data["a_hat"]), float(data["b_hat"])
        t_m, t_M = int(data["t_m"]), int(data["t_M"])
        # k_bar is implied by the line at the design centre
        k_bar = float(data.get("k_bar", a_hat * (t_M - t_m + 2) / 2.0 + b_hat))
        return TrendFit(a_hat, b_hat, float(data["sigma_gamma"]), t_m, t_M, k_bar)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid trend document: {exc}") from None


def save_trend(fit: TrendFit, stream: IO[str]) -> None:
    json.dump(trend_to_dict(fit), stream, indent=2)
    stream.write("\n")


def load_trend(stream: IO[str]) -> TrendFit:
    return trend_from_dict(json.load(stream))
