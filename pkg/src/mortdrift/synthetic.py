"""Synthetic inputs shaped like a national female table and a small annuity book.

Nothing here is real data.  The generators exist so the pipeline can be
exercised end to end without the proprietary tables and portfolio.
"""

from __future__ import annotations

import numpy as np

from .leecarter import LeeCarterParams, reconstruct
from .surface import MortalitySurface
from .valuation import Member, Portfolio

# trend of the period index and its residual scale, per calendar year
TREND_SLOPE = -2.05775
TREND_SIGMA = 3.98227882


def gompertz_alpha(ages: np.ndarray) -> np.ndarray:
    """Log hazards at the centre of the window: infant dip, hump, Gompertz."""
    ages = np.asarray(ages, dtype=float)
    senescent = np.log(2.0e-5) + 0.098 * ages
    infant = np.log(4.0e-3) - 1.2 * ages
    hump = np.log(1.5e-4) - ((ages - 22.0) / 8.0) ** 2
    return np.log(0.93 * (np.exp(senescent) + np.exp(infant) + np.exp(hump) + 1.0e-4))


def age_loadings(ages: np.ndarray) -> np.ndarray:
    """Positive age sensitivities summing to one, larger at young ages."""
    ages = np.asarray(ages, dtype=float)
    raw = 1.0 + np.exp(-ages / 25.0)
    return raw / raw.sum()


def synthetic_params(
    first_age: int = 0,
    last_age: int = 105,
    first_year: int = 1959,
    last_year: int = 2005,
    seed: int = 2007,
    trend_sigma: float = TREND_SIGMA,
    slope: float = TREND_SLOPE,
) -> LeeCarterParams:
    """Lee-Carter parameters with a noisy affine period index."""
    ages = np.arange(first_age, last_age + 1)
    years = np.arange(first_year, last_year + 1)
    T = years.size
    tau = np.arange(1, T + 1, dtype=float)
    design = np.column_stack([np.ones(T), tau])
    noise = np.random.default_rng(seed).standard_normal(T)
    # residuals orthogonal to the line and scaled so the OLS fit returns
    # exactly (slope, -slope * (T + 1) / 2, trend_sigma)
    noise -= design @ np.linalg.lstsq(design, noise, rcond=None)[0]
    if trend_sigma > 0.0:
        noise *= trend_sigma / np.sqrt(noise @ noise / (T - 2))
    else:
        noise[:] = 0.0
    kappa = slope * (tau - (T + 1) / 2.0) + noise
    return LeeCarterParams(
        alpha=gompertz_alpha(ages),
        beta=age_loadings(ages),
        kappa=kappa,
        sigma_eps=0.0,
        ages=ages,
        years=years,
    )


def synthetic_surface(noise: float = 0.02, seed: int = 2007, **kwargs) -> MortalitySurface:
    """Observed-like surface: the Lee-Carter fit plus iid log-rate noise."""
    params = synthetic_params(seed=seed, **kwargs)
    base = reconstruct(params)
    rng = np.random.default_rng(seed + 1)
    rates = base.rates * np.exp(noise * rng.standard_normal(base.rates.shape))
    return MortalitySurface(base.ages, base.years, rates)


def reference_portfolio(
    size: int = 374,
    mean_age: float = 63.8,
    mean_annuity: float = 5500.0,
    seed: int = 374,
    age_sd: float = 5.0,
    annuity_dispersion: float = 0.1,
) -> Portfolio:
    """Annuitants with integer ages near ``mean_age`` and lognormal annuities.

    Ages are shifted so their mean is the closest integer-sum value to
    ``mean_age``; annuities are rescaled to hit ``mean_annuity`` exactly.
    """
    rng = np.random.default_rng(seed)
    ages = np.clip(np.rint(rng.normal(mean_age, age_sd, size)), 55, 95).astype(int)
    target = int(round(mean_age * size))
    order = rng.permutation(size)
    i = 0
    while ages.sum() != target:
        j = order[i % size]
        step = 1 if ages.sum() < target else -1
        if 55 <= ages[j] + step <= 95:
            ages[j] += step
        i += 1
    annuity = rng.lognormal(0.0, annuity_dispersion, size)
    annuity *= mean_annuity / annuity.mean()
    return Portfolio(
        tuple(Member(f"P{k:04d}", int(a), float(r)) for k, (a, r) in enumerate(zip(ages, annuity)))
    )
