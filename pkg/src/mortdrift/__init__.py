"""Prospective mortality with trend uncertainty and annuity-portfolio Monte Carlo."""

from .errors import DegenerateError, MortdriftError, ValidationError
from .leecarter import LeeCarterParams, fit_lee_carter, reconstruct
from .surface import (
    CohortRateVector,
    MortalitySurface,
    cohort_view,
    load_surface,
    mu_to_q,
    save_surface,
)
from .trend import (
    SurfaceVariant,
    TrendFit,
    TrendScenario,
    build_surface,
    draw_scenario,
    fit_trend,
    project_kappa,
    sigma_t_sq,
)
from .valuation import (
    Mode,
    Portfolio,
    ValuationConfig,
    ValuationResult,
    VarianceDecomposition,
    annuity_factor,
    decompose,
    expectancy_drift,
    liability,
    life_expectancy,
    load_portfolio,
    omega_n,
    replicate,
    run_valuation,
    simulate_lifetimes,
)

__version__ = "0.1.0"
