"""Log-bilinear Lee-Carter fit ``ln mu[x, t] = alpha[x] + beta[x] * kappa[t]``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .errors import DegenerateError, ValidationError
from .surface import MortalitySurface


@dataclass(frozen=True, eq=False)
class LeeCarterParams:
    """Fitted Lee-Carter parameters, normalised so sum(beta)=1 and sum(kappa)=0."""

    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    sigma_eps: float
    ages: np.ndarray
    years: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "kappa"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("ages", "years"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if self.alpha.shape != self.ages.shape or self.beta.shape != self.ages.shape:
            raise ValidationError("alpha and beta must have one entry per age")
        if self.kappa.shape != self.years.shape:
            raise ValidationError("kappa must have one entry per year")
        if self.sigma_eps < 0.0:
            raise ValidationError("sigma_eps must be non-negative")

    @property
    def t_m(self) -> int:
        return int(self.years[0])

    @property
    def t_M(self) -> int:
        return int(self.years[-1])

    def log_rates(self, kappa: np.ndarray | None = None) -> np.ndarray:
        k = self.kappa if kappa is None else np.asarray(kappa, dtype=float)
        return self.alpha[:, None] + np.outer(self.beta, k)


def fit_lee_carter(surface: MortalitySurface) -> LeeCarterParams:
    """Least-squares Lee-Carter fit through the leading singular pair.

    ``alpha`` is the row mean of the log surface; ``(beta, kappa)`` is the
    best rank-1 approximation of the centred log surface, rescaled so that
    ``beta`` sums to one.  A surface that does not move in time yields a
    flagged degenerate fit with ``kappa = 0`` and uniform ``beta``.
    """
    log_mu = np.log(surface.rates)
    n_ages, n_years = log_mu.shape
    alpha = log_mu.mean(axis=1)
    centred = log_mu - alpha[:, None]

    u, s, vt = np.linalg.svd(centred, full_matrices=False)
    scale = max(1.0, float(np.abs(log_mu).max()))
    if s[0] <= 1e-12 * scale * np.sqrt(log_mu.size):
        return LeeCarterParams(
            alpha=alpha,
            beta=np.full(n_ages, 1.0 / n_ages),
            kappa=np.zeros(n_years),
            sigma_eps=0.0,
            ages=surface.ages,
            years=surface.years,
            degenerate=True,
        )

    beta = u[:, 0]
    kappa = s[0] * vt[0]
    total = beta.sum()
    if abs(total) < 1e-8 * np.abs(beta).sum():
        raise DegenerateError("age loadings sum to zero; cannot normalise sum(beta) = 1")
    beta = beta / total
    kappa = kappa * total
    # rows of the centred matrix sum to zero, so kappa does too up to rounding
    shift = kappa.mean()
    kappa = kappa - shift
    alpha = alpha + beta * shift

    resid = log_mu - alpha[:, None] - np.outer(beta, kappa)
    dof = max(n_ages * n_years - n_ages - n_years, 1)
    sigma_eps = float(np.sqrt(np.sum(resid**2) / dof))
    return LeeCarterParams(alpha, beta, kappa, sigma_eps, surface.ages, surface.years)


def reconstruct(params: LeeCarterParams) -> MortalitySurface:
    """Noise-free surface ``exp(alpha + beta * kappa)`` over the fitted ranges."""
    return MortalitySurface(params.ages, params.years, np.exp(params.log_rates()))


def params_to_dict(params: LeeCarterParams) -> dict:
    return {
        "alpha": params.alpha.tolist(),
        "beta": params.beta.tolist(),
        "kappa": params.kappa.tolist(),
        "sigma_eps": float(params.sigma_eps),
        "ages": params.ages.tolist(),
        "years": params.years.tolist(),
        "degenerate": bool(params.degenerate),
    }


def params_from_dict(data: dict) -> LeeCarterParams:
    try:
        return LeeCarterParams(
            alpha=np.array(data["alpha"], dtype=float),
            beta=np.array(data["beta"], dtype=float),
            kappa=np.array(data["kappa"], dtype=float),
            sigma_eps=float(data["sigma_eps"]),
            ages=np.array(data["ages"], dtype=np.int64),
            years=np.array(data["years"], dtype=np.int64),
            degenerate=bool(data.get("degenerate", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid Lee-Carter parameter document: {exc}") from None


def save_params(params: LeeCarterParams, stream: IO[str]) -> None:
    json.dump(params_to_dict(params), stream, indent=2)
    stream.write("\n")


def load_params(stream: IO[str]) -> LeeCarterParams:
    return params_from_dict(json.load(stream))
