"""Linear comparison models: ordinary least squares and conjugate Bayesian ridge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnn import z_score


def _design(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.column_stack([np.ones(x.shape[0]), x])


@dataclass
class LinearModel:
    coef: np.ndarray

    def predict(self, x) -> np.ndarray:
        return _design(x) @ self.coef


def fit_ols(x, y) -> LinearModel:
    coef, *_ = np.linalg.lstsq(_design(x), np.asarray(y, dtype=float), rcond=None)
    return LinearModel(coef)


@dataclass
class BayesianRidge:
    """Gaussian prior N(0, prior_var I) on slopes, flat-ish intercept, fixed noise variance."""

    mean: np.ndarray
    cov: np.ndarray
    noise_var: float

    def predict(self, x) -> np.ndarray:
        return _design(x) @ self.mean

    def predictive_sd(self, x) -> np.ndarray:
        d = _design(x)
        return np.sqrt(np.einsum("ij,jk,ik->i", d, self.cov, d) + self.noise_var)

    def interval(self, x, rho: float):
        m, half = self.predict(x), z_score(rho) * self.predictive_sd(x)
        return m - half, m + half


def fit_bayesian_ridge(x, y, prior_var: float = 100.0) -> BayesianRidge:
    """Conjugate posterior with the noise variance set from the OLS residuals."""
    d = _design(x)
    y = np.asarray(y, dtype=float)
    ols, *_ = np.linalg.lstsq(d, y, rcond=None)
    dof = max(d.shape[0] - d.shape[1], 1)
    noise_var = max(float(np.sum((y - d @ ols) ** 2) / dof), 1e-12)
    prior_prec = np.full(d.shape[1], 1.0 / prior_var)
    prior_prec[0] = 1e-8
    prec = d.T @ d / noise_var + np.diag(prior_prec)
    cov = np.linalg.inv(prec)
    mean = cov @ d.T @ y / noise_var
    return BayesianRidge(mean, cov, noise_var)
