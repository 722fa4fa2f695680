"""GGN-Laplace posterior over the weights and the marginal on ``theta0``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit
from .stein import SteinModel, model_eval, param_jacobian_row

SIGMA0_GRID = tuple(10.0 ** k for k in range(-4, 5))
MIN_NOISE_VAR = 1e-12


@dataclass(frozen=True)
class LaplacePosterior:
    theta_map: np.ndarray
    H_ggn: np.ndarray
    sigma2: float
    sigma0_2: float
    theta0_variance: float

    @property
    def theta0_mean(self) -> float:
        return float(self.theta_map[0])

    @property
    def theta0_std(self) -> float:
        return math.sqrt(self.theta0_variance)


def jacobian_matrix(model: SteinModel, x, scores=None, chunk: int = 2048) -> np.ndarray:
    """Rows ``J(x_i) = d g(x_i) / d theta`` stacked into ``(n, p + 1)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    scores = None if scores is None else np.atleast_2d(scores)
    rows = []
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        rows.append(param_jacobian_row(model, x[sl], None if scores is None else scores[sl]))
    return np.concatenate(rows, axis=0)


def ggn_from_jacobian(jac, sigma2: float) -> np.ndarray:
    """``(1 / sigma^2) sum_i J_i J_i^T``."""
    if not sigma2 > 0:
        raise ValueError("noise variance must be positive")
    jac = np.asarray(jac, dtype=np.float64)
    h = (jac.T @ jac) / sigma2
    return 0.5 * (h + h.T)


def build_ggn(model: SteinModel, x, sigma2: float, scores=None) -> np.ndarray:
    return ggn_from_jacobian(jacobian_matrix(model, x, scores), sigma2)


def _posterior_precision_factor(h_ggn, sigma0_2):
    prec = np.array(h_ggn, dtype=np.float64, copy=True)
    prec[np.diag_indices_from(prec)] += 1.0 / sigma0_2
    chol, _ = numkit.robust_cholesky(prec)
    return chol


def posterior_theta0(h_ggn, sigma0_2: float, theta_map):
    """Mean and variance of ``theta0`` under ``N(theta_map, (H + I / sigma0^2)^-1)``.

    The variance is the leading entry of the solve against the first unit
    vector; no full inverse is formed.
    """
    if not sigma0_2 > 0:
        raise ValueError("prior variance must be positive")
    h_ggn = np.asarray(h_ggn, dtype=np.float64)
    chol = _posterior_precision_factor(h_ggn, sigma0_2)
    e0 = np.zeros(h_ggn.shape[0])
    e0[0] = 1.0
    var = float(numkit.cho_solve(chol, e0)[0])
    # rounding can push the variance marginally above the prior bound
    var = min(var, sigma0_2)
    return float(np.asarray(theta_map)[0]), var


def log_evidence(sigma2, sigma0_2, residuals, theta_map, h_ggn=None, jac=None) -> float:
    """Linearised-model log evidence used to tune the prior variance.

    ``-1/(2 sigma^2) |r|^2 - 1/(2 sigma0^2) |theta|^2 - 1/2 log det(H + I/sigma0^2)
    + (p+1)/2 log(1/sigma0^2) - n/2 log(2 pi sigma^2)``
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    theta_map = np.asarray(theta_map, dtype=np.float64)
    if h_ggn is None:
        h_ggn = ggn_from_jacobian(jac, sigma2)
    n = residuals.size
    p1 = theta_map.size
    chol = _posterior_precision_factor(h_ggn, sigma0_2)
    return (-0.5 * float(residuals @ residuals) / sigma2
            - 0.5 * float(theta_map @ theta_map) / sigma0_2
            - 0.5 * numkit.logdet_from_cholesky(chol)
            - 0.5 * p1 * math.log(sigma0_2)
            - 0.5 * n * math.log(2.0 * math.pi * sigma2))


def tune_hyperparameters(jac, residuals, theta_map, grid=SIGMA0_GRID, sigma2=None):
    """Noise variance from the residuals, prior variance by grid evidence.

    Returns ``(sigma2, sigma0_2, H_ggn)``. A given ``sigma2`` is held fixed
    and only the prior variance is tuned. Ties go to the smaller prior
    variance; grid points whose precision cannot be factorised are skipped.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if sigma2 is None:
        sigma2 = max(float(np.mean(residuals * residuals)), MIN_NOISE_VAR)
    elif not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    h_ggn = ggn_from_jacobian(jac, sigma2)
    best, best_val = None, -np.inf
    for s0 in sorted(grid):
        try:
            val = log_evidence(sigma2, s0, residuals, theta_map, h_ggn=h_ggn)
        except numkit.NotPositiveDefinite:
            continue
        if val > best_val:
            best, best_val = s0, val
    if best is None:
        raise numkit.NotPositiveDefinite("no prior variance on the grid gives a factorisable precision")
    return sigma2, best, h_ggn


def laplace_posterior(model: SteinModel, x, f, scores=None, sigma2=None, sigma0_2=None,
                      grid=SIGMA0_GRID) -> LaplacePosterior:
    """GGN-Laplace posterior at the fitted model.

    ``sigma2``/``sigma0_2`` left as None are tuned by :func:`tune_hyperparameters`;
    a fixed ``sigma2`` is used when tuning ``sigma0_2``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    jac = jacobian_matrix(model, x, scores)
    theta_map = model.pack()
    residuals = np.asarray(f, dtype=np.float64) - model_eval(model, x, scores)
    if sigma0_2 is None:
        sigma2, sigma0_2, _ = tune_hyperparameters(jac, residuals, theta_map, grid, sigma2)
    elif sigma2 is None:
        sigma2 = max(float(np.mean(residuals * residuals)), MIN_NOISE_VAR)
    h_ggn = ggn_from_jacobian(jac, sigma2)
    _, var = posterior_theta0(h_ggn, sigma0_2, theta_map)
    return LaplacePosterior(theta_map, h_ggn, float(sigma2), float(sigma0_2), var)
