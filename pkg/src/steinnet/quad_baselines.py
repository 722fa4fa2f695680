"""Comparison estimators: Monte Carlo, Bayesian quadrature and Stein control functionals.

Kernel conventions differ between estimators, so every embedding states the
one it assumes:

* :class:`RbfKernel` is ``amp * exp(-|x - y|^2 / l^2)`` (squared-exponential
  scale ``s^2 = l^2 / 2``).
* :func:`truncated_gaussian_embedding` takes ``exp(-(x - y)^2 / (2 l^2))``;
  :class:`TruncatedGaussianEmbedding` converts ``l -> l / sqrt 2`` on entry.
* :class:`MaternHalfKernel` is ``amp * exp(-|x - y| / l)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.special

from . import numkit
from .errors import DegenerateDenominator, DegenerateInterval, DimensionMismatch

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

BQ_NUGGET = 1e-8       # relative to the amplitude
CF_REGULARIZER = 1e-6  # lambda in K0 + n * lambda * I
BQ_LENGTHSCALES = np.logspace(-1.5, 1.5, 25)
BQ_AMPLITUDES = np.logspace(-3, 3, 10)
CF_LENGTHSCALES = np.logspace(-1, 1, 15)


def mc_estimate(values):
    """Sample mean and standard error ``sqrt(sample variance / n)``."""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n < 2:
        raise ValueError("Monte Carlo needs at least two values")
    mean = float(np.mean(values))
    return mean, float(np.sqrt(np.var(values, ddof=1) / n))


def _pairwise_sq(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = (np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :]) - 2.0 * (x @ y.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _as_points(x, dim=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if dim in (None, 1) else x[None, :]
    if dim is not None and x.shape[1] != dim:
        raise DimensionMismatch(f"points have dimension {x.shape[1]}, expected {dim}")
    return x


@dataclass(frozen=True)
class RbfKernel:
    """``amplitude * exp(-|x - y|^2 / lengthscale^2)``."""

    amplitude: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.lengthscale > 0):
            raise ValueError("kernel hyperparameters must be positive")

    def __call__(self, x, y):
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        return self.amplitude * np.exp(-_pairwise_sq(x, y) / self.lengthscale ** 2)

    def with_params(self, amplitude, lengthscale):
        return RbfKernel(float(amplitude), float(lengthscale))


@dataclass(frozen=True)
class MaternHalfKernel:
    """``amplitude * exp(-|x - y| / lengthscale)`` in one dimension."""

    amplitude: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.lengthscale > 0):
            raise ValueError("kernel hyperparameters must be positive")

    def __call__(self, x, y):
        x, y = _as_points(x, 1), _as_points(y, 1)
        return self.amplitude * np.exp(-np.abs(x - y.T) / self.lengthscale)

    def with_params(self, amplitude, lengthscale):
        return MaternHalfKernel(float(amplitude), float(lengthscale))


def rbf_embedding_gaussian(kernel: RbfKernel, sigma_pi: float, x):
    """``E k(X, x)`` for ``X ~ N(0, sigma_pi^2 I)``.

    A single point returns a float, a batch ``(n, d)`` returns ``(n,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    x2 = np.atleast_2d(x) if x.ndim == 1 else x.reshape(-1, 1) if x.ndim == 0 else x
    d = x2.shape[1]
    s2 = 0.5 * kernel.lengthscale ** 2
    tot = s2 + sigma_pi ** 2
    out = kernel.amplitude * (s2 / tot) ** (0.5 * d) * np.exp(-np.sum(x2 * x2, axis=1) / (2.0 * tot))
    return float(out[0]) if single else out


def rbf_initial_error_gaussian(kernel: RbfKernel, sigma_pi: float, d: int) -> float:
    """``E k(X, X')`` for independent ``X, X' ~ N(0, sigma_pi^2 I_d)``."""
    s2 = 0.5 * kernel.lengthscale ** 2
    return kernel.amplitude * (s2 / (s2 + 2.0 * sigma_pi ** 2)) ** (0.5 * d)


def _interval_mass(a, b, mu, sigma):
    alpha = (a - mu) / sigma
    beta = (b - mu) / sigma
    # take the difference in whichever tail keeps relative precision
    return np.where(alpha > 0,
                    numkit.normal_cdf(-alpha) - numkit.normal_cdf(-beta),
                    numkit.normal_cdf(beta) - numkit.normal_cdf(alpha))


def truncated_gaussian_embedding(lengthscale, mu, sigma, a, b, x):
    """``E exp(-(X - x)^2 / (2 l^2))`` for ``X`` a Gaussian ``N(mu, sigma^2)`` truncated to ``[a, b]``.

    Product-of-Gaussians identity:
    ``l sqrt(2 pi) * C * Z(a, b, mu_t, sigma_t) / Z(a, b, mu, sigma)`` with
    ``C = N(x | mu, sigma^2 + l^2)``, ``mu_t = (mu l^2 + x sigma^2) / (sigma^2 + l^2)``
    and ``sigma_t^2 = sigma^2 l^2 / (sigma^2 + l^2)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not (sigma > 0 and lengthscale > 0):
        raise ValueError("sigma and lengthscale must be positive")
    z = float(_interval_mass(a, b, mu, sigma))
    if z < 1e-300:
        raise DegenerateInterval(f"interval [{a}, {b}] carries no mass under N({mu}, {sigma}^2)")
    x = np.asarray(x, dtype=np.float64)
    l2, s2 = lengthscale ** 2, sigma ** 2
    tot = s2 + l2
    c = np.exp(-(mu - x) ** 2 / (2.0 * tot)) / np.sqrt(2.0 * math.pi * tot)
    mu_t = (mu * l2 + x * s2) / tot
    sigma_t = math.sqrt(s2 * l2 / tot)
    out = lengthscale * _SQRT2PI * c * _interval_mass(a, b, mu_t, sigma_t) / z
    return float(out) if out.ndim == 0 else out


def matern_half_embedding(lengthscale, x):
    """``E exp(-|X - x| / l)`` for ``X ~ N(0, 1)``.

    ``1/2 exp((2 x l + 1) / (2 l^2)) erfc((x + 1/l) / sqrt 2)
    + 1/2 exp((1 - 2 x l) / (2 l^2)) (erf((x - 1/l) / sqrt 2) + 1)``.
    The first term is evaluated through ``erfcx`` when its erfc argument is
    positive, which avoids overflow of the exponential factor.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise DimensionMismatch("the Matern-1/2 embedding is one-dimensional")
        x = x[:, 0]
    ell = float(lengthscale)
    if not ell > 0:
        raise ValueError("lengthscale must be positive")
    z1 = (x + 1.0 / ell) / _SQRT2
    with np.errstate(over="ignore", invalid="ignore"):
        direct1 = 0.5 * np.exp((2.0 * x * ell + 1.0) / (2.0 * ell * ell)) * scipy.special.erfc(z1)
    scaled1 = 0.5 * np.exp(-0.5 * x * x) * scipy.special.erfcx(np.maximum(z1, 0.0))
    t1 = np.where(z1 > 0, scaled1, direct1)
    # erf(z) + 1 = erfc(-z)
    z2 = (x - 1.0 / ell) / _SQRT2
    with np.errstate(over="ignore", invalid="ignore"):
        direct2 = 0.5 * np.exp((1.0 - 2.0 * x * ell) / (2.0 * ell * ell)) * scipy.special.erfc(-z2)
    scaled2 = 0.5 * np.exp(-0.5 * x * x) * scipy.special.erfcx(np.maximum(-z2, 0.0))
    t2 = np.where(-z2 > 0, scaled2, direct2)
    out = t1 + t2
    return float(out) if out.ndim == 0 else out


def matern_half_initial_error(lengthscale) -> float:
    """``E exp(-|X - X'| / l)`` for independent standard normals: ``exp(1/l^2) erfc(1/l)``."""
    ell = float(lengthscale)
    return float(scipy.special.erfcx(1.0 / ell))


# embeddings


def _quad_check(kernel_1d, density, lo, hi, closed, probes, tol, name):
    for p in probes:
        ref, _ = scipy.integrate.quad(lambda t: kernel_1d(t, p) * density(t), lo, hi,
                                      epsabs=1e-13, epsrel=1e-12, limit=200, points=[p] if lo < p < hi else None)
        val = closed(p)
        if not abs(val - ref) <= tol * max(1.0, abs(ref)):
            raise ArithmeticError(f"{name} embedding disagrees with quadrature at x={p}: {val} vs {ref}")


@dataclass(frozen=True)
class GaussianEmbedding:
    """``pi = N(0, sigma^2 I)`` with the :class:`RbfKernel`."""

    sigma: float = 1.0
    check: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.check:
            k = RbfKernel(1.0, 1.0)
            s = self.sigma
            _quad_check(lambda t, p: math.exp(-(t - p) ** 2),
                        lambda t: math.exp(-0.5 * (t / s) ** 2) / (s * _SQRT2PI),
                        -40 * s, 40 * s, lambda p: rbf_embedding_gaussian(k, s, np.array([p])),
                        np.linspace(-2, 2, 5) * s, 1e-8, "Gaussian")

    kernel_type = RbfKernel

    def kernel_mean(self, kernel, x):
        return rbf_embedding_gaussian(kernel, self.sigma, _as_points(x))

    def initial_error(self, kernel, d):
        return rbf_initial_error_gaussian(kernel, self.sigma, d)


@dataclass(frozen=True)
class TruncatedGaussianEmbedding:
    """One-dimensional truncated Gaussian with the :class:`RbfKernel`.

    The RBF lengthscale ``l`` corresponds to ``l / sqrt 2`` in the
    ``exp(-r^2 / (2 l^2))`` convention of :func:`truncated_gaussian_embedding`.
    No closed-form initial error exists, so BQ reports the mean only.
    """

    mu: float = 0.0
    sigma: float = 1.0
    a: float = -1.0
    b: float = 1.0
    check: bool = True

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if self.check:
            mu, sg, a, b = self.mu, self.sigma, self.a, self.b
            z = float(_interval_mass(a, b, mu, sg))
            _quad_check(lambda t, p: math.exp(-0.5 * (t - p) ** 2),
                        lambda t: math.exp(-0.5 * ((t - mu) / sg) ** 2) / (sg * _SQRT2PI * z),
                        a, b, lambda p: truncated_gaussian_embedding(1.0, mu, sg, a, b, p),
                        np.linspace(a, b, 5), 1e-8, "truncated Gaussian")

    kernel_type = RbfKernel

    def kernel_mean(self, kernel, x):
        x = _as_points(x, 1)[:, 0]
        return kernel.amplitude * truncated_gaussian_embedding(
            kernel.lengthscale / _SQRT2, self.mu, self.sigma, self.a, self.b, x)

    def initial_error(self, kernel, d):
        return None


@dataclass(frozen=True)
class MaternHalfEmbedding:
    """``pi = N(0, 1)`` in one dimension with the :class:`MaternHalfKernel`."""

    check: bool = True

    def __post_init__(self):
        if self.check:
            _quad_check(lambda t, p: math.exp(-abs(t - p)),
                        lambda t: math.exp(-0.5 * t * t) / _SQRT2PI,
                        -40.0, 40.0, lambda p: matern_half_embedding(1.0, p),
                        np.linspace(-2, 2, 5), 1e-8, "Matern-1/2")

    kernel_type = MaternHalfKernel

    def kernel_mean(self, kernel, x):
        return kernel.amplitude * matern_half_embedding(kernel.lengthscale, _as_points(x, 1))

    def initial_error(self, kernel, d):
        if d != 1:
            raise DimensionMismatch("the Matern-1/2 embedding is one-dimensional")
        return kernel.amplitude * matern_half_initial_error(kernel.lengthscale)


# Bayesian quadrature


@dataclass(frozen=True)
class BqPosterior:
    mean: float
    variance: float | None
    kernel: object
    log_marginal_likelihood: float = float("nan")
    jitter: float = 0.0
    weights: np.ndarray = field(default=None, repr=False)  # K^-1 Pi[k(., X)]

    @property
    def std(self):
        return None if self.variance is None else math.sqrt(self.variance)


def _factor_unit_gram(kernel_unit, x, nugget):
    """Cholesky of the unit-amplitude Gram plus a relative nugget (with escalation)."""
    k = kernel_unit(x, x)
    k[np.diag_indices_from(k)] += nugget
    chol, extra = numkit.robust_cholesky(k)
    return chol, nugget + extra


def _profile_amplitudes(quad, logdet, n, amplitudes):
    """GP log marginal likelihood on an amplitude grid from one factorisation.

    With ``K = amp * K_unit`` the quadratic form and log-determinant scale in
    closed form. Returns ``(best_amp, best_value)``; ties keep the smaller amplitude.
    """
    best_amp, best_val = None, -np.inf
    for amp in np.sort(amplitudes):
        val = -0.5 * quad / amp - 0.5 * (logdet + n * math.log(amp)) - 0.5 * n * math.log(2 * math.pi)
        if val > best_val:
            best_amp, best_val = float(amp), val
    return best_amp, best_val


def bq_estimate(x, y, kernel=None, embedding=None, optimize_hypers: bool = True,
                lengthscales=BQ_LENGTHSCALES, amplitudes=BQ_AMPLITUDES,
                nugget: float = BQ_NUGGET) -> BqPosterior:
    """Gaussian-process Bayesian quadrature with a zero prior mean.

    Posterior mean ``z^T K^-1 y`` and variance ``Pi Pi[k] - z^T K^-1 z``
    with ``z = Pi[k(., X)]``. The variance is ``None`` when the embedding
    has no closed-form initial error.

    With ``optimize_hypers`` the lengthscale and amplitude are chosen by
    log marginal likelihood over a log grid. The amplitude grid is scaled
    by the mean square of ``y``, and the nugget is relative to the amplitude,
    so one Cholesky per lengthscale covers all amplitudes.
    """
    embedding = GaussianEmbedding() if embedding is None else embedding
    x = _as_points(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = x.shape
    if y.size != n:
        raise DimensionMismatch(f"{n} points but {y.size} values")
    ktype = embedding.kernel_type
    kernel = ktype() if kernel is None else kernel
    if not isinstance(kernel, ktype):
        raise TypeError(f"{type(embedding).__name__} needs a {ktype.__name__}")

    if optimize_hypers:
        scale = max(float(np.mean(y * y)), 1e-300)
        best = None
        for ell in np.sort(np.asarray(lengthscales, dtype=np.float64)):
            try:
                chol, jit = _factor_unit_gram(kernel.with_params(1.0, ell), x, nugget)
            except numkit.NotPositiveDefinite:
                continue
            alpha = numkit.cho_solve(chol, y)
            amp, val = _profile_amplitudes(float(y @ alpha), numkit.logdet_from_cholesky(chol), n,
                                           scale * np.asarray(amplitudes))
            if best is None or val > best[0]:
                best = (val, ell, amp, chol, jit, alpha)
        if best is None:
            raise numkit.NotPositiveDefinite("no lengthscale on the grid gave a factorisable Gram matrix")
        lml, ell, amp, chol, jit, alpha = best
        kernel = kernel.with_params(amp, ell)
    else:
        chol, jit = _factor_unit_gram(kernel.with_params(1.0, kernel.lengthscale), x, nugget)
        alpha = numkit.cho_solve(chol, y)
        amp = kernel.amplitude
        lml = (-0.5 * float(y @ alpha) / amp - 0.5 * (numkit.logdet_from_cholesky(chol) + n * math.log(amp))
               - 0.5 * n * math.log(2 * math.pi))

    # everything below is in amplitude-free form: K = amp * K_unit, z = amp * z_unit
    z_unit = embedding.kernel_mean(kernel.with_params(1.0, kernel.lengthscale), x)
    mean = float(z_unit @ alpha)
    w = numkit.cho_solve(chol, z_unit)
    init = embedding.initial_error(kernel, d)
    var = None
    if init is not None:
        var = float(init - amp * (z_unit @ w))
        var = min(max(var, 0.0), init)
    return BqPosterior(mean, var, kernel, float(lml), float(jit * amp), w)


def gp_posterior_mean(posterior_x, y, kernel, nugget, at):
    """GP posterior mean at ``at`` given data (used to check interpolation)."""
    x = _as_points(posterior_x)
    unit = kernel.with_params(1.0, kernel.lengthscale)
    chol, _ = _factor_unit_gram(unit, x, nugget)
    return unit(_as_points(at, x.shape[1]), x) @ numkit.cho_solve(chol, np.asarray(y, dtype=np.float64))


# Stein control functionals


def stein_kernel_matrix(kernel: RbfKernel, x, sx, y=None, sy=None):
    """Langevin-Stein kernel built from an RBF base kernel.

    ``k0(x, y) = div_x div_y k + grad_x k . s(y) + grad_y k . s(x) + k s(x) . s(y)``,
    which for ``k = exp(-c r^2)`` (``c = 1 / l^2``, ``r = x - y``) is
    ``k [2 c d - 4 c^2 |r|^2 - 2 c r . s(y) + 2 c r . s(x) + s(x) . s(y)]``.
    """
    x = _as_points(x)
    sx = _as_points(sx, x.shape[1])
    if y is None:
        y, sy = x, sx
    y = _as_points(y, x.shape[1])
    sy = _as_points(sy, x.shape[1])
    d = x.shape[1]
    c = 1.0 / kernel.lengthscale ** 2
    base = kernel(x, y)
    r2 = _pairwise_sq(x, y)
    # r . s(y) = x . s(y) - y . s(y);  r . s(x) = x . s(x) - y . s(x)
    r_sy = x @ sy.T - np.sum(y * sy, axis=1)[None, :]
    r_sx = np.sum(x * sx, axis=1)[:, None] - sx @ y.T
    sxsy = sx @ sy.T
    return base * (2.0 * c * d - 4.0 * c * c * r2 - 2.0 * c * r_sy + 2.0 * c * r_sx + sxsy)


@dataclass(frozen=True)
class CfResult:
    estimate: float
    kernel: RbfKernel
    log_marginal_likelihood: float


def _cf_solve(k0, y, reg):
    n = y.size
    a = k0 + (n * reg) * np.eye(n)
    a = 0.5 * (a + a.T)
    chol, _ = numkit.robust_cholesky(a)
    ones = np.ones(n)
    ki1 = numkit.cho_solve(chol, ones)
    kiy = numkit.cho_solve(chol, y)
    denom = float(ones @ ki1)
    if abs(denom) < 1e-12:
        raise DegenerateDenominator(f"1^T K^-1 1 = {denom:.3g}")
    beta = float(ones @ kiy) / denom
    # profile likelihood: constant mean beta, amplitude at its closed-form optimum
    resid = y - beta
    quad = float(resid @ numkit.cho_solve(chol, resid))
    amp = max(quad / n, 1e-300)
    lml = -0.5 * n * math.log(amp) - 0.5 * numkit.logdet_from_cholesky(chol)
    return beta, lml


def stein_cf_estimate(x, y, scores, kernel: RbfKernel | None = None, regularizer: float = CF_REGULARIZER,
                      optimize_hypers: bool = True, lengthscales=CF_LENGTHSCALES) -> CfResult:
    """Control-functional estimate ``1^T (K0 + n lam I)^-1 y / 1^T (K0 + n lam I)^-1 1``.

    The base lengthscale is picked by profile log marginal likelihood over a
    log grid when ``optimize_hypers`` is set. The regulariser is relative to
    the mean diagonal of ``K0``.
    """
    x = _as_points(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    scores = _as_points(scores, x.shape[1])
    kernel = RbfKernel() if kernel is None else kernel
    grid = np.sort(np.asarray(lengthscales, dtype=np.float64)) if optimize_hypers else [kernel.lengthscale]
    best = None
    for ell in grid:
        k = kernel.with_params(1.0, ell)
        k0 = stein_kernel_matrix(k, x, scores)
        reg = regularizer * float(np.mean(np.diag(k0)))
        try:
            est, lml = _cf_solve(k0, y, reg)
        except numkit.NotPositiveDefinite:
            continue
        if best is None or lml > best[2]:
            best = (est, k, lml)
    if best is None:
        raise numkit.NotPositiveDefinite("no lengthscale gave a factorisable Stein Gram matrix")
    return CfResult(float(best[0]), best[1], float(best[2]))
