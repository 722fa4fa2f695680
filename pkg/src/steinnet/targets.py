"""Target distributions (score, log-density, samplers) and a MALA sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special

from . import numkit
from .errors import NoSamplerAvailable, NonFiniteScore, ScoreMismatch

_LOG_2PI = math.log(2.0 * math.pi)


def _points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, dim)


def gaussian_score(mu, sigma: float, x):
    """``-(x - mu) / sigma^2`` per coordinate."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return -(np.asarray(x, dtype=np.float64) - mu) / sigma ** 2


def _mixture_log_terms(weights, means, variances, x):
    x = np.asarray(x, dtype=np.float64)[..., None]
    return (np.log(weights) - 0.5 * (_LOG_2PI + np.log(variances))
            - 0.5 * (x - means) ** 2 / variances)


def mixture_log_density(weights, means, variances, x):
    return scipy.special.logsumexp(_mixture_log_terms(weights, means, variances, x), axis=-1)


def mixture_score(weights, means, variances, x):
    """d/dx log sum_k w_k N(x | mu_k, var_k), elementwise in ``x``."""
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    terms = _mixture_log_terms(weights, means, variances, x)
    resp = np.exp(terms - scipy.special.logsumexp(terms, axis=-1, keepdims=True))
    xs = np.asarray(x, dtype=np.float64)[..., None]
    out = np.sum(resp * (means - xs) / variances, axis=-1)
    return float(out) if out.ndim == 0 else out


class TargetDistribution:
    """Base class. Subclasses provide ``score``, ``log_density_unnormalized``
    and optionally a normalised ``log_density`` and an exact ``sample``."""

    dim: int

    def score(self, x) -> np.ndarray:
        raise NotImplementedError

    def log_density_unnormalized(self, x) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x) -> np.ndarray:
        return self.log_density_unnormalized(x)

    def sample(self, n: int, rng=None) -> np.ndarray:
        raise NoSamplerAvailable(f"{type(self).__name__} has no exact sampler")

    @property
    def has_sampler(self) -> bool:
        return type(self).sample is not TargetDistribution.sample


@dataclass(frozen=True)
class IsotropicGaussian(TargetDistribution):
    dim: int = 1
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def score(self, x):
        return gaussian_score(self.mu, self.sigma, _points(x, self.dim))

    def log_density_unnormalized(self, x):
        z = (_points(x, self.dim) - self.mu) / self.sigma
        return -0.5 * np.sum(z * z, axis=1)

    def log_density(self, x):
        return self.log_density_unnormalized(x) - self.dim * (0.5 * _LOG_2PI + math.log(self.sigma))

    def sample(self, n, rng=None):
        rng = np.random.default_rng(rng)
        return self.mu + self.sigma * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class GaussianMixture(TargetDistribution):
    """Product over coordinates of the same one-dimensional Gaussian mixture."""

    weights: tuple = (0.5, 0.5)
    means: tuple = (-1.0, 1.0)
    variances: tuple = (1.0, 1.0)
    dim: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        if np.any(np.asarray(self.variances) <= 0):
            raise ValueError("variances must be positive")
        if not len(self.weights) == len(self.means) == len(self.variances):
            raise ValueError("weights, means and variances must have equal length")

    def _arrays(self):
        return (np.asarray(self.weights, dtype=np.float64), np.asarray(self.means, dtype=np.float64),
                np.asarray(self.variances, dtype=np.float64))

    def score(self, x):
        return mixture_score(*self._arrays(), _points(x, self.dim))

    def log_density(self, x):
        return np.sum(mixture_log_density(*self._arrays(), _points(x, self.dim)), axis=1)

    log_density_unnormalized = log_density

    def mean(self):
        w, m, _ = self._arrays()
        return float(w @ m)

    def variance(self):
        w, m, v = self._arrays()
        mu = w @ m
        return float(w @ (v + m * m) - mu * mu)

    def sample(self, n, rng=None):
        rng = np.random.default_rng(rng)
        w, m, v = self._arrays()
        comp = rng.choice(len(w), size=(n, self.dim), p=w)
        return m[comp] + np.sqrt(v[comp]) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class TruncatedGaussian1D(TargetDistribution):
    mu: float = 0.0
    sigma: float = 1.0
    a: float = -1.0
    b: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def normalizer(self) -> float:
        return truncated_normalizer(self.a, self.b, self.mu, self.sigma)

    def score(self, x):
        return gaussian_score(self.mu, self.sigma, _points(x, 1))

    def log_density_unnormalized(self, x):
        x = _points(x, 1)[:, 0]
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, -0.5 * ((x - self.mu) / self.sigma) ** 2, -np.inf)

    def log_density(self, x):
        return (self.log_density_unnormalized(x) - 0.5 * _LOG_2PI - math.log(self.sigma)
                - math.log(self.normalizer))

    def sample(self, n, rng=None):
        rng = np.random.default_rng(rng)
        lo = numkit.normal_cdf((self.a - self.mu) / self.sigma)
        hi = numkit.normal_cdf((self.b - self.mu) / self.sigma)
        u = rng.uniform(lo, hi, size=n)
        x = self.mu + self.sigma * scipy.special.ndtri(u)
        return np.clip(x, self.a, self.b)[:, None]


def truncated_normalizer(a, b, mu, sigma) -> float:
    """``Phi((b - mu)/sigma) - Phi((a - mu)/sigma)``, computed in the tail that keeps precision."""
    alpha, beta = (a - mu) / sigma, (b - mu) / sigma
    if alpha > 0:
        # both limits in the upper tail: use survival functions
        return float(numkit.normal_cdf(-alpha) - numkit.normal_cdf(-beta))
    return float(numkit.normal_cdf(beta) - numkit.normal_cdf(alpha))


class CustomTarget(TargetDistribution):
    """User-supplied score and log-density closures.

    The score is checked against central differences of the log-density at
    ten probe points on construction.
    """

    def __init__(self, dim, score, log_density_unnormalized, sampler=None, probe_seed=0,
                 rtol: float = 1e-5, atol: float = 1e-6):
        self.dim = int(dim)
        self._score = score
        self._logp = log_density_unnormalized
        self._sampler = sampler
        rng = np.random.default_rng(probe_seed)
        probes = sampler(10, rng) if sampler is not None else rng.standard_normal((10, self.dim))
        probes = _points(probes, self.dim)
        s = self.score(probes)
        step = 1e-5
        fd = np.empty_like(probes)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            fd[:, j] = (self.log_density_unnormalized(probes + e)
                        - self.log_density_unnormalized(probes - e)) / (2 * step)
        if not np.allclose(s, fd, rtol=rtol, atol=atol):
            worst = float(np.max(np.abs(s - fd)))
            raise ScoreMismatch(f"score disagrees with the log-density gradient (max abs diff {worst:.3g})")

    def score(self, x):
        return np.asarray(self._score(_points(x, self.dim)), dtype=np.float64).reshape(-1, self.dim)

    def log_density_unnormalized(self, x):
        return np.asarray(self._logp(_points(x, self.dim)), dtype=np.float64).reshape(-1)

    def sample(self, n, rng=None):
        if self._sampler is None:
            raise NoSamplerAvailable("custom target was built without a sampler")
        return _points(self._sampler(n, np.random.default_rng(rng)), self.dim)

    @property
    def has_sampler(self):
        return self._sampler is not None


def sample_iid(target: TargetDistribution, n: int, seed=None) -> np.ndarray:
    if not target.has_sampler:
        raise NoSamplerAvailable(f"{type(target).__name__} has no exact sampler")
    return target.sample(n, np.random.default_rng(seed))


def sample_grid_1d(sigma: float, n: int) -> np.ndarray:
    """``n`` equally spaced points on ``[-5 sigma, 5 sigma]``, shape ``(n, 1)``."""
    if n < 2:
        raise ValueError("grid needs at least two points")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.linspace(-5.0 * sigma, 5.0 * sigma, n)[:, None]


@dataclass(frozen=True)
class MalaConfig:
    step_size: float = 1.0
    burn_in: int = 1000
    thinning: int = 1
    seed: int | None = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("MALA step size must be positive")
        if self.burn_in < 0 or self.thinning < 1:
            raise ValueError("burn_in must be >= 0 and thinning >= 1")


def mala_sample(target: TargetDistribution, cfg: MalaConfig, n: int, x0=None, rng=None):
    """Metropolis-adjusted Langevin chain.

    Proposal ``x' = x + (h^2/2) s(x) + h xi``; accepted with the usual
    Metropolis-Hastings ratio using the Gaussian proposal density. Only the
    unnormalised log-density is used.

    Returns
    -------
    points : (n, d) array
        Post burn-in, thinned chain.
    acceptance_rate : float
        Over all proposals including burn-in.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    d = target.dim
    h = cfg.step_size
    half_h2 = 0.5 * h * h
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(d).copy()
    total = cfg.burn_in + n * cfg.thinning
    noise = rng.standard_normal((total, d))
    log_u = np.log(rng.uniform(size=total))

    def evaluate(pt):
        s = target.score(pt[None, :])[0]
        lp = float(target.log_density_unnormalized(pt[None, :])[0])
        return s, lp

    s_x, lp_x = evaluate(x)
    if not np.all(np.isfinite(s_x)):
        raise NonFiniteScore("non-finite score at the initial state", state=x.copy())
    out = np.empty((n, d))
    accepted = 0
    k = 0
    for t in range(total):
        mean_fwd = x + half_h2 * s_x
        prop = mean_fwd + h * noise[t]
        s_p, lp_p = evaluate(prop)
        if not np.all(np.isfinite(s_p)):
            if np.isfinite(lp_p):
                raise NonFiniteScore(f"non-finite score at step {t}", state=prop.copy())
            log_alpha = -np.inf  # proposal outside the support
        else:
            mean_bwd = prop + half_h2 * s_p
            log_q_fwd = -np.sum((prop - mean_fwd) ** 2) / (2 * h * h)
            log_q_bwd = -np.sum((x - mean_bwd) ** 2) / (2 * h * h)
            log_alpha = lp_p - lp_x + log_q_bwd - log_q_fwd
        if log_u[t] < log_alpha:
            x, s_x, lp_x = prop, s_p, lp_p
            accepted += 1
        if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thinning == cfg.thinning - 1:
            out[k] = x
            k += 1
    return out, accepted / total
