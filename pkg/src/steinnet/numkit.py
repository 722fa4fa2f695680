"""Dense linear algebra and special functions shared by the other modules.

Matrices and vectors are plain float64 numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.special

from .errors import NotPositiveDefinite

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4

_SQRT2 = math.sqrt(2.0)


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def cholesky(a, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of ``a + jitter * I``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot is non-positive.
    """
    a = _as_square(a)
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    if jitter:
        a = a + jitter * np.eye(a.shape[0])
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def robust_cholesky(a, jitter: float = DEFAULT_JITTER, max_jitter: float = MAX_JITTER):
    """Try an exact factorisation, then escalate jitter by x10 up to ``max_jitter``.

    Jitter is relative to the mean diagonal of ``a``. Returns ``(L, jitter_used)``
    where ``jitter_used`` is absolute.
    """
    a = _as_square(a)
    try:
        return cholesky(a, 0.0), 0.0
    except NotPositiveDefinite:
        pass
    scale = float(np.mean(np.abs(np.diag(a)))) or 1.0
    rel = jitter
    while rel <= max_jitter * (1 + 1e-12):
        try:
            return cholesky(a, rel * scale), rel * scale
        except NotPositiveDefinite:
            rel *= 10.0
    raise NotPositiveDefinite(f"not positive definite even with relative jitter {max_jitter:g}")


def cho_solve(chol: np.ndarray, b) -> np.ndarray:
    return scipy.linalg.cho_solve((chol, True), np.asarray(b, dtype=np.float64), check_finite=False)


def solve_psd(a, b, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive (semi-)definite ``a``."""
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side has non-finite entries")
    chol, _ = robust_cholesky(a, jitter)
    return cho_solve(chol, b)


def logdet_from_cholesky(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def erf(x):
    """Error function, accurate to double precision (scalar or array)."""
    if np.ndim(x) == 0:
        return math.erf(float(x))
    return scipy.special.erf(np.asarray(x, dtype=np.float64))


def erfc(x):
    if np.ndim(x) == 0:
        return math.erfc(float(x))
    return scipy.special.erfc(np.asarray(x, dtype=np.float64))


def normal_cdf(x):
    """Standard normal CDF, ``0.5 * (1 + erf(x / sqrt 2))``.

    Uses the erfc form for negative arguments so the lower tail keeps
    relative precision.
    """
    if np.ndim(x) == 0:
        x = float(x)
        return 0.5 * math.erfc(-x / _SQRT2)
    return scipy.special.ndtr(np.asarray(x, dtype=np.float64))


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
