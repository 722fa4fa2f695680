"""Weight-decayed MSE training of Stein networks: L-BFGS (default) and Adam."""

from __future__ import annotations

import enum
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import net as netmod
from .errors import DimensionMismatch, NonFiniteLoss
from .net import MlpNetwork
from .stein import SteinModel, stein_coefficients

log = logging.getLogger(__name__)

DEFAULT_WEIGHT_DECAY = 1e-6


@dataclass(frozen=True)
class TrainingSet:
    x: np.ndarray
    f: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        f = np.asarray(self.f, dtype=np.float64).reshape(-1)
        s = np.asarray(self.scores, dtype=np.float64).reshape(x.shape)
        if f.shape[0] != x.shape[0]:
            raise DimensionMismatch(f"{x.shape[0]} points but {f.shape[0]} integrand values")
        for name, arr in (("points", x), ("values", f), ("scores", s)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"training {name} contain non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "scores", s)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def canonical(self) -> "TrainingSet":
        """Rows sorted lexicographically by point, so fits ignore input order."""
        order = np.lexsort(self.x.T[::-1])
        return TrainingSet(self.x[order], self.f[order], self.scores[order])

    def subset(self, n: int) -> "TrainingSet":
        return TrainingSet(self.x[:n], self.f[:n], self.scores[:n])


class BsnObjective:
    """``(1/n) sum (f_i - g(x_i))^2 + lam |theta|^2`` and its exact gradient.

    ``theta`` is the flat vector ``[theta0, network params]``. With
    ``decay_readout=False`` the penalty skips ``theta0``.
    """

    def __init__(self, data: TrainingSet, template: SteinModel, lam: float = DEFAULT_WEIGHT_DECAY,
                 decay_readout: bool = True):
        if lam < 0:
            raise ValueError("weight decay must be non-negative")
        self.data = data
        self.lam = float(lam)
        self.decay_readout = bool(decay_readout)
        self.shapes = template.net.shapes()
        self.activation = template.net.activation
        self.coef_u, self.coef_div = stein_coefficients(
            data.x, data.scores, template.diffusion, template.target, template.bounds)
        self.n_evals = 0

    def residuals(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        g = theta[0] + netmod.stein_output_and_backward(
            theta[1:], self.shapes, self.activation, self.data.x, self.coef_u, self.coef_div)
        return self.data.f - g

    def loss(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        r = self.residuals(theta)
        val = float(np.mean(r * r) + self._penalty(theta))
        if not np.isfinite(val):
            raise NonFiniteLoss("loss is not finite")
        return val

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        self.n_evals += 1
        n = self.data.n
        weights, biases = netmod.unpack_views(theta[1:], self.shapes)
        s, tape = netmod.stein_forward(weights, biases, self.activation, self.data.x,
                                       self.coef_u, self.coef_div)
        r = self.data.f - theta[0] - s
        val = float(np.mean(r * r) + self._penalty(theta))
        if not np.isfinite(val):
            return np.inf, np.full_like(theta, np.nan)
        grad = np.empty_like(theta)
        grad[0] = -2.0 * np.sum(r) / n
        grad[1:] = netmod.stein_backward(tape, weights, self.coef_u, self.coef_div, -2.0 * r / n)
        grad += 2.0 * self.lam * theta
        if not self.decay_readout:
            grad[0] -= 2.0 * self.lam * theta[0]
        return val, grad

    def _penalty(self, theta):
        sq = float(theta @ theta)
        if not self.decay_readout:
            sq -= float(theta[0]) ** 2
        return self.lam * sq


def loss(theta, data: TrainingSet, template: SteinModel, lam: float = DEFAULT_WEIGHT_DECAY) -> float:
    return BsnObjective(data, template, lam).loss(theta)


def loss_gradient(theta, data: TrainingSet, template: SteinModel, lam: float = DEFAULT_WEIGHT_DECAY):
    return BsnObjective(data, template, lam)(theta)[1]


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 2000
    g_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iterations < 0 or self.max_line_search < 1:
            raise ValueError("invalid L-BFGS configuration")


@dataclass
class FitResult:
    map_params: np.ndarray
    final_loss: float
    initial_loss: float
    iterations: int
    reason: Termination
    n_evals: int = 0
    runtime_s: float = 0.0
    loss_history: list = field(default_factory=list)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimiser of the cubic interpolating value and slope at ``a`` and ``b``."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if np.isfinite(t) else None


def strong_wolfe(fun, x, f0, g0, direction, step, c1=1e-4, c2=0.9, max_evals=25):
    """Bracketing + zoom line search with cubic interpolation.

    Returns ``(step, f, g, ok)``. When the strong Wolfe conditions are not
    met within ``max_evals`` evaluations, ``ok`` is False and the best point
    satisfying sufficient decrease (if any) is returned; otherwise step is None.
    """
    dphi0 = float(g0 @ direction)
    if not dphi0 < 0:
        return None, f0, g0, False
    best = (None, f0, g0)
    evals = 0

    def probe(alpha):
        nonlocal best, evals
        evals += 1
        f, g = fun(x + alpha * direction)
        if np.isfinite(f) and f <= f0 + c1 * alpha * dphi0 and f < best[1]:
            best = (alpha, f, g)
        return f, g, (float(g @ direction) if np.isfinite(f) else np.nan)

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = step
    lo = hi = None
    while evals < max_evals:
        f, g, dphi = probe(alpha)
        if not np.isfinite(f):
            # overshoot into an invalid region: shrink towards the last good step
            alpha = a_prev + 0.25 * (alpha - a_prev)
            continue
        if f > f0 + c1 * alpha * dphi0 or (a_prev > 0 and f >= f_prev):
            lo, hi = (a_prev, f_prev, d_prev), (alpha, f, dphi)
            break
        if abs(dphi) <= -c2 * dphi0:
            return alpha, f, g, True
        if dphi >= 0:
            lo, hi = (alpha, f, dphi), (a_prev, f_prev, d_prev)
            break
        a_next = _cubic_min(a_prev, f_prev, d_prev, alpha, f, dphi)
        if a_next is None or a_next <= alpha * 1.01 or a_next > alpha * 10:
            a_next = 2.0 * alpha
        a_prev, f_prev, d_prev = alpha, f, dphi
        alpha = a_next
    else:
        return (*best, False)

    while evals < max_evals:
        (a_lo, f_lo, d_lo), (a_hi, f_hi, d_hi) = lo, hi
        width = abs(a_hi - a_lo)
        if width < 1e-16 * max(1.0, abs(a_lo)):
            break
        a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
            a = 0.5 * (a_lo + a_hi)
        f, g, dphi = probe(a)
        if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
            hi = (a, f if np.isfinite(f) else np.inf, dphi if np.isfinite(f) else 0.0)
        else:
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g, True
            if dphi * (a_hi - a_lo) >= 0:
                hi = lo
            lo = (a, f, dphi)
    return (*best, False)


def lbfgs_minimize(fun, x0, cfg: LbfgsConfig = LbfgsConfig(), callback=None) -> FitResult:
    """Minimise ``fun(x) -> (value, gradient)`` with L-BFGS and strong Wolfe steps.

    After a failed line search that still found a decreasing point, the step
    is taken and the curvature memory cleared; a second consecutive failure
    (or a failure with no decrease) terminates with ``LineSearchFailure``.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    if not np.isfinite(f):
        raise NonFiniteLoss("objective is not finite at the starting point")
    f_init = f
    history = [f]
    mem = deque(maxlen=cfg.memory)
    reason = Termination.MAX_ITER
    failures = 0
    n_evals = 1
    it = 0
    while True:
        if np.max(np.abs(g)) <= cfg.g_tol:
            reason = Termination.CONVERGED
            break
        if it >= cfg.max_iterations:
            reason = Termination.MAX_ITER
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(mem):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if mem:
            s, y, _ = mem[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(mem, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        direction = -q
        if not g @ direction < 0:
            mem.clear()
            direction = -g
        step = 1.0 if mem else min(1.0, 1.0 / np.sum(np.abs(g)))

        counter = [0]

        def counted(z):
            counter[0] += 1
            return fun(z)

        alpha, f_new, g_new, ok = strong_wolfe(counted, x, f, g, direction, step,
                                               cfg.c1, cfg.c2, cfg.max_line_search)
        n_evals += counter[0]
        if alpha is None:
            reason = Termination.LINE_SEARCH_FAILURE
            break
        s = alpha * direction
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        it += 1
        history.append(f)
        if callback is not None:
            callback(it, x, f)
        if ok:
            failures = 0
            sy = s @ y
            if sy > 1e-10 * (y @ y):
                mem.append((s, y, 1.0 / sy))
        else:
            failures += 1
            mem.clear()
            if failures >= 2:
                reason = Termination.LINE_SEARCH_FAILURE
                break
    return FitResult(map_params=x, final_loss=float(f), initial_loss=float(f_init), iterations=it,
                     reason=reason, n_evals=n_evals, runtime_s=time.perf_counter() - start,
                     loss_history=history)


def adam_minimize(fun, x0, lr: float = 1e-3, iterations: int = 10_000,
                  betas=(0.9, 0.999), eps: float = 1e-8) -> FitResult:
    """Plain full-batch Adam on ``fun(x) -> (value, gradient)``."""
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = betas
    f, g = fun(x)
    f_init = f
    history = [f]
    for t in range(1, iterations + 1):
        if not np.isfinite(f):
            raise NonFiniteLoss(f"Adam diverged at iteration {t}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        f, g = fun(x)
        history.append(f)
    return FitResult(map_params=x, final_loss=float(f), initial_loss=float(f_init),
                     iterations=iterations, reason=Termination.MAX_ITER, n_evals=iterations + 1,
                     runtime_s=time.perf_counter() - start, loss_history=history)


def initial_params(data: TrainingSet, template: SteinModel, seed=None) -> np.ndarray:
    """Fresh network weights from ``seed`` and theta0 at the mean of the data.

    With ``seed=None`` the template's own parameters are used.
    """
    if seed is None:
        return template.pack()
    net = template.net
    fresh = MlpNetwork.init(net.input_dim, net.hidden_width, net.hidden_layers, net.activation,
                            rng=np.random.default_rng(seed))
    return np.concatenate([[float(np.mean(data.f))], fresh.pack()])


def lbfgs_fit(data: TrainingSet, template: SteinModel, lam: float = DEFAULT_WEIGHT_DECAY,
              cfg: LbfgsConfig = LbfgsConfig(), seed=None, decay_readout: bool = True):
    """Fit a Stein network by full-batch L-BFGS.

    Returns ``(model, FitResult)``; the model carries the MAP parameters.
    """
    data = data.canonical()
    objective = BsnObjective(data, template, lam, decay_readout)
    result = lbfgs_minimize(objective, initial_params(data, template, seed), cfg)
    log.debug("L-BFGS: %d iterations, loss %.3e, %s", result.iterations, result.final_loss,
              result.reason.value)
    return template.with_params(result.map_params), result


def adam_fit(data: TrainingSet, template: SteinModel, lam: float = DEFAULT_WEIGHT_DECAY,
             lr: float = 1e-3, iterations: int = 10_000, seed=None, decay_readout: bool = True):
    data = data.canonical()
    objective = BsnObjective(data, template, lam, decay_readout)
    result = adam_minimize(objective, initial_params(data, template, seed), lr, iterations)
    return template.with_params(result.map_params), result
