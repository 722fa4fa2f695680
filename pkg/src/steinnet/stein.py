"""Stein layer and the assembled network ``g(x) = S_m[u](x) + theta0``.

For every supported diffusion matrix ``m`` is diagonal, so the operator
collapses to

    S_m[u](x) = sum_i (m_i s_i + d_i m_i) u_i + m_i du_i/dx_i

with ``s`` the target score. On a bounded box the field is replaced by
``u * delta`` with ``delta = prod_j (x_j - a_j)(b_j - x_j)``, which keeps
the same two-coefficient form. The coefficients depend on the points only,
so they are computed once per dataset and reused through training.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import net as netmod
from .errors import DimensionMismatch, NonFiniteScore
from .net import MlpNetwork


class DiffusionKind(str, enum.Enum):
    IDENTITY = "identity"
    SCALED = "scaled"                # I / C
    INV_QUADRATIC = "inv_quadratic"  # I / (|x|^2 + 1)
    INV_SQRT = "inv_sqrt"            # I / sqrt(|x|^2 + 1)
    DENSITY = "density"              # I * pi(x)
    DIAG_X = "diag_x"                # diag(x)


SMOOTH_SCALAR_KINDS = (DiffusionKind.INV_QUADRATIC, DiffusionKind.INV_SQRT, DiffusionKind.DENSITY)


@dataclass(frozen=True)
class DiffusionChoice:
    kind: DiffusionKind = DiffusionKind.IDENTITY
    scale: float = 1.0  # the constant C of the scaled identity

    def __post_init__(self):
        object.__setattr__(self, "kind", DiffusionKind(self.kind))
        if self.kind is DiffusionKind.SCALED and not self.scale > 0:
            raise ValueError("scaled identity needs C > 0")

    @classmethod
    def identity(cls):
        return cls(DiffusionKind.IDENTITY)

    @classmethod
    def scaled(cls, c: float):
        return cls(DiffusionKind.SCALED, float(c))

    @classmethod
    def from_scores(cls, scores, rule: str):
        """Scaled identity with C taken from the observed score norms.

        ``rule`` is ``"std"``, ``"max"`` or ``"none"`` (plain identity).
        """
        if rule == "none":
            return cls.identity()
        norms = np.linalg.norm(np.atleast_2d(scores), axis=1)
        c = float(np.std(norms)) if rule == "std" else float(np.max(norms)) if rule == "max" else None
        if c is None:
            raise ValueError(f"unknown score scaling rule {rule!r}")
        return cls.scaled(c if c > 0 else 1.0)

    def scalar_field(self, x, target=None):
        """``(phi, grad phi)`` for the isotropic variants ``m = phi(x) I``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        kind = self.kind
        if kind is DiffusionKind.IDENTITY:
            return np.ones(n), np.zeros_like(x)
        if kind is DiffusionKind.SCALED:
            return np.full(n, 1.0 / self.scale), np.zeros_like(x)
        r2 = np.sum(x * x, axis=1)
        if kind is DiffusionKind.INV_QUADRATIC:
            phi = 1.0 / (r2 + 1.0)
            return phi, -2.0 * x * (phi * phi)[:, None]
        if kind is DiffusionKind.INV_SQRT:
            phi = 1.0 / np.sqrt(r2 + 1.0)
            return phi, -x * (phi ** 3)[:, None]
        if kind is DiffusionKind.DENSITY:
            if target is None:
                raise ValueError("the density diffusion needs a target")
            phi = np.exp(target.log_density(x))
            return phi, phi[:, None] * target.score(x)
        raise ValueError(f"{kind.value} is not an isotropic diffusion")

    def diagonal_terms(self, x, target=None):
        """Diagonal ``m_i(x)`` and ``d m_i / d x_i``, both ``(n, d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind is DiffusionKind.DIAG_X:
            return x.copy(), np.ones_like(x)
        phi, grad = self.scalar_field(x, target)
        return np.repeat(phi[:, None], x.shape[1], axis=1), grad


def bounded_delta(a: float, b: float, x):
    """``(x - a)(b - x)`` and its derivative ``a + b - 2x``."""
    if not a < b:
        raise ValueError("need a < b")
    x = np.asarray(x, dtype=np.float64)
    val = (x - a) * (b - x)
    der = a + b - 2.0 * x
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def stein_coefficients(x, scores, diffusion: DiffusionChoice, target=None, bounds=None):
    """Per-point coefficients ``(coef_u, coef_div)`` of the Stein layer."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape != x.shape:
        raise DimensionMismatch(f"scores shape {scores.shape} does not match points {x.shape}")
    if not np.all(np.isfinite(scores)):
        bad = np.flatnonzero(~np.all(np.isfinite(scores), axis=1))
        raise NonFiniteScore(f"non-finite score at {len(bad)} point(s)", state=x[bad[0]])
    m, dm = diffusion.diagonal_terms(x, target)
    coef_u = m * scores + dm
    coef_div = m
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
        vals, ders = bounded_delta_box(bounds, x)
        delta = np.prod(vals, axis=1)
        # d(delta)/dx_i = der_i * prod_{j != i} val_j
        ddelta = np.empty_like(x)
        for i in range(x.shape[1]):
            others = np.prod(np.delete(vals, i, axis=1), axis=1)
            ddelta[:, i] = ders[:, i] * others
        coef_u = coef_u * delta[:, None] + m * ddelta
        coef_div = m * delta[:, None]
    return coef_u, coef_div


def bounded_delta_box(bounds, x):
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo >= hi):
        raise ValueError("need a < b in every coordinate")
    return (x - lo) * (hi - x), lo + hi - 2.0 * x


@dataclass(frozen=True)
class SteinModel:
    """``g(x) = S_m[u](x) + theta0``; the integral of ``g`` under the target is ``theta0``."""

    net: MlpNetwork
    target: object
    diffusion: DiffusionChoice = field(default_factory=DiffusionChoice.identity)
    theta0: float = 0.0
    bounds: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.net.input_dim

    @property
    def n_params(self) -> int:
        """Parameter count including ``theta0``."""
        return self.net.n_params + 1

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.theta0], self.net.pack()])

    def with_params(self, flat) -> "SteinModel":
        flat = np.asarray(flat, dtype=np.float64)
        return replace(self, theta0=float(flat[0]), net=self.net.unpack(flat[1:]))

    def coefficients(self, x, scores=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if scores is None:
            scores = self.target.score(x)
        return stein_coefficients(x, scores, self.diffusion, self.target, self.bounds)


def apply_stein_operator(coef_u, coef_div, u, jac_diag):
    """Combine precomputed coefficients with a field and its Jacobian diagonal."""
    return np.sum(coef_u * u, axis=-1) + np.sum(coef_div * jac_diag, axis=-1)


def stein_apply(model: SteinModel, x, scores=None):
    """``S_m[u](x)`` for one point (returns float) or a batch (returns ``(n,)``)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.dim:
        raise DimensionMismatch(f"points have dimension {x2.shape[1]}, model expects {model.dim}")
    coef_u, coef_div = model.coefficients(x2, scores)
    u, jdiag = netmod.field_and_divergence_terms(model.net, x2)
    out = apply_stein_operator(coef_u, coef_div, u, jdiag)
    return float(out[0]) if single else out


def model_eval(model: SteinModel, x, scores=None):
    out = stein_apply(model, x, scores)
    return out + model.theta0


def param_jacobian_row(model: SteinModel, x, scores=None) -> np.ndarray:
    """Gradient of ``g(x)`` with respect to ``[theta0, network params]``.

    A single point gives ``(p + 1,)``; a batch gives ``(n, p + 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    coef_u, coef_div = model.coefficients(x2, scores)
    _, grad = netmod.stein_output_and_backward(
        model.net.pack(), model.net.shapes(), model.net.activation, x2, coef_u, coef_div,
        out_adjoint=np.ones(x2.shape[0]), per_sample=True)
    jac = np.concatenate([np.ones((x2.shape[0], 1)), grad], axis=1)
    return jac[0] if single else jac


def stein_identity_check(model: SteinModel, n: int, seed=None, sampler=None, chunk: int = 100_000):
    """Monte Carlo mean of ``S_m[u]`` under the target and its standard error.

    ``sampler(n, rng)`` defaults to the target's exact sampler. Any smooth
    field should give ``|mean| <= 5 * std_error`` for large ``n``.
    """
    rng = np.random.default_rng(seed)
    if sampler is None:
        sampler = model.target.sample
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        vals = stein_apply(model, np.atleast_2d(sampler(m, rng)).reshape(m, model.dim))
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, float(np.sqrt(var / n))
