"""Genz test integrands on the unit cube, composed with the standard normal CDF.

``F(x) = f(Phi(x))`` integrates under ``N(0, I)`` to the unit-cube integral
of ``f``; the cube integrals are available in closed form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import numkit
from .errors import OutOfDomain


class GenzFamily(str, enum.Enum):
    CONTINUOUS = "continuous"
    CORNER_PEAK = "corner_peak"
    DISCONTINUOUS = "discontinuous"
    GAUSSIAN_PEAK = "gaussian_peak"
    PRODUCT_PEAK = "product_peak"
    OSCILLATORY = "oscillatory"


_ALIASES = {
    "continuous": GenzFamily.CONTINUOUS,
    "cornerpeak": GenzFamily.CORNER_PEAK,
    "discontinuous": GenzFamily.DISCONTINUOUS,
    "gaussianpeak": GenzFamily.GAUSSIAN_PEAK,
    "gaussian": GenzFamily.GAUSSIAN_PEAK,
    "productpeak": GenzFamily.PRODUCT_PEAK,
    "oscillatory": GenzFamily.OSCILLATORY,
}


def parse_family(name) -> GenzFamily:
    """Accepts ``"corner_peak"``, ``"CornerPeak"``, ``"genz-corner-peak"`` and similar."""
    if isinstance(name, GenzFamily):
        return name
    key = str(name).lower()
    if key.startswith("genz"):
        key = key[4:]
    key = key.replace("-", "").replace("_", "").replace(" ", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown Genz family {name!r}") from None


@dataclass(frozen=True)
class GenzSpec:
    """Family, dimension and per-coordinate parameters ``a`` and ``u``.

    Defaults: ``a = 1.3, u = 0.55`` for Continuous, ``a = 5, u = 0.5`` for
    the others. Oscillatory uses only ``u[0]``.
    """

    family: GenzFamily
    dim: int
    a: tuple = None
    u: tuple = None

    def __post_init__(self):
        fam = parse_family(self.family)
        object.__setattr__(self, "family", fam)
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        a_def, u_def = (1.3, 0.55) if fam is GenzFamily.CONTINUOUS else (5.0, 0.5)
        a = np.broadcast_to(np.asarray(a_def if self.a is None else self.a, dtype=np.float64), (self.dim,))
        u = np.broadcast_to(np.asarray(u_def if self.u is None else self.u, dtype=np.float64), (self.dim,))
        if fam is GenzFamily.CORNER_PEAK and np.any(a <= 0):
            raise ValueError("CornerPeak needs positive a")
        object.__setattr__(self, "a", tuple(float(v) for v in a))
        object.__setattr__(self, "u", tuple(float(v) for v in u))

    @property
    def name(self) -> str:
        return f"genz-{self.family.value.replace('_', '-')}"


def _unit_points(spec: GenzSpec, t):
    t = np.asarray(t, dtype=np.float64)
    single = t.ndim <= 1
    t2 = t.reshape(1, -1) if single else t
    if t2.shape[1] != spec.dim:
        raise ValueError(f"points have dimension {t2.shape[1]}, spec has {spec.dim}")
    return t2, single


def _family_values(spec: GenzSpec, t):
    a = np.asarray(spec.a)
    u = np.asarray(spec.u)
    fam = spec.family
    if fam is GenzFamily.CONTINUOUS:
        return np.exp(-np.abs(t - u) @ a)
    if fam is GenzFamily.CORNER_PEAK:
        return (1.0 + t @ a) ** (-(spec.dim + 1))
    if fam is GenzFamily.DISCONTINUOUS:
        return np.where(np.any(t > u, axis=1), 0.0, np.exp(t @ a))
    if fam is GenzFamily.GAUSSIAN_PEAK:
        return np.exp(-((t - u) ** 2) @ (a * a))
    if fam is GenzFamily.PRODUCT_PEAK:
        return np.prod(1.0 / (a ** -2.0 + (t - u) ** 2), axis=1)
    if fam is GenzFamily.OSCILLATORY:
        return np.cos(2.0 * math.pi * u[0] + t @ a)
    raise ValueError(fam)


def genz_eval(spec: GenzSpec, t):
    """Integrand value at ``t`` in ``[0, 1]^d`` (float for one point, ``(n,)`` for a batch)."""
    t2, single = _unit_points(spec, t)
    if np.any(~np.isfinite(t2)) or np.any(t2 < 0.0) or np.any(t2 > 1.0):
        raise OutOfDomain("Genz integrands are defined on [0, 1]^d")
    out = _family_values(spec, t2)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class TransformedIntegrand:
    """``x -> f(Phi(x))`` with ``Phi`` the standard normal CDF per coordinate."""

    genz: GenzSpec

    @property
    def dim(self):
        return self.genz.dim

    def __call__(self, x):
        return transformed_eval(self, x)


def transformed_eval(ti: TransformedIntegrand, x):
    x = np.asarray(x, dtype=np.float64)
    return genz_eval(ti.genz, numkit.normal_cdf(x) if x.ndim else numkit.normal_cdf(float(x)))


# closed-form cube integrals


def _continuous_1d(a, u):
    if a == 0:
        return 1.0
    return (2.0 - math.exp(-a * u) - math.exp(-a * (1.0 - u))) / a


def _gaussian_peak_1d(a, u):
    if a == 0:
        return 1.0
    return math.sqrt(math.pi) / (2.0 * a) * (math.erf(a * (1.0 - u)) + math.erf(a * u))


def _product_peak_1d(a, u):
    return a * (math.atan(a * (1.0 - u)) + math.atan(a * u))


def _discontinuous_1d(a, u):
    u = min(max(u, 0.0), 1.0)
    if a == 0:
        return u
    return math.expm1(a * u) / a


def _oscillatory(a, u0):
    # Re[exp(i 2 pi u) prod_k (exp(i a_k) - 1) / (i a_k)]
    z = complex(math.cos(2 * math.pi * u0), math.sin(2 * math.pi * u0))
    for ak in a:
        z *= 1.0 if ak == 0 else (complex(math.cos(ak), math.sin(ak)) - 1.0) / complex(0.0, ak)
    return z.real


def _corner_peak(a):
    """Inclusion-exclusion over the cube vertices, in exact rational arithmetic.

    ``int (1 + a.t)^-(d+1) dt = (1 / (d! prod a)) sum_S (-1)^|S| / (1 + sum_S a)``.
    Terms are grouped by subset sum (a dynamic programme over coordinates),
    so equal parameters cost ``O(d^2)`` rather than ``2^d``; the alternating
    sum is exact because every term is a Fraction.
    """
    d = len(a)
    fa = [Fraction(v) for v in a]
    # signed multiplicity of each subset sum
    weights = {Fraction(0): 1}
    for ak in fa:
        nxt = dict(weights)
        for s, w in weights.items():
            key = s + ak
            nxt[key] = nxt.get(key, 0) - w
        weights = {s: w for s, w in nxt.items() if w != 0}
    total = sum(Fraction(w) / (1 + s) for s, w in weights.items())
    prod = Fraction(1)
    for ak in fa:
        prod *= ak
    return float(total / (math.factorial(d) * prod))


def ground_truth(spec: GenzSpec) -> float:
    """``int_{[0,1]^d} f``; equals ``E f(Phi(X))`` for ``X ~ N(0, I)``."""
    a, u = spec.a, spec.u
    fam = spec.family
    if fam is GenzFamily.CONTINUOUS:
        return math.prod(_continuous_1d(ak, uk) for ak, uk in zip(a, u))
    if fam is GenzFamily.GAUSSIAN_PEAK:
        return math.prod(_gaussian_peak_1d(ak, uk) for ak, uk in zip(a, u))
    if fam is GenzFamily.PRODUCT_PEAK:
        return math.prod(_product_peak_1d(ak, uk) for ak, uk in zip(a, u))
    if fam is GenzFamily.DISCONTINUOUS:
        return math.prod(_discontinuous_1d(ak, uk) for ak, uk in zip(a, u))
    if fam is GenzFamily.OSCILLATORY:
        return _oscillatory(a, u[0])
    if fam is GenzFamily.CORNER_PEAK:
        return _corner_peak(a)
    raise ValueError(fam)


def transformed_integrand(family, dim, a=None, u=None) -> TransformedIntegrand:
    return TransformedIntegrand(GenzSpec(family, dim, a, u))

