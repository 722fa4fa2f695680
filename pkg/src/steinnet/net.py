"""The inner vector field u: R^d -> R^d and its derivative machinery.

The Stein layer needs the diagonal of the input Jacobian of ``u``, and
training needs gradients of that quantity with respect to the weights.
Both are computed by hand: a forward pass carrying one tangent per input
direction, followed by a reverse sweep through primal and tangent
recursions together. Everything is batched over points.

Array layout: primal activations are ``(n, width)``; tangents are
``(n, d, width)`` with axis 1 indexing the input direction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient


class Activation(str, enum.Enum):
    CELU = "celu"
    TANH = "tanh"
    GAUSSIAN = "gaussian"
    SIGMOID = "sigmoid"
    TANHSHRINK = "tanhshrink"


def activation_derivs(kind: Activation | str, x):
    """Return ``(value, first derivative, second derivative)`` elementwise.

    CELU (alpha = 1) is only C^1; its second derivative jumps at 0 and the
    right-hand value 0 is used there.
    """
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.CELU:
        e = np.exp(np.minimum(x, 0.0))  # equals 1 on x >= 0
        val = np.maximum(x, 0.0) + (e - 1.0)
        d1 = e
        d2 = e * (x < 0)
    elif kind is Activation.TANH:
        val = np.tanh(x)
        d1 = 1.0 - val * val
        d2 = -2.0 * val * d1
    elif kind is Activation.GAUSSIAN:
        val = np.exp(-x * x)
        d1 = -2.0 * x * val
        d2 = (4.0 * x * x - 2.0) * val
    elif kind is Activation.SIGMOID:
        val = 0.5 * (1.0 + np.tanh(0.5 * x))
        d1 = val * (1.0 - val)
        d2 = d1 * (1.0 - 2.0 * val)
    else:
        t = np.tanh(x)
        val = x - t
        d1 = t * t
        d2 = 2.0 * t * (1.0 - t * t)
    return val, d1, d2


def activation_eval(kind: Activation | str, x: float) -> tuple[float, float]:
    """Scalar activation value and exact first derivative."""
    val, d1, _ = activation_derivs(kind, x)
    return float(val), float(d1)


@dataclass(frozen=True)
class MlpNetwork:
    """``Linear(d,h) -> act -> (Linear(h,h) -> act)^(l-1) -> Linear(h,d)``.

    ``weights[k]`` has shape ``(fan_out, fan_in)``. With ``hidden_layers=0``
    the network is a single ``Linear(d, d)``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: Activation = Activation.CELU

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        d = self.weights[0].shape[1]
        if self.weights[-1].shape[0] != d:
            raise DimensionMismatch("output dimension must equal input dimension")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise DimensionMismatch(f"bias shape {b.shape} does not fit weight {w.shape}")
        for w_prev, w in zip(self.weights[:-1], self.weights[1:]):
            if w.shape[1] != w_prev.shape[0]:
                raise DimensionMismatch("consecutive layer shapes do not chain")
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def hidden_width(self) -> int:
        return self.weights[0].shape[0] if self.hidden_layers else 0

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def init(cls, input_dim: int, hidden_width: int = 32, hidden_layers: int = 2,
             activation: Activation | str = Activation.CELU, rng=None) -> "MlpNetwork":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of weights and biases."""
        rng = np.random.default_rng(rng)
        sizes = layer_sizes(input_dim, hidden_width, hidden_layers)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(tuple(weights), tuple(biases), Activation(activation))

    def pack(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def unpack(self, flat) -> "MlpNetwork":
        """New network of the same shape with parameters taken from ``flat``."""
        weights, biases = unpack_views(np.asarray(flat, dtype=np.float64), self.shapes())
        return MlpNetwork(tuple(w.copy() for w in weights), tuple(b.copy() for b in biases), self.activation)

    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]


def layer_sizes(input_dim: int, hidden_width: int, hidden_layers: int) -> list[int]:
    if hidden_layers == 0:
        return [input_dim, input_dim]
    return [input_dim] + [hidden_width] * hidden_layers + [input_dim]


def n_params(input_dim: int, hidden_width: int, hidden_layers: int) -> int:
    sizes = layer_sizes(input_dim, hidden_width, hidden_layers)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def unpack_views(flat: np.ndarray, shapes):
    """Split a flat vector into weight/bias views (no copies)."""
    weights, biases = [], []
    pos = 0
    for fan_out, fan_in in shapes:
        size = fan_out * fan_in
        weights.append(flat[pos:pos + size].reshape(fan_out, fan_in))
        pos += size
        biases.append(flat[pos:pos + fan_out])
        pos += fan_out
    if pos != flat.size:
        raise DimensionMismatch(f"flat vector has length {flat.size}, expected {pos}")
    return weights, biases


def _check_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise DimensionMismatch(f"points have dimension {x.shape[1]}, network expects {d}")
    return x, single


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Evaluate u(x) for one point ``(d,)`` or a batch ``(n, d)``."""
    x, single = _check_points(x, net.input_dim)
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if k == last else activation_derivs(net.activation, z)[0]
    return a[0] if single else a


def forward_with_input_jacobian(net: MlpNetwork, x):
    """Return ``u(x)`` and ``du_i/dx_j`` via one tangent pass per input direction.

    Shapes are ``(d,)``/``(d, d)`` for a single point and ``(n, d)``/``(n, d, d)``
    for a batch.
    """
    x, single = _check_points(x, net.input_dim)
    n, d = x.shape
    a = x
    tan = np.broadcast_to(np.eye(d), (n, d, d))
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        dz = tan @ w.T
        if k == last:
            a, tan = z, dz
        else:
            val, d1, _ = activation_derivs(net.activation, z)
            a, tan = val, dz * d1[:, None, :]
    jac = np.swapaxes(tan, 1, 2)  # jac[n, i, j] = du_i/dx_j
    return (a[0], jac[0]) if single else (a, jac)


def _dirsum(t):
    out = t[:, 0, :].copy()
    for j in range(1, t.shape[1]):
        out += t[:, j, :]
    return out


def _bmm(t, m):
    """``t @ m`` for ``t`` of shape (n, d, k) as one 2-D product."""
    n, d, k = t.shape
    return (t.reshape(n * d, k) @ m).reshape(n, d, m.shape[1])


class _Tape:
    """Primal and tangent intermediates kept for the reverse sweep."""

    __slots__ = ("inputs", "acts", "tans", "zs", "dzs", "d1s", "d2s", "u", "jac_diag")


def _forward_tape(weights, biases, activation, x) -> _Tape:
    n, d = x.shape
    tape = _Tape()
    tape.inputs, tape.acts, tape.tans = [], [], []
    tape.zs, tape.dzs, tape.d1s, tape.d2s = [], [], [], []
    a = x
    tan = None  # tangent of the network input is the identity; handled implicitly
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        tape.acts.append(a)
        tape.tans.append(tan)
        z = a @ w.T + b
        dz = np.broadcast_to(w.T, (n, d, w.shape[0])) if tan is None else _bmm(tan, w.T)
        if k == last:
            tape.u = z
            # diagonal of the Jacobian: du_i/dx_i
            tape.jac_diag = np.einsum("nii->ni", dz)
            break
        val, d1, d2 = activation_derivs(activation, z)
        tape.zs.append(z)
        tape.dzs.append(dz)
        tape.d1s.append(d1)
        tape.d2s.append(d2)
        a = val
        tan = dz * d1[:, None, :]
    return tape


def field_and_divergence_terms(net_or_params, x, shapes=None, activation=None):
    """``u(x)`` and the Jacobian diagonal ``du_i/dx_i`` for a batch of points."""
    weights, biases, activation = _resolve(net_or_params, shapes, activation)
    tape = _forward_tape(weights, biases, activation, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return tape.u, tape.jac_diag


def _resolve(net_or_params, shapes, activation):
    if isinstance(net_or_params, MlpNetwork):
        return list(net_or_params.weights), list(net_or_params.biases), net_or_params.activation
    weights, biases = unpack_views(np.asarray(net_or_params, dtype=np.float64), shapes)
    return weights, biases, Activation(activation)


def stein_output_and_backward(flat_params, shapes, activation, x, coef_u, coef_div,
                              out_adjoint=None, per_sample=False):
    """Evaluate ``s(x) = sum_i coef_u[:, i] u_i(x) + coef_div[:, i] du_i/dx_i``.

    Parameters
    ----------
    flat_params : (p,) array
        Network parameters in :meth:`MlpNetwork.pack` order.
    coef_u, coef_div : (n, d) arrays
        Per-point coefficients (independent of the parameters).
    out_adjoint : (n,) array, optional
        Weights ``w_n`` for the gradient ``sum_n w_n d s(x_n)/d theta``.
        If None only the forward value is returned.
    per_sample : bool
        Return the rows ``w_n d s(x_n)/d theta`` as an ``(n, p)`` matrix
        instead of their sum.

    Returns
    -------
    values : (n,) array
    grad : (p,) or (n, p) array, only when ``out_adjoint`` is given
    """
    weights, biases = unpack_views(np.asarray(flat_params, dtype=np.float64), shapes)
    values, tape = stein_forward(weights, biases, activation, x, coef_u, coef_div)
    if out_adjoint is None:
        return values
    return values, stein_backward(tape, weights, coef_u, coef_div, out_adjoint, per_sample)


def stein_forward(weights, biases, activation, x, coef_u, coef_div):
    """Forward pass of the Stein output; returns ``(values, tape)``."""
    tape = _forward_tape(weights, biases, activation, np.asarray(x, dtype=np.float64))
    values = np.einsum("ni,ni->n", coef_u, tape.u) + np.einsum("ni,ni->n", coef_div, tape.jac_diag)
    return values, tape


def stein_backward(tape, weights, coef_u, coef_div, out_adjoint, per_sample=False):
    """Reverse sweep for :func:`stein_forward`; see :func:`stein_output_and_backward`."""
    gbar = np.asarray(out_adjoint, dtype=np.float64)
    n = gbar.shape[0]
    L = len(weights) - 1

    # adjoints of the last linear layer outputs
    zbar = gbar[:, None] * coef_u                      # (n, d)   adjoint of u
    db = gbar[:, None] * coef_div                      # (n, d)   adjoint of du_i/dx_i
    # the tangent adjoint dzbar[n, j, i] is nonzero only for i == j, where it equals db[n, i]
    grads_w = [None] * (L + 1)
    grads_b = [None] * (L + 1)

    for k in range(L, -1, -1):
        w = weights[k]
        a_prev = tape.acts[k]
        tan_prev = tape.tans[k]
        if k == L:
            # dz[n, j, :] = tan_prev[n, j, :] @ w.T; only diagonal entries carry adjoint
            if tan_prev is None:
                # single linear layer: du_i/dx_i = w[i, i]
                if per_sample:
                    gw = zbar[:, :, None] * a_prev[:, None, :]
                    idx = np.arange(w.shape[0])
                    gw[:, idx, idx] += db
                else:
                    gw = zbar.T @ a_prev
                    gw[np.diag_indices(w.shape[0])] += db.sum(0)
                grads_w[k] = gw
                grads_b[k] = zbar if per_sample else zbar.sum(0)
                break
            # gw[i, m] = zbar[n,i] a_prev[n,m] + db[n,i] tan_prev[n,i,m]
            if per_sample:
                gw = zbar[:, :, None] * a_prev[:, None, :] + db[:, :, None] * tan_prev
            else:
                gw = zbar.T @ a_prev
                for i in range(gw.shape[0]):
                    gw[i] += db[:, i] @ tan_prev[:, i, :]
            grads_w[k] = gw
            grads_b[k] = zbar if per_sample else zbar.sum(0)
            abar = zbar @ w                              # (n, h)
            tbar = db[:, :, None] * w[None, :, :]        # (n, d, h) adjoint of tan_prev
        else:
            # backprop through the activation of layer k: a = act(z), tan = d1 * dz
            d1, d2 = tape.d1s[k], tape.d2s[k]
            dz = tape.dzs[k]
            zbar = d1 * abar + d2 * _dirsum(dz * tbar)
            dzbar = tbar * d1[:, None, :]
            if tan_prev is None:
                # first layer: dz[n, j, :] = w[:, j]
                if per_sample:
                    gw = zbar[:, :, None] * a_prev[:, None, :] + np.swapaxes(dzbar, 1, 2)
                else:
                    gw = zbar.T @ a_prev + dzbar.sum(0).T
                grads_w[k] = gw
                grads_b[k] = zbar if per_sample else zbar.sum(0)
                break
            if per_sample:
                gw = zbar[:, :, None] * a_prev[:, None, :] + np.swapaxes(dzbar, 1, 2) @ tan_prev
            else:
                hdim = w.shape[0]
                gw = zbar.T @ a_prev + dzbar.reshape(-1, hdim).T @ tan_prev.reshape(-1, w.shape[1])
            grads_w[k] = gw
            grads_b[k] = zbar if per_sample else zbar.sum(0)
            abar = zbar @ w
            tbar = _bmm(dzbar, w)

    if per_sample:
        grad = np.concatenate(
            [np.concatenate([gw.reshape(n, -1), gb], axis=1) for gw, gb in zip(grads_w, grads_b)], axis=1)
    else:
        grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    return grad
