import math

import numpy as np
import pytest

from oracles import fd_gradient, fd_jacobian
from steinnet import net as netmod
from steinnet.errors import DimensionMismatch
from steinnet.net import Activation, MlpNetwork

ACTIVATIONS = list(Activation)


@pytest.mark.parametrize("act", ACTIVATIONS)
def test_activation_derivatives_match_fd(act):
    x = np.linspace(-2.3, 2.1, 17)
    x = x[np.abs(x) > 1e-3]  # CELU's second derivative jumps at 0
    val, d1, d2 = netmod.activation_derivs(act, x)
    h = 1e-6
    fd1 = (netmod.activation_derivs(act, x + h)[0] - netmod.activation_derivs(act, x - h)[0]) / (2 * h)
    fd2 = (netmod.activation_derivs(act, x + h)[1] - netmod.activation_derivs(act, x - h)[1]) / (2 * h)
    np.testing.assert_allclose(d1, fd1, atol=1e-8)
    np.testing.assert_allclose(d2, fd2, atol=1e-7)


def test_activation_values():
    assert netmod.activation_eval("celu", -1.0)[0] == pytest.approx(math.exp(-1) - 1)
    assert netmod.activation_eval("celu", 2.0) == (2.0, 1.0)
    assert netmod.activation_eval("gaussian", 0.0) == (1.0, 0.0)
    assert netmod.activation_eval("sigmoid", 0.0) == (0.5, 0.25)
    assert netmod.activation_eval("tanhshrink", 0.0) == (0.0, 0.0)


@pytest.mark.parametrize("d,h,l", [(1, 32, 2), (2, 32, 2), (3, 4, 1), (2, 5, 0)])
def test_parameter_count_and_round_trip(d, h, l):
    net = MlpNetwork.init(d, h, l, rng=0)
    assert net.n_params == netmod.n_params(d, h, l)
    if l == 2 and h == 32:
        assert net.n_params == d * h + h + h * h + h + h * d + d
    flat = net.pack()
    again = net.unpack(flat)
    np.testing.assert_array_equal(again.pack(), flat)
    assert again.shapes() == net.shapes()


def test_init_is_seeded_and_bounded():
    a = MlpNetwork.init(2, 8, 2, rng=3)
    b = MlpNetwork.init(2, 8, 2, rng=3)
    np.testing.assert_array_equal(a.pack(), b.pack())
    for w, bias in zip(a.weights, a.biases):
        bound = 1 / math.sqrt(w.shape[1])
        assert np.all(np.abs(w) <= bound) and np.all(np.abs(bias) <= bound)


def test_zero_hidden_layers_is_affine():
    net = MlpNetwork.init(3, 7, 0, rng=1)
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(netmod.forward(net, x), x @ net.weights[0].T + net.biases[0])
    _, jac = netmod.forward_with_input_jacobian(net, x)
    np.testing.assert_allclose(jac, np.broadcast_to(net.weights[0], (4, 3, 3)))


def test_mismatched_shapes_rejected():
    with pytest.raises(DimensionMismatch):
        MlpNetwork((np.zeros((4, 2)), np.zeros((3, 4))), (np.zeros(4), np.zeros(3)))
    net = MlpNetwork.init(2, 4, 1, rng=0)
    with pytest.raises(DimensionMismatch):
        netmod.forward(net, np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        net.unpack(np.zeros(net.n_params + 1))


@pytest.mark.parametrize("act", ACTIVATIONS)
@pytest.mark.parametrize("d,l", [(1, 2), (2, 1), (3, 2), (2, 0)])
def test_input_jacobian_matches_fd(act, d, l):
    net = MlpNetwork.init(d, 6, l, act, rng=5)
    x = np.random.default_rng(1).standard_normal(d) + 0.05
    u, jac = netmod.forward_with_input_jacobian(net, x)
    np.testing.assert_allclose(u, netmod.forward(net, x), rtol=1e-14)
    np.testing.assert_allclose(jac, fd_jacobian(lambda p: netmod.forward(net, p), x, 1e-6), atol=1e-8)


def test_divergence_terms_are_jacobian_diagonal():
    net = MlpNetwork.init(3, 5, 2, "tanh", rng=2)
    x = np.random.default_rng(2).standard_normal((6, 3))
    u, diag = netmod.field_and_divergence_terms(net, x)
    _, jac = netmod.forward_with_input_jacobian(net, x)
    np.testing.assert_allclose(u, netmod.forward(net, x), rtol=1e-14)
    np.testing.assert_allclose(diag, np.einsum("nii->ni", jac), rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("act", ACTIVATIONS)
@pytest.mark.parametrize("d,l", [(1, 2), (2, 2), (2, 1), (3, 0)])
def test_stein_output_gradient_matches_fd(act, d, l):
    net = MlpNetwork.init(d, 4, l, act, rng=7)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, d)) + 0.05
    cu, cd = rng.standard_normal((5, d)), rng.standard_normal((5, d))
    adj = rng.standard_normal(5)
    shapes = net.shapes()
    vals, grad = netmod.stein_output_and_backward(net.pack(), shapes, act, x, cu, cd, adj)

    def scalar(p):
        return float(adj @ netmod.stein_output_and_backward(p, shapes, act, x, cu, cd))

    fd = fd_gradient(scalar, net.pack(), 1e-6)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)
    _, per = netmod.stein_output_and_backward(net.pack(), shapes, act, x, cu, cd, adj, per_sample=True)
    assert per.shape == (5, net.n_params)
    # rows are the adjoint-weighted per-point gradients
    np.testing.assert_allclose(per.sum(axis=0), grad, rtol=1e-10, atol=1e-12)
