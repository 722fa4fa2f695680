import math

import numpy as np
import pytest

from oracles import adaptive_quad_1d, discrete_gp_integral_posterior, fd_gradient, gauss_legendre, quad_integrate


def test_x_squared_on_unit_interval():
    assert quad_integrate(lambda p: p[:, 0] ** 2) == pytest.approx(1.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("order", [2, 5, 12])
def test_rule_is_exact_to_degree_2n_minus_1(order):
    x, w = gauss_legendre(order, -0.3, 1.7)
    deg = 2 * order - 1
    exact = (1.7 ** (deg + 1) - (-0.3) ** (deg + 1)) / (deg + 1)
    np.testing.assert_allclose(w @ x ** deg, exact, rtol=1e-12)


def test_kinked_integrand_with_split():
    val = quad_integrate(lambda p: np.exp(-1.3 * np.abs(p[:, 0] - 0.55)), splits=[0.55])
    assert val == pytest.approx(0.73362, abs=1e-5)


def test_tensor_product_separable():
    f = lambda p: np.prod(np.cos(p), axis=1)
    assert quad_integrate(f, dims=3, order=20) == pytest.approx(math.sin(1.0) ** 3, rel=1e-13)


def test_gaussian_kernel_integral_truncated_domain():
    # int exp(-x^2/2) phi(x) dx = 1/sqrt(2)
    val = quad_integrate(lambda p: np.exp(-p[:, 0] ** 2) / math.sqrt(2 * math.pi), domain=(-12, 12), order=200)
    assert val == pytest.approx(1 / math.sqrt(2), abs=1e-13)


def test_adaptive_quad_agrees_with_closed_form():
    assert adaptive_quad_1d(lambda t: abs(t - 0.3), 0, 1, points=[0.3]) == pytest.approx(0.29, abs=1e-15)


def test_fd_gradient_examples():
    assert fd_gradient(lambda x: float(x[0] ** 2), np.array([3.0]))[0] == pytest.approx(6.0, abs=1e-8)
    a = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(fd_gradient(lambda x: float(a @ x), np.zeros(3)), a, rtol=1e-10)


def _rbf(a, b, ell=1.0):
    return np.exp(-np.subtract.outer(a, b) ** 2 / ell ** 2)


def test_discrete_gp_zero_data_is_prior():
    mean, var = discrete_gp_integral_posterior([], [], lambda a, b: _rbf(a, b, math.sqrt(2)))
    assert mean == 0.0
    # int int exp(-(x-y)^2 / 2) dN dN = (1/3)^(1/2)
    assert var == pytest.approx(1 / math.sqrt(3), abs=1e-6)


def test_discrete_gp_variance_nonnegative():
    x = np.linspace(-2, 2, 9)
    _, var = discrete_gp_integral_posterior(x, np.sin(x), _rbf, nugget=1e-10)
    assert var >= 0
