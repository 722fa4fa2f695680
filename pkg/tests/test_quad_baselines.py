import math

import numpy as np
import pytest
import scipy.integrate

from oracles import adaptive_quad_1d, discrete_gp_integral_posterior, quad_integrate
from steinnet.errors import DegenerateDenominator, DegenerateInterval, DimensionMismatch
from steinnet.genz import GenzSpec, TransformedIntegrand, ground_truth
from steinnet.quad_baselines import (
    GaussianEmbedding,
    MaternHalfEmbedding,
    MaternHalfKernel,
    RbfKernel,
    TruncatedGaussianEmbedding,
    bq_estimate,
    gp_posterior_mean,
    matern_half_embedding,
    matern_half_initial_error,
    mc_estimate,
    rbf_embedding_gaussian,
    rbf_initial_error_gaussian,
    stein_cf_estimate,
    stein_kernel_matrix,
    truncated_gaussian_embedding,
)

PHI = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
PROBES = np.linspace(-3.0, 3.0, 20)


# Monte Carlo

def test_mc_constant():
    assert mc_estimate(np.full(10, 2.5)) == (2.5, 0.0)


def test_mc_alternating():
    n = 100
    mean, se = mc_estimate(np.tile([1.0, -1.0], n // 2))
    assert mean == 0.0
    assert se == pytest.approx(math.sqrt(n / (n - 1)) / math.sqrt(n), rel=1e-14)


def test_mc_lln():
    x = np.random.default_rng(0).standard_normal(10 ** 6)
    mean, se = mc_estimate(x)
    assert abs(mean) < 5 * se


def test_mc_needs_two_values():
    with pytest.raises(ValueError):
        mc_estimate([1.0])


def test_mc_error_rate():
    rng = np.random.default_rng(1)
    ns = np.logspace(2, 5, 7).astype(int)
    ses = [np.mean([mc_estimate(rng.standard_normal(n) ** 2)[1] for _ in range(20)]) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(ses), 1)[0]
    assert abs(slope + 0.5) <= 0.05


# kernels

def test_kernels_reject_nonpositive():
    with pytest.raises(ValueError):
        RbfKernel(0.0, 1.0)
    with pytest.raises(ValueError):
        MaternHalfKernel(1.0, -1.0)


# RBF embedding under N(0, sigma^2 I)

@pytest.mark.parametrize("x, expected", [(0.0, 1 / math.sqrt(2)), (2.0, math.exp(-1) / math.sqrt(2))])
def test_rbf_embedding_examples(x, expected):
    k = RbfKernel(1.0, math.sqrt(2))
    ref = adaptive_quad_1d(lambda t: mpexp(-(t - x) ** 2 / 2) * mpphi(t), -40, 40, points=[x])
    assert ref == pytest.approx(expected, rel=1e-12)
    assert rbf_embedding_gaussian(k, 1.0, np.array([x])) == pytest.approx(ref, abs=1e-8)


def mpexp(v):
    import mpmath
    return mpmath.exp(v)


def mpphi(t):
    import mpmath
    return mpmath.exp(-t * t / 2) / mpmath.sqrt(2 * mpmath.pi)


@pytest.mark.parametrize("ell, sigma", [(0.3, 1.0), (1.0, 0.5), (2.5, 2.0)])
def test_rbf_embedding_probe_grid(ell, sigma):
    k = RbfKernel(1.7, ell)
    for x in PROBES:
        ref = scipy.integrate.quad(lambda t: 1.7 * math.exp(-(t - x) ** 2 / ell ** 2)
                                   * PHI(t / sigma) / sigma, -40 * sigma, 40 * sigma,
                                   points=[x], epsabs=1e-14, limit=200)[0]
        assert rbf_embedding_gaussian(k, sigma, np.array([x])) == pytest.approx(ref, abs=1e-8)


def test_rbf_embedding_two_dimensional_oracle():
    k = RbfKernel(1.0, 0.9)
    x = np.array([0.4, -1.1])
    kern = lambda t: np.exp(-np.sum((t - x) ** 2, axis=1) / 0.81)
    # map the cube to [-8, 8]^2 and integrate the Gaussian-weighted kernel
    f = lambda u: kern(16 * u - 8) * np.prod(np.exp(-0.5 * (16 * u - 8) ** 2) / math.sqrt(2 * math.pi), axis=1) * 256
    ref = quad_integrate(f, dims=2, order=150)
    assert rbf_embedding_gaussian(k, 1.0, x) == pytest.approx(ref, abs=1e-8)


def test_rbf_embedding_point_mass_limit():
    k = RbfKernel(1.3, 0.8)
    x = np.array([0.7])
    assert rbf_embedding_gaussian(k, 1e-6, x) == pytest.approx(float(k(np.zeros((1, 1)), x[None])[0, 0]), rel=1e-9)


def test_initial_error_examples():
    k = RbfKernel(1.0, math.sqrt(2))
    assert rbf_initial_error_gaussian(RbfKernel(2.0, 0.5), 1e-9, 1) == pytest.approx(2.0, rel=1e-12)
    ref = scipy.integrate.dblquad(lambda s, t: math.exp(-(s - t) ** 2 / 2) * PHI(s) * PHI(t),
                                  -12, 12, -12, 12, epsabs=1e-13)[0]
    assert ref == pytest.approx(1 / math.sqrt(3), abs=1e-8)
    assert rbf_initial_error_gaussian(k, 1.0, 1) == pytest.approx(ref, abs=1e-8)
    assert rbf_initial_error_gaussian(k, 1.0, 2) == pytest.approx(ref ** 2, rel=1e-12)


# truncated Gaussian

def test_truncated_wide_interval_is_untruncated():
    assert truncated_gaussian_embedding(1.0, 0.0, 1.0, -1e6, 1e6, 0.0) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("mu, sigma, a, b, ell", [(0.0, 1.0, -1.5, 1.0, 0.8), (0.5, 2.0, 0.0, 3.0, 0.3),
                                                  (-1.0, 0.5, -0.2, 0.4, 1.5)])
def test_truncated_probe_grid(mu, sigma, a, b, ell):
    z = scipy.integrate.quad(lambda t: PHI((t - mu) / sigma) / sigma, a, b, epsabs=1e-15)[0]
    for x in np.linspace(a - 2, b + 2, 20):
        ref = scipy.integrate.quad(lambda t: math.exp(-(t - x) ** 2 / (2 * ell ** 2)) * PHI((t - mu) / sigma)
                                   / (sigma * z), a, b, epsabs=1e-14, limit=200)[0]
        assert truncated_gaussian_embedding(ell, mu, sigma, a, b, x) == pytest.approx(ref, abs=1e-8)


def test_truncated_far_point_and_symmetry():
    assert truncated_gaussian_embedding(0.5, 0.0, 1.0, -1.0, 1.0, 1.0 + 20 * 0.5) < 1e-12
    xs = np.linspace(0, 3, 7)
    np.testing.assert_allclose(truncated_gaussian_embedding(0.7, 0.0, 1.0, -2.0, 2.0, xs),
                               truncated_gaussian_embedding(0.7, 0.0, 1.0, -2.0, 2.0, -xs), rtol=1e-13)


def test_truncated_degenerate_interval():
    with pytest.raises(DegenerateInterval):
        truncated_gaussian_embedding(1.0, 0.0, 1.0, 60.0, 61.0, 0.0)


def test_truncated_embedding_class_converts_lengthscale():
    emb = TruncatedGaussianEmbedding(0.0, 1.0, -1.0, 2.0)
    k = RbfKernel(2.0, 0.9)
    z = scipy.integrate.quad(PHI, -1.0, 2.0)[0]
    ref = scipy.integrate.quad(lambda t: 2.0 * math.exp(-(t - 0.3) ** 2 / 0.81) * PHI(t) / z, -1.0, 2.0,
                               epsabs=1e-14)[0]
    assert emb.kernel_mean(k, np.array([0.3]))[0] == pytest.approx(ref, abs=1e-8)
    assert emb.initial_error(k, 1) is None


# Matern-1/2

def test_matern_example_value():
    # the two-term expression and quadrature agree on exp(1/2) erfc(1/sqrt 2)
    ref = adaptive_quad_1d(lambda t: mpexp(-abs(t)) * mpphi(t), -40, 40, points=[0.0])
    assert ref == pytest.approx(math.exp(0.5) * math.erfc(1 / math.sqrt(2)), rel=1e-12)
    assert ref == pytest.approx(0.523157, abs=1e-6)
    assert matern_half_embedding(1.0, 0.0) == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("ell", [0.05, 0.4, 1.0, 3.0])
def test_matern_probe_grid(ell):
    for x in PROBES:
        ref = scipy.integrate.quad(lambda t: math.exp(-abs(t - x) / ell) * PHI(t), -40, 40, points=[x],
                                   epsabs=1e-14, limit=400)[0]
        assert matern_half_embedding(ell, x) == pytest.approx(ref, abs=1e-8)


def test_matern_decay_and_symmetry():
    assert matern_half_embedding(1.0, 60.0) < 1e-20
    assert matern_half_embedding(1.0, -60.0) < 1e-20
    xs = np.linspace(0, 4, 9)
    np.testing.assert_allclose(matern_half_embedding(0.6, xs), matern_half_embedding(0.6, -xs), rtol=1e-13)
    assert np.all(np.isfinite(matern_half_embedding(0.01, np.linspace(-30, 30, 61))))


def test_matern_rejects_multidimensional_points():
    with pytest.raises(DimensionMismatch):
        matern_half_embedding(1.0, np.zeros((3, 2)))


@pytest.mark.parametrize("ell", [0.3, 1.0, 2.0])
def test_matern_initial_error(ell):
    # X - X' ~ N(0, 2), which leaves a one-dimensional integral across the kink
    ref = adaptive_quad_1d(lambda t: mpexp(-abs(t) / ell) * mpphi(t / math.sqrt(2)) / math.sqrt(2),
                           -60, 60, points=[0.0])
    assert matern_half_initial_error(ell) == pytest.approx(ref, abs=1e-8)


def test_embedding_checks_pass_at_construction():
    GaussianEmbedding(0.7)
    TruncatedGaussianEmbedding(0.2, 1.3, -0.5, 2.0)
    MaternHalfEmbedding()


# Bayesian quadrature

def test_bq_zero_data():
    x = np.linspace(-1, 1, 5)
    post = bq_estimate(x, np.zeros(5), RbfKernel(1.0, 1.0), optimize_hypers=False)
    assert post.mean == 0.0
    assert 0.0 <= post.variance <= rbf_initial_error_gaussian(RbfKernel(1.0, 1.0), 1.0, 1)


def test_bq_single_point_hand_solve():
    k = RbfKernel(2.0, 0.7)
    post = bq_estimate(np.zeros((1, 1)), np.ones(1), k, optimize_hypers=False, nugget=0.0)
    assert post.mean == pytest.approx(rbf_embedding_gaussian(k, 1.0, np.zeros(1)) / 2.0, rel=1e-14)


@pytest.mark.parametrize("kernel, embedding", [
    (lambda a, b: np.exp(-(a[:, None] - b[None, :]) ** 2 / 0.64), GaussianEmbedding()),
    (lambda a, b: np.exp(-np.abs(a[:, None] - b[None, :]) / 0.8), MaternHalfEmbedding()),
])
def test_bq_matches_discrete_gp_oracle(kernel, embedding):
    x = np.array([-1.3, -0.2, 0.5, 1.8])
    y = np.sin(x) + 1.0
    k = RbfKernel(1.0, 0.8) if isinstance(embedding, GaussianEmbedding) else MaternHalfKernel(1.0, 0.8)
    post = bq_estimate(x, y, k, embedding, optimize_hypers=False, nugget=1e-8)
    mean, var = discrete_gp_integral_posterior(x, y, kernel, nugget=1e-8, grid_size=20001)
    assert post.mean == pytest.approx(mean, abs=1e-6)
    assert post.variance == pytest.approx(var, abs=1e-6)
    assert var > 0


def test_bq_interpolates():
    x = np.linspace(-2, 2, 9)[:, None]
    y = np.cos(x[:, 0])
    k = RbfKernel(1.0, 0.8)
    np.testing.assert_allclose(gp_posterior_mean(x, y, k, 1e-12, x), y, atol=1e-6)


def test_bq_variance_nested_monotone():
    x = np.random.default_rng(0).standard_normal(40)
    k = RbfKernel(1.0, 0.9)
    prior = rbf_initial_error_gaussian(k, 1.0, 1)
    variances = [bq_estimate(x[:n], np.ones(n), k, optimize_hypers=False).variance for n in (5, 10, 20, 40)]
    assert all(0.0 <= v <= prior for v in variances)
    assert all(b <= a + 1e-12 for a, b in zip(variances, variances[1:]))


def test_bq_rejects_kernel_mismatch():
    with pytest.raises(TypeError):
        bq_estimate(np.zeros(3), np.zeros(3), MaternHalfKernel(), GaussianEmbedding())


def test_bq_truncated_has_no_variance():
    x = np.linspace(-0.95, 0.95, 20)
    post = bq_estimate(x, x ** 2, RbfKernel(1.0, 0.5), TruncatedGaussianEmbedding(), optimize_hypers=False)
    assert post.variance is None and post.std is None
    z = scipy.integrate.quad(PHI, -1, 1)[0]
    truth = scipy.integrate.quad(lambda t: t * t * PHI(t) / z, -1, 1)[0]
    assert post.mean == pytest.approx(truth, abs=1e-3)


def test_bq_continuous_genz_d1():
    x = np.random.default_rng(0).standard_normal((1024, 1))
    y = TransformedIntegrand(GenzSpec("continuous", 1))(x)
    post = bq_estimate(x, y)
    assert abs(post.mean - ground_truth(GenzSpec("continuous", 1))) < 1e-2
    assert post.variance >= 0


# Stein control functionals

def test_stein_kernel_symmetry_and_psd():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 2))
    k0 = stein_kernel_matrix(RbfKernel(1.0, 1.2), x, -x)
    np.testing.assert_allclose(k0, k0.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(k0)) > -1e-10


def test_stein_kernel_cross_block_symmetry():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    k = RbfKernel(1.0, 0.7)
    np.testing.assert_allclose(stein_kernel_matrix(k, x, -x, y, -y), stein_kernel_matrix(k, y, -y, x, -x).T,
                               atol=1e-12)


def test_stein_kernel_has_zero_mean():
    # E_{X ~ N(0,1)} k0(X, y) = 0 for fixed y, by quadrature
    k = RbfKernel(1.0, 0.9)
    for y in (-1.0, 0.3, 2.0):
        f = lambda t: stein_kernel_matrix(k, np.array([[t]]), np.array([[-t]]), np.array([[y]]), np.array([[-y]]))[0, 0]
        assert abs(scipy.integrate.quad(lambda t: f(t) * PHI(t), -30, 30, epsabs=1e-13)[0]) < 1e-10


def test_cf_constant_values():
    x = np.random.default_rng(0).standard_normal((20, 1))
    assert stein_cf_estimate(x, np.full(20, 3.5), -x).estimate == pytest.approx(3.5, rel=1e-10)


def test_cf_diagonal_toy():
    x = np.array([[0.0], [10.0], [20.0]])
    s = np.array([[0.5], [-1.0], [2.0]])
    y = np.array([1.0, 2.0, 4.0])
    k = RbfKernel(1.0, 0.5)
    reg = 1e-6
    res = stein_cf_estimate(x, y, s, k, regularizer=reg, optimize_hypers=False)
    c = 1 / 0.25
    diag = 2 * c + s[:, 0] ** 2
    w = 1.0 / (diag + 3 * reg * np.mean(diag))
    assert res.estimate == pytest.approx(float(w @ y / w.sum()), rel=1e-10)


def test_cf_degenerate_denominator():
    with pytest.raises(DegenerateDenominator):
        # a huge regulariser drives 1^T K^-1 1 below the threshold
        stein_cf_estimate(np.zeros((2, 1)), np.ones(2), np.zeros((2, 1)), RbfKernel(1.0, 1.0),
                          regularizer=1e14, optimize_hypers=False)


def test_cf_continuous_genz_d1():
    x = np.random.default_rng(0).standard_normal((512, 1))
    y = TransformedIntegrand(GenzSpec("continuous", 1))(x)
    assert abs(stein_cf_estimate(x, y, -x).estimate - 0.7336169433780728) < 5e-2
