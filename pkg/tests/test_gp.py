from __future__ import annotations

import math

import numpy as np
import pytest

from greybox_bo import (
    Dataset,
    GpPosterior,
    Kernel,
    MeanFunction,
    SearchDomain,
    fit_hyperparameters,
    log_marginal_likelihood,
)
from greybox_bo.gp import JITTER_REL_BASE

from conftest import make_rng, random_gp_instance, separated_points


def unit_se_gp(X, y, noise=0.0):
    d = np.atleast_2d(X).shape[1]
    ker = Kernel("se", lengthscales=np.ones(d), output_scale=1.0)
    return GpPosterior(ker, MeanFunction("zero"), Dataset(X, y, noise))


# ---------------------------------------------------------------------------
# Posterior mean / covariance: pinned examples
# ---------------------------------------------------------------------------

def test_empty_posterior_is_prior():
    gp = unit_se_gp(np.zeros((0, 1)), [])
    assert gp.posterior_mean([0.7]) == 0.0
    assert gp.posterior_cov([0.7]) == pytest.approx(1.0, abs=1e-12)


def test_noiseless_interpolation_single_point():
    gp = unit_se_gp([[0.0]], [2.0])
    assert gp.posterior_mean([0.0]) == pytest.approx(2.0, abs=1e-6)
    assert gp.posterior_cov([0.0]) == pytest.approx(0.0, abs=1e-8)


def test_mean_at_unit_distance_closed_form():
    gp = unit_se_gp([[0.0]], [2.0])
    # scalar Gram = 1, cross-covariance exp(-1/2)
    assert gp.posterior_mean([1.0]) == pytest.approx(2.0 * math.exp(-0.5), abs=1e-6)


def test_cov_at_unit_distance_closed_form():
    gp = unit_se_gp([[0.0]], [2.0])
    assert gp.posterior_cov([1.0]) == pytest.approx(1.0 - math.exp(-1.0), abs=1e-6)


# ---------------------------------------------------------------------------
# Dense-oracle equivalence: cached factorization vs from-scratch solve
# ---------------------------------------------------------------------------

def dense_oracle(gp, X, X2=None):
    """Posterior mean/covariance by a from-scratch dense linear solve."""
    ds, ker, mean = gp.dataset, gp.kernel, gp.mean_fn
    A = ker(ds.X) + (ds.noise_variance + gp.jitter) * np.eye(ds.n)
    Ainv = np.linalg.inv(A)
    Kx = ker(X, ds.X)
    mu = mean(X) + Kx @ Ainv @ (ds.y - mean(ds.X))
    X2m = X if X2 is None else X2
    cov = ker(X, X2m) - Kx @ Ainv @ ker(ds.X, X2m)
    return mu, cov


@pytest.mark.parametrize("seed", range(6))
def test_dense_oracle_equivalence(seed):
    gp, rng = random_gp_instance(seed, d=min(2 + seed % 3, 4), n=6 + 2 * (seed % 7))
    P = rng.random((7, gp.kernel.dim))
    mu_o, cov_o = dense_oracle(gp, P)
    assert np.allclose(gp.mean(P), mu_o, atol=1e-8)
    assert np.allclose(gp.cov(P), cov_o, atol=1e-8)
    assert np.allclose(gp.var(P), np.clip(np.diag(cov_o), 0, None), atol=1e-8)


# ---------------------------------------------------------------------------
# Invariants: interpolation, PSD, monotone uncertainty
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_noiseless_interpolation_invariant(seed):
    gp, _ = random_gp_instance(seed, d=2, n=10)
    assert np.max(np.abs(gp.mean(gp.dataset.X) - gp.dataset.y)) <= 1e-6
    assert np.max(gp.var(gp.dataset.X)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_posterior_cov_psd(seed):
    gp, rng = random_gp_instance(seed, d=3, n=12)
    P = rng.random((10, 3))
    eigs = np.linalg.eigvalsh(gp.cov(P))
    assert eigs.min() >= -1e-8


@pytest.mark.parametrize("seed", range(5))
def test_monotone_uncertainty(seed):
    gp, rng = random_gp_instance(seed, d=2, n=8)
    P = rng.random((12, 2))
    var_before = gp.var(P)
    x_new = rng.random(2)
    gp2 = gp.with_observation(x_new, 0.5)
    var_after = gp2.var(P)
    assert np.all(var_after <= var_before + 1e-8)


# ---------------------------------------------------------------------------
# Log marginal likelihood
# ---------------------------------------------------------------------------

def test_lml_scalar_normal_density():
    ker = Kernel("se", lengthscales=[1.0], output_scale=1.0)
    ds = Dataset([[0.0]], [0.0], noise_variance=1.0)
    # y ~ N(0, 1 + 1): log density at 0 is -log(2*pi*2)/2
    expect = -0.5 * math.log(2 * math.pi * 2.0)
    assert log_marginal_likelihood(ker, MeanFunction("zero"), ds) == pytest.approx(expect, abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_lml_matches_dense_normal_density(seed):
    rng = make_rng(100 + seed)
    X = rng.random((5, 2))
    y = rng.normal(size=5)
    ker = Kernel("matern52", lengthscales=[0.6, 0.8], output_scale=1.4)
    mean = MeanFunction("constant", 0.3)
    nv = 0.2
    lml = log_marginal_likelihood(ker, mean, Dataset(X, y, nv))
    M = ker(X) + (nv + JITTER_REL_BASE * ker.output_scale) * np.eye(5)
    r = y - mean(X)
    _, logdet = np.linalg.slogdet(M)
    expect = -0.5 * r @ np.linalg.solve(M, r) - 0.5 * logdet - 2.5 * math.log(2 * math.pi)
    assert lml == pytest.approx(expect, abs=1e-8)


def test_lml_gradient_matches_finite_differences():
    from greybox_bo.gp import _lml_and_grad

    rng = make_rng(11)
    X = rng.random((8, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    ls = np.array([0.5, 0.7])
    scale, c, nv = 1.2, 0.1, 0.05
    _, grad = _lml_and_grad(
        Kernel("matern52", ls, scale), MeanFunction("constant", c), Dataset(X, y, nv),
        fit_noise=True,
    )
    h = 1e-6

    def val(ls_, scale_, c_, nv_):
        return _lml_and_grad(
            Kernel("matern52", ls_, scale_), MeanFunction("constant", c_),
            Dataset(X, y, nv_), want_grad=False,
        )[0]

    fd = []
    for i in range(2):
        hi, lo = ls.copy(), ls.copy()
        hi[i] *= np.exp(h)
        lo[i] *= np.exp(-h)
        fd.append((val(hi, scale, c, nv) - val(lo, scale, c, nv)) / (2 * h))
    fd.append((val(ls, scale * np.exp(h), c, nv) - val(ls, scale * np.exp(-h), c, nv)) / (2 * h))
    fd.append((val(ls, scale, c + h, nv) - val(ls, scale, c - h, nv)) / (2 * h))
    fd.append((val(ls, scale, c, nv * np.exp(h)) - val(ls, scale, c, nv * np.exp(-h))) / (2 * h))
    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)


# ---------------------------------------------------------------------------
# Hyperparameter fitting
# ---------------------------------------------------------------------------

def test_fit_shift_invariance():
    rng = make_rng(5)
    X = separated_points(rng, 12, 1)
    y = np.sin(4 * X[:, 0])
    fit1 = fit_hyperparameters(Dataset(X, y), "se", restarts=4, seed=0)
    fit2 = fit_hyperparameters(Dataset(X, y + 37.0), "se", restarts=4, seed=0)
    # constant mean absorbs the shift; standardized problems agree to float rounding
    assert fit1.log_marginal_likelihood == pytest.approx(fit2.log_marginal_likelihood, abs=1e-6)
    assert np.allclose(fit1.kernel.lengthscales, fit2.kernel.lengthscales, rtol=1e-6)
    assert fit2.mean.value - fit1.mean.value == pytest.approx(37.0, abs=1e-5)


def test_fit_recovers_known_lengthscale():
    rng = make_rng(42)
    X = separated_points(rng, 40, 1, min_dist=0.015)
    true_ker = Kernel("se", lengthscales=[0.3], output_scale=1.0)
    L = np.linalg.cholesky(true_ker(X) + 1e-10 * np.eye(40))
    y = L @ rng.normal(size=40)
    fit = fit_hyperparameters(Dataset(X, y), "se", restarts=8, seed=1)
    ls = fit.kernel.lengthscales[0]
    assert 0.15 <= ls <= 0.6


def test_fit_contradictory_duplicates_force_noise():
    X = np.array([[0.2], [0.2], [0.8], [0.8]])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    fit = fit_hyperparameters(Dataset(X, y), "matern52", restarts=4, seed=0, fit_noise=True)
    assert fit.noise_variance > 1e-6


def test_fit_deterministic_given_seed():
    gp, _ = random_gp_instance(3, d=2, n=10)
    ds = gp.dataset
    f1 = fit_hyperparameters(ds, "matern52", restarts=4, seed=9)
    f2 = fit_hyperparameters(ds, "matern52", restarts=4, seed=9)
    assert np.array_equal(f1.kernel.lengthscales, f2.kernel.lengthscales)
    assert f1.kernel.output_scale == f2.kernel.output_scale
    assert f1.noise_variance == f2.noise_variance
    assert f1.mean.value == f2.mean.value


def test_fit_respects_domain_standardization():
    rng = make_rng(8)
    dom = SearchDomain([0.0], [10.0])
    X = rng.uniform(0, 10, size=(15, 1))
    y = np.sin(X[:, 0])
    fit = fit_hyperparameters(Dataset(X, y), "matern52", restarts=4, seed=2, domain=dom)
    # lengthscale is reported in raw units (domain width 10)
    assert 1e-2 <= fit.kernel.lengthscales[0] <= 1e4


def test_fit_requires_two_records():
    with pytest.raises(ValueError):
        fit_hyperparameters(Dataset([[0.0]], [1.0]), "se")


# ---------------------------------------------------------------------------
# Gradients of posterior quantities
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1])
def test_posterior_gradients_match_finite_differences(seed):
    gp, rng = random_gp_instance(seed, d=2, n=9)
    x = rng.random(2)
    h = 1e-6
    gm = gp.mean_grad(x)
    gv = gp.var_grad(x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd_m = (gp.posterior_mean(x + e) - gp.posterior_mean(x - e)) / (2 * h)
        fd_v = (gp.posterior_cov(x + e) - gp.posterior_cov(x - e)) / (2 * h)
        assert gm[i] == pytest.approx(fd_m, rel=1e-4, abs=1e-7)
        assert gv[i] == pytest.approx(fd_v, rel=1e-4, abs=1e-7)


@pytest.mark.parametrize("seed", [0, 1])
def test_point_set_cache_consistency(seed):
    gp, rng = random_gp_instance(seed, d=2, n=8)
    P = rng.random((6, 2))
    ps = gp.point_set(P)
    x = rng.random(2)
    assert np.allclose(ps.mean, gp.mean(P))
    assert np.allclose(ps.cov_to(x), gp.cov(P, x[None, :])[:, 0], atol=1e-10)
    h = 1e-6
    G = ps.cov_to_grad(x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (ps.cov_to(x + e) - ps.cov_to(x - e)) / (2 * h)
        assert np.allclose(G[:, i], fd, rtol=1e-4, atol=1e-7)
