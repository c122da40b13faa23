import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfopt.calibration import (DesignSet, DiscrepancyData, build_G, calibrate, map_estimate,
                               posterior_factors, posterior_sample, prior_pushforward_trace,
                               pushforward_trace)
from mfopt.discrepancy import DiscrepancyParams, dense_A
from mfopt.errors import IllConditionedDesign

from conftest import dense_posterior, dense_W_theta, random_prior, rel_err

seeds = st.integers(0, 2**32 - 1)


def _setup(rng, n_u, n_z, N, alpha_d=1e-2):
    prior = random_prior(rng, n_u, n_z)
    design = DesignSet(rng.standard_normal((n_z, N)))
    data = DiscrepancyData(rng.standard_normal((n_u, N)))
    return prior, design, data, posterior_factors(design, data, prior, alpha_d)


def test_G_single_center_point(rng):
    prior = random_prior(rng, 3, 4)
    G = build_G(DesignSet.from_points([prior.z_tilde]), prior)
    np.testing.assert_allclose(G, [[1.0]])
    f = posterior_factors(DesignSet.from_points([prior.z_tilde]), None, prior)
    assert f.mu[0] == pytest.approx(1.0)
    np.testing.assert_allclose(f.y[:, 0], 0.0, atol=1e-14)
    assert f.s[0] == pytest.approx(1.0)


def test_G_eigen_structure_against_dense_kronecker(rng):
    """Eigenvalues of A W^-1 A^T (I (x) M_u) are mu_i / lambda_j."""
    n_u, n_z = 3, 3
    prior = random_prior(rng, n_u, n_z)
    design = DesignSet(rng.standard_normal((n_z, 2)))
    A = np.vstack([dense_A(z, n_u, prior.M_z) for z in design.points])
    Winv = np.linalg.inv(dense_W_theta(prior))
    prod = A @ Winv @ A.T @ np.kron(np.eye(2), prior.M_u.matrix)
    got = np.sort(np.linalg.eigvals(prod).real)
    mu = np.linalg.eigvalsh(build_G(design, prior))
    want = np.sort(np.outer(mu, 1.0 / prior.Lambda).ravel())
    assert rel_err(got, want) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), seeds)
def test_factor_invariants(n_z, N, seed):
    rng = np.random.default_rng(seed)
    N = min(N, n_z + 1)
    prior = random_prior(rng, 3, n_z)
    design = DesignSet(rng.standard_normal((n_z, N)))
    try:
        f = posterior_factors(design, None, prior)
    except IllConditionedDesign:
        return
    G = build_G(f.design, prior)
    assert rel_err(f.G(), G) < 1e-9
    np.testing.assert_array_equal(f.design.Z, design.Z[:, f.order])
    assert np.all(f.mu >= -1e-10)
    assert f.mu.sum() == pytest.approx(np.trace(G), rel=1e-10)


def test_alpha_d_does_not_change_geometry(rng):
    prior, design, data, f1 = _setup(rng, 3, 3, 2)
    f2 = posterior_factors(design, data, prior, alpha_d=7.0)
    for a in ("mu", "g", "y", "s"):
        np.testing.assert_array_equal(getattr(f1, a), getattr(f2, a))


def test_map_zero_data(rng):
    prior, design, _, f = _setup(rng, 3, 2, 2)
    assert map_estimate(f, DiscrepancyData(np.zeros((3, 2)))).is_zero()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 3), seeds)
def test_oracle_equivalence(n_u, n_z, N, seed):
    """Structured MAP and Sigma_theta products against the dense normal equations."""
    rng = np.random.default_rng(seed)
    try:
        prior, design, data, f = _setup(rng, n_u, n_z, N)
    except IllConditionedDesign:
        return
    Sigma, theta_dense = dense_posterior(prior, design, data, f.alpha_d)
    assert rel_err(map_estimate(f, data).flat(), theta_dense) < 1e-8
    v = rng.standard_normal(Sigma.shape[0])
    got = f.apply_covariance(DiscrepancyParams.from_flat(v, n_u, n_z)).flat()
    assert rel_err(got, Sigma @ v) < 1e-8


def test_interpolation_limit(rng):
    prior, design, data, _ = _setup(rng, 3, 2, 2)
    f = posterior_factors(design, data, prior, alpha_d=1e-10)
    th = map_estimate(f, data)
    for l, z in enumerate(design.points):
        d = data.values[:, l]
        assert rel_err(dense_A(z, 3, prior.M_z) @ th.flat(), d) < 1e-4


def test_posterior_never_exceeds_prior(rng):
    prior, design, _, f = _setup(rng, 4, 3, 3)
    for _ in range(20):
        th = DiscrepancyParams(rng.standard_normal(4), rng.standard_normal((4, 3)))
        assert f.apply_covariance(th).dot(th) <= prior.apply_covariance(th).dot(th) * (1 + 1e-12)


def test_permutation_invariance(rng):
    prior, design, data, f = _setup(rng, 3, 4, 3)
    perm = [2, 0, 1]
    f2 = posterior_factors(DesignSet(design.Z[:, perm]), None, prior, f.alpha_d)
    np.testing.assert_allclose(f2.mu, f.mu, rtol=1e-12)
    th1 = map_estimate(f, data)
    th2 = map_estimate(f2, DiscrepancyData(data.values[:, perm]))
    assert rel_err(th2.flat(), th1.flat()) < 1e-12


def test_degenerate_design_raises(rng):
    prior = random_prior(rng, 3, 3)
    z = rng.standard_normal(3)
    with pytest.raises(IllConditionedDesign):
        posterior_factors(DesignSet.from_points([z, z]), None, prior)
    with pytest.raises(IllConditionedDesign):
        posterior_factors(DesignSet.from_points([z, 2 * z, z + 1e-9]), None, prior)


def test_sampling_without_data_is_prior_draw(rng):
    prior, design, _, f = _setup(rng, 3, 2, 1)
    f0 = posterior_factors(design, None, prior, alpha_d=1e12)   # D ~ 0
    xi = DiscrepancyParams(rng.standard_normal(3), rng.standard_normal((3, 2)))
    base = DiscrepancyParams(rng.standard_normal(3), rng.standard_normal((3, 2)))
    got = posterior_sample(f0, base, xi)
    want = base + prior.apply_Linv_T(xi)
    assert rel_err(got.flat(), want.flat()) < 1e-9


def test_sampling_moments():
    rng = np.random.default_rng(7)
    prior, design, data, f = _setup(rng, 3, 2, 1, alpha_d=0.5)
    Sigma, _ = dense_posterior(prior, design, data, f.alpha_d)
    th = map_estimate(f, data)
    n = 20000
    draws = np.array([posterior_sample(f, th, rng.standard_normal(9)).flat() for _ in range(n)])
    se = np.sqrt(np.diag(Sigma) / n)
    assert np.all(np.abs(draws.mean(axis=0) - th.flat()) < 3.5 * se)
    C = np.cov(draws.T)
    # entry-wise 5% on entries that are not small relative to the diagonal
    scale = np.sqrt(np.outer(np.diag(Sigma), np.diag(Sigma)))
    big = np.abs(Sigma) > 0.2 * scale
    assert np.all(np.abs(C - Sigma)[big] <= 0.05 * np.abs(Sigma)[big])
    assert np.all(np.abs(C - Sigma) <= 0.05 * scale)


def test_pushforward_trace_dense(rng):
    prior, design, data, f = _setup(rng, 3, 2, 2)
    Sigma, _ = dense_posterior(prior, design, data, f.alpha_d)
    z = rng.standard_normal(2)
    A = dense_A(z, 3, prior.M_z)
    want = np.trace(A @ Sigma @ A.T @ prior.M_u.matrix)
    assert pushforward_trace(f, z) == pytest.approx(want, rel=1e-9)


def test_pushforward_monotone_in_data(rng):
    prior = random_prior(rng, 3, 4)
    pts = [prior.z_tilde + 0.3 * rng.standard_normal(4) for _ in range(2)]
    f1 = posterior_factors(DesignSet.from_points(pts[:1]), None, prior)
    f2 = posterior_factors(DesignSet.from_points(pts), None, prior)
    assert pushforward_trace(f2, prior.z_tilde) <= pushforward_trace(f1, prior.z_tilde)


def test_pushforward_noise_floor(rng):
    prior = random_prior(rng, 3, 2)
    z = rng.standard_normal(2)
    f = posterior_factors(DesignSet.from_points([z]), None, prior, alpha_d=1e-10)
    assert pushforward_trace(f, z) <= 1e-6 * prior_pushforward_trace(prior, z)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_pushforward_nonincreasing_under_augmentation(seed):
    rng = np.random.default_rng(seed)
    prior = random_prior(rng, 3, 4)
    pts = [rng.standard_normal(4)]
    z = rng.standard_normal(4)
    prev = pushforward_trace(posterior_factors(DesignSet.from_points(pts), None, prior), z)
    for _ in range(3):
        pts.append(rng.standard_normal(4))
        cur = pushforward_trace(posterior_factors(DesignSet.from_points(pts), None, prior), z)
        assert cur <= prev * (1 + 1e-10) + 1e-12
        prev = cur


def test_calibrate_returns_map(rng):
    prior, design, data, f = _setup(rng, 3, 2, 2)
    _, th = calibrate(design, data, prior, f.alpha_d)
    assert rel_err(th.flat(), map_estimate(f, data).flat()) < 1e-14
