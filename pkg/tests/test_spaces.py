import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfopt.errors import EigensolverFailure
from mfopt.spaces import (SpdOperator, build_grid, generalized_eig, laplacian_prior,
                          mass_matrix, stiffness_matrix)

from conftest import random_spd, rel_err


def test_grid_three_nodes():
    g = build_grid(3, 0, 1)
    np.testing.assert_array_equal(g.nodes, [0.0, 0.5, 1.0])


def test_grid_spacing():
    assert build_grid(5, 0, 1).h == 0.25


@pytest.mark.parametrize("n, a, b", [(2, 0, 1), (5, 1, 1), (5, 2, 1)])
def test_grid_rejects_bad_arguments(n, a, b):
    with pytest.raises(ValueError):
        build_grid(n, a, b)


@given(st.integers(3, 300), st.floats(-5, 5), st.floats(0.1, 10))
def test_grid_nodes_endpoints_and_order(n, a, length):
    g = build_grid(n, a, a + length)
    assert g.nodes[0] == a and g.nodes[-1] == a + length
    assert np.all(np.diff(g.nodes) > 0)


def test_mass_hand_values():
    M = mass_matrix(build_grid(3, 0, 1)).matrix
    e = np.ones(3)
    assert e @ M @ e == pytest.approx(1.0)
    assert M[0, 0] == pytest.approx(1 / 6)
    assert M[1, 1] == pytest.approx(1 / 3)
    assert M[0, 1] == pytest.approx(1 / 12)


def test_stiffness_hand_value():
    g = build_grid(3, 0, 1)
    W = laplacian_prior(g, 1.0, 1.0).matrix
    K = stiffness_matrix(g)
    assert K[0, 0] == pytest.approx(2.0)
    np.testing.assert_allclose(W, K + mass_matrix(g).matrix)


@given(st.integers(3, 200), st.floats(-3, 3), st.floats(0.05, 20))
def test_fem_matrices_properties(n, a, length):
    g = build_grid(n, a, a + length)
    M = mass_matrix(g).matrix
    K = stiffness_matrix(g)
    assert np.allclose(M, M.T) and np.allclose(K, K.T)
    assert M.sum() == pytest.approx(length, rel=1e-12)
    assert np.linalg.norm(K @ np.ones(n)) < 1e-12 * max(1.0, np.abs(K).max())


@given(st.floats(1e-4, 1e3), st.floats(1e-4, 1e3), st.integers(3, 80))
def test_laplacian_prior_constant_vector(gamma, beta, n):
    g = build_grid(n)
    W = laplacian_prior(g, gamma, beta).matrix
    c = np.full(n, 1.7)
    np.testing.assert_allclose(W @ c, beta * (mass_matrix(g).matrix @ c), rtol=1e-9, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.sampled_from([3, 17, 128, 512]))
def test_laplacian_prior_is_spd(gamma, beta, n):
    W = laplacian_prior(build_grid(n), gamma, beta)
    assert W.cholesky.shape == (n, n)


def test_laplacian_prior_gamma_limit():
    g = build_grid(9)
    W = laplacian_prior(g, 1e-12, 2.0).matrix
    np.testing.assert_allclose(W, 2.0 * mass_matrix(g).matrix, atol=1e-9)


@pytest.mark.parametrize("gamma, beta", [(0, 1), (1, 0), (-1, 1)])
def test_laplacian_prior_rejects_weights(gamma, beta):
    with pytest.raises(ValueError):
        laplacian_prior(build_grid(5), gamma, beta)


def test_spd_operator_rejects_nonsymmetric_and_indefinite():
    with pytest.raises(ValueError):
        SpdOperator(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        SpdOperator(np.diag([1.0, -1.0]))


def test_geneig_identity_and_scaled_pencils(rng):
    M = random_spd(rng, 6)
    np.testing.assert_allclose(generalized_eig(M.matrix, M).values, 1.0, rtol=1e-10)
    assert generalized_eig(2 * M.matrix, M, r=1).values[0] == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_geneig_full_rank_reconstruction(n, seed):
    rng = np.random.default_rng(seed)
    A, M = random_spd(rng, n, 100.0).matrix, random_spd(rng, n, 10.0)
    pairs = generalized_eig(A, M)
    V, rho = pairs.vectors, pairs.values
    assert np.all(np.diff(rho) <= 0)
    np.testing.assert_allclose(V.T @ M.matrix @ V, np.eye(n), atol=1e-10)
    assert rel_err(A @ V, M.matrix @ V * rho) < 1e-9
    Mm = M.matrix
    assert rel_err(Mm @ V @ np.diag(rho) @ V.T @ Mm, A) < 1e-9
    # sign convention: largest-magnitude entry of every vector is positive
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(n)] > 0)


def test_geneig_truncated_is_leading_block(rng):
    A, M = random_spd(rng, 7, 50.0).matrix, random_spd(rng, 7)
    full, top = generalized_eig(A, M), generalized_eig(A, M, r=3)
    np.testing.assert_allclose(top.values, full.values[:3], rtol=1e-12)
    np.testing.assert_allclose(np.abs(top.vectors), np.abs(full.vectors[:, :3]), atol=1e-10)


def test_geneig_bad_rank_and_nonfinite(rng):
    M = random_spd(rng, 4)
    with pytest.raises(ValueError):
        generalized_eig(M.matrix, M, r=0)
    A = np.full((4, 4), np.nan)
    with pytest.raises((EigensolverFailure, ValueError)):
        generalized_eig(A, M)
