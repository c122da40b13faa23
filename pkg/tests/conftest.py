"""Shared fixtures and dense oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mfopt.calibration import DesignSet, DiscrepancyData
from mfopt.discrepancy import PriorFactor, dense_A
from mfopt.problems.base import OptProblem
from mfopt.spaces import SpdOperator, build_grid, laplacian_prior, mass_matrix


def random_spd(rng: np.random.Generator, n: int, cond: float = 10.0) -> SpdOperator:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return SpdOperator(Q @ np.diag(w) @ Q.T)


def random_prior(rng: np.random.Generator, n_u: int, n_z: int, fem: bool = False,
                 z_tilde: np.ndarray | None = None) -> PriorFactor:
    """Prior factor on random SPD operators (or FEM ones with ``fem=True``)."""
    if fem:
        gu, gz = build_grid(n_u), build_grid(n_z)
        M_u, M_z = mass_matrix(gu), mass_matrix(gz)
        W_u, W_z = laplacian_prior(gu, 0.1, 1.0), laplacian_prior(gz, 0.5, 2.0)
    else:
        M_u, W_u = random_spd(rng, n_u, 5.0), random_spd(rng, n_u, 20.0)
        M_z, W_z = random_spd(rng, n_z, 5.0), random_spd(rng, n_z, 20.0)
    zt = rng.standard_normal(n_z) if z_tilde is None else z_tilde
    return PriorFactor.build(M_u, W_u, M_z, W_z, zt)


def dense_W_theta(prior: PriorFactor) -> np.ndarray:
    """Block precision: theta^T W theta = ||a + K M_z z~||_{W_u}^2 + tr(K^T W_u K W_z)."""
    Wu, Wz = prior.W_u.matrix, prior.W_z.matrix
    mz = prior.M_z.matrix @ prior.z_tilde
    n_u = Wu.shape[0]
    # theta -> a + K mz, as a matrix acting on the flat (a, row-major K) vector
    S = np.hstack([np.eye(n_u), np.kron(np.eye(n_u), mz[None, :])])
    W = S.T @ Wu @ S
    W[n_u:, n_u:] += np.kron(Wu, Wz)
    return W


def dense_posterior(prior: PriorFactor, design: DesignSet, data: DiscrepancyData | None,
                    alpha_d: float):
    """Dense normal equations; returns (Sigma_theta, theta_bar flat or None)."""
    W = dense_W_theta(prior)
    Wd = prior.M_u.matrix / alpha_d
    H = W.copy()
    rhs = np.zeros(W.shape[0])
    for l, z in enumerate(design.points):
        A = dense_A(z, prior.n_u, prior.M_z)
        H += A.T @ Wd @ A
        if data is not None:
            rhs += A.T @ Wd @ data.values[:, l]
    Sigma = np.linalg.inv(H)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return Sigma, (Sigma @ rhs if data is not None else None)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class LinearProblem(OptProblem):
    """``S~(z) = B z``: the composite objective is an exact quadratic."""

    def __init__(self, B, M_u, M_z, target, gamma_reg=1e-2, hifi=None):
        self.B = np.asarray(B, dtype=float)
        self.M_u, self.M_z = M_u, M_z
        self.target = np.asarray(target, dtype=float)
        self.gamma_reg = gamma_reg
        self._hifi = hifi

    def hifi_solve(self, z):
        return self._hifi(z) if self._hifi is not None else self.B @ z

    def lofi_state(self, z):
        return self.B @ np.asarray(z, dtype=float)

    def state_vector(self, state):
        return state

    def jvp(self, state, v):
        return self.B @ v

    def vjp(self, state, w):
        return self.B.T @ w

    def second_vjp(self, state, v, w):
        return np.zeros_like(np.asarray(v, dtype=float))


@pytest.fixture(scope="session")
def dr_setup():
    """Default diffusion-reaction setup, built once per session."""
    from mfopt.harness.config import RunConfig
    from mfopt.harness.runner import build_setup
    return build_setup(RunConfig())


def derivative_battery(problem, z, theta, rng, h_rel=1e-5):
    """
    Finite-difference checks of the composite derivatives at ``(z, theta)``.

    Returns relative errors for the gradient (directional, central
    differences of the objective), the Hessian-vector product (central
    differences of the gradient), its symmetry, and the mixed derivative
    (central differences of the gradient in theta).
    """
    n = problem.n_z
    Mz = problem.M_z
    scale = max(1.0, np.sqrt(Mz.norm_sq(z) / Mz.matrix.sum()))
    v = rng.standard_normal(n)
    w = rng.standard_normal(n)
    h = h_rel * scale
    g = problem.composite_gradient(z, theta)
    fd = (problem.composite_objective(z + h * v, theta)
          - problem.composite_objective(z - h * v, theta)) / (2 * h)
    out = {"gradient": abs(g @ v - fd) / max(abs(fd), 1e-300)}
    Hv = problem.composite_hvp(z, theta, v)
    fd = (problem.composite_gradient(z + h * v, theta)
          - problem.composite_gradient(z - h * v, theta)) / (2 * h)
    out["hvp"] = rel_err(Hv, fd)
    Hw = problem.composite_hvp(z, theta, w)
    out["symmetry"] = abs(v @ Hw - w @ Hv) / max(abs(v @ Hw), 1e-300)
    from mfopt.discrepancy import DiscrepancyParams
    n_u = problem.n_u
    tdir = DiscrepancyParams(rng.standard_normal(n_u), rng.standard_normal((n_u, n)) / scale)
    ht = h_rel * max(1.0, theta.norm())
    fd = (problem.composite_gradient(z, theta + tdir * ht)
          - problem.composite_gradient(z, theta - tdir * ht)) / (2 * ht)
    out["mixed"] = rel_err(problem.mixed_apply(z, theta, tdir), fd)
    # theta = 0, direction (e_1, 0)
    e1 = DiscrepancyParams(np.eye(n_u)[0], np.zeros((n_u, n)))
    zero = DiscrepancyParams.zeros(n_u, n)
    fd = (problem.composite_gradient(z, e1 * h_rel) - problem.composite_gradient(z, e1 * -h_rel)) / (2 * h_rel)
    out["mixed_e1"] = rel_err(problem.mixed_apply(z, zero, e1), fd)
    return out


@pytest.fixture(scope="session")
def flow_problem():
    from mfopt.problems.flow_transport import FlowTransportProblem
    return FlowTransportProblem()
