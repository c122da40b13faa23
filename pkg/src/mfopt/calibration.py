"""
Bayesian calibration of the affine discrepancy from high-fidelity data.

With the noise covariance ``alpha_d (I_N (x) M_u^{-1})`` the posterior
covariance splits as ``Sigma_theta = W_theta^{-1} - Psi D Psi^T`` where Psi
collects the right generalized singular vectors of the stacked forward map.
Those vectors are indexed by an eigenpair of the small N x N data Gram
matrix ``G`` and a prior eigenpair of ``W_u``, so every posterior operation
below costs O(N n_u n_z) at most and never forms an ``n_theta``-sized matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg

from .discrepancy import DiscrepancyParams, PriorFactor
from .errors import DimensionMismatch, EigensolverFailure, IllConditionedDesign
from .spaces import SpdOperator

log = logging.getLogger(__name__)

GRAM_RANK_TOL = 1e-10
G_COND_MAX = 1e12


@dataclass(frozen=True, eq=False)
class DesignSet:
    """Input points ``z_1..z_N`` stored as the columns of ``Z``."""

    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise ValueError("design needs at least one point")
        if not np.all(np.isfinite(Z)):
            raise ValueError("design points must be finite")
        object.__setattr__(self, "Z", Z)

    @classmethod
    def from_points(cls, points: Sequence[np.ndarray]) -> "DesignSet":
        return cls(np.column_stack([np.asarray(p, dtype=float) for p in points]))

    @property
    def points(self) -> list[np.ndarray]:
        return [self.Z[:, i] for i in range(self.Z.shape[1])]

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    @property
    def n_z(self) -> int:
        return self.Z.shape[0]

    def check_independent(self, M_z: SpdOperator, tol: float = GRAM_RANK_TOL):
        gram = self.Z.T @ (M_z.matrix @ self.Z)
        w = np.linalg.eigvalsh(gram)
        if w[-1] <= 0 or w[0] <= tol * w[-1]:
            raise IllConditionedDesign(
                f"design points are linearly dependent (gram eigenvalue ratio {w[0] / max(w[-1], 1e-300):.2e})"
            )

    def append(self, points: Sequence[np.ndarray]) -> "DesignSet":
        return DesignSet(np.column_stack([self.Z] + [np.asarray(p, float) for p in points]))


@dataclass(frozen=True, eq=False)
class DiscrepancyData:
    values: np.ndarray  # (n_u, N), column l is d_l

    def __post_init__(self):
        D = np.asarray(self.values, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        object.__setattr__(self, "values", D)

    @classmethod
    def from_vectors(cls, vectors: Sequence[np.ndarray]) -> "DiscrepancyData":
        return cls(np.column_stack([np.asarray(v, dtype=float) for v in vectors]))

    @property
    def N(self) -> int:
        return self.values.shape[1]


def build_G(design: DesignSet, prior: PriorFactor) -> np.ndarray:
    """``G = e e^T + (Z - z~ e^T)^T M_z W_z^{-1} M_z (Z - z~ e^T)``."""
    if design.n_z != prior.n_z:
        raise DimensionMismatch(f"design n_z={design.n_z}, prior n_z={prior.n_z}")
    Zc = design.Z - prior.z_tilde[:, None]
    G = 1.0 + Zc.T @ prior.Q_z @ Zc
    return 0.5 * (G + G.T)


def trace_table(mu: np.ndarray, prior: PriorFactor, alpha_d: float) -> np.ndarray:
    """``T(mu) = sum_j (x_j^T M_u x_j) / (lambda_j (mu + alpha_d lambda_j))``, vectorized in mu."""
    lam, m = prior.Lambda, prior.trace_weights
    mu = np.atleast_1d(mu)
    return np.sum(m / (lam * (mu[:, None] + alpha_d * lam)), axis=1)


def trace_table_derivative(mu: np.ndarray, prior: PriorFactor, alpha_d: float) -> np.ndarray:
    lam, m = prior.Lambda, prior.trace_weights
    mu = np.atleast_1d(mu)
    return -np.sum(m / (lam * (mu[:, None] + alpha_d * lam) ** 2), axis=1)


def sym_eig_desc(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a small symmetric matrix, descending, largest entry positive."""
    try:
        mu, g = linalg.eigh(G)
    except linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    mu, g = mu[::-1], g[:, ::-1]
    idx = np.argmax(np.abs(g), axis=0)
    sgn = np.sign(g[idx, np.arange(g.shape[1])])
    sgn[sgn == 0] = 1.0
    return mu, g * sgn


@dataclass(frozen=True, eq=False)
class PosteriorFactors:
    mu: np.ndarray       # (N,) eigenvalues of G, descending
    g: np.ndarray        # (N, N) eigenvectors of G as columns
    y: np.ndarray        # (n_z, N)
    s: np.ndarray        # (N,)
    alpha_d: float
    prior: PriorFactor
    design: DesignSet    # canonically ordered copy of the input design
    order: np.ndarray    # input column index of each canonical column

    @cached_property
    def h(self) -> np.ndarray:
        """``W_z^{-1} M_z y_i`` as columns."""
        return self.prior.W_z.solve(self.prior.M_z.matrix @ self.y)

    @cached_property
    def D(self) -> np.ndarray:
        """``D[j, i] = mu_i / (mu_i + alpha_d lambda_j)``."""
        lam = self.prior.Lambda[:, None]
        return self.mu[None, :] / (self.mu[None, :] + self.alpha_d * lam)

    @cached_property
    def _scale(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.prior.Lambda[:, None] * self.mu[None, :])

    @property
    def N(self) -> int:
        return self.mu.shape[0]

    def G(self) -> np.ndarray:
        return (self.g * self.mu) @ self.g.T

    def psi_T(self, theta: DiscrepancyParams) -> np.ndarray:
        """Coefficients ``c[j, i] = psi_{ij}^T theta``."""
        B = np.outer(theta.intercept, self.s) + theta.slope @ self.h
        return (self.prior.X.T @ B) * self._scale

    def psi(self, coeffs: np.ndarray) -> DiscrepancyParams:
        """``sum_ij coeffs[j, i] psi_ij``."""
        E = self.prior.X @ (coeffs * self._scale)
        return DiscrepancyParams(E @ self.s, E @ self.h.T)

    def apply_covariance(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        """``Sigma_theta @ theta``."""
        return self.prior.apply_covariance(theta) - self.psi(self.D * self.psi_T(theta))

    def sample_sqrt(self, xi: DiscrepancyParams) -> DiscrepancyParams:
        """Square-root factor of ``Sigma_theta`` applied to a standard normal ``xi``."""
        prior = self.prior
        Lxi = prior.apply_L(xi)
        c = self.psi_T(Lxi) * (1.0 - np.sqrt(np.clip(1.0 - self.D, 0.0, None)))
        v = xi - prior.apply_L_T(self.psi(c))
        return prior.apply_Linv_T(v)


def posterior_factors(design: DesignSet, data: DiscrepancyData | None, prior: PriorFactor,
                      alpha_d: float = 1e-2) -> PosteriorFactors:
    """
    Design-dependent pieces of the posterior.

    ``data`` is only used for a consistency check; the covariance does not
    depend on the observed discrepancies.
    """
    if not alpha_d > 0:
        raise ValueError(f"alpha_d must be positive, got {alpha_d}")
    if data is not None and data.N != design.N:
        raise DimensionMismatch(f"{data.N} data vectors for {design.N} design points")
    design.check_independent(prior.M_z)
    # canonical column order: the factors (and the MAP) do not depend on how
    # the caller ordered the design points, bit for bit
    order = np.lexsort(design.Z[::-1])
    design = DesignSet(design.Z[:, order])
    G = build_G(design, prior)
    mu, g = sym_eig_desc(G)
    if mu[-1] <= 0 or mu[0] / mu[-1] > G_COND_MAX:
        raise IllConditionedDesign(
            f"data Gram matrix is ill-conditioned (eigenvalues {mu[0]:.3e} .. {mu[-1]:.3e})"
        )
    eg = g.sum(axis=0)
    y = design.Z @ g - np.outer(prior.z_tilde, eg)
    s = eg - y.T @ (prior.Q_z @ prior.z_tilde)
    return PosteriorFactors(mu, g, y, s, float(alpha_d), prior, design, order)


def _rhs_unscaled(factors: PosteriorFactors, data: DiscrepancyData) -> DiscrepancyParams:
    """``A^T (I (x) M_u) d`` with the data columns in canonical order."""
    prior = factors.prior
    if data.values.shape != (prior.n_u, factors.N):
        raise DimensionMismatch(f"data shape {data.values.shape}, expected ({prior.n_u}, {factors.N})")
    W = prior.M_u.matrix @ data.values[:, factors.order]
    MzZ = prior.M_z.matrix @ factors.design.Z
    return DiscrepancyParams(W.sum(axis=1), W @ MzZ.T)


def data_rhs(factors: PosteriorFactors, data: DiscrepancyData) -> DiscrepancyParams:
    """``A^T W_d d``."""
    return _rhs_unscaled(factors, data) * (1.0 / factors.alpha_d)


def map_estimate(factors: PosteriorFactors, data: DiscrepancyData) -> DiscrepancyParams:
    """
    Posterior mean ``Sigma_theta A^T W_d d``.

    ``L^{-1} A^T`` has range spanned by ``L^T Psi``, so the mean reduces to
    ``Psi (I - D) Psi^T A^T W_d d``. With ``(1 - D) / alpha_d`` evaluated as
    ``1 / (mu + alpha_d lambda)`` this stays accurate as ``alpha_d -> 0``,
    where subtracting ``Psi D Psi^T`` from the prior covariance would cancel.
    """
    rhs = _rhs_unscaled(factors, data)
    lam = factors.prior.Lambda[:, None]
    weights = lam / (factors.mu[None, :] + factors.alpha_d * lam)
    return factors.psi(weights * factors.psi_T(rhs))


def posterior_sample(factors: PosteriorFactors, map_: DiscrepancyParams,
                     noise: DiscrepancyParams | np.ndarray) -> DiscrepancyParams:
    """Posterior draw from a standard normal ``noise`` of size ``n_theta``."""
    prior = factors.prior
    if not isinstance(noise, DiscrepancyParams):
        noise = DiscrepancyParams.from_flat(noise, prior.n_u, prior.n_z)
    return map_ + factors.sample_sqrt(noise)


def standard_normal_params(rng: np.random.Generator, n_u: int, n_z: int) -> DiscrepancyParams:
    return DiscrepancyParams(rng.standard_normal(n_u), rng.standard_normal((n_u, n_z)))


def prior_pushforward_trace(prior: PriorFactor, z: np.ndarray) -> float:
    """``tr(A(z) W_theta^{-1} A(z)^T M_u)``."""
    dz = np.asarray(z, dtype=float) - prior.z_tilde
    base = np.sum(prior.trace_weights / prior.Lambda)
    return float(base * (1.0 + dz @ prior.Q_z @ dz))


def data_reduction_trace(factors: PosteriorFactors, z: np.ndarray) -> float:
    """``tr(A(z) Psi D Psi^T A(z)^T M_u)``."""
    c = factors.s + (factors.prior.M_z.matrix @ np.asarray(z, dtype=float)) @ factors.h
    T = trace_table(factors.mu, factors.prior, factors.alpha_d)
    return float(np.sum(c ** 2 * T))


def pushforward_trace(factors: PosteriorFactors, z: np.ndarray) -> float:
    """``tr(Sigma_delta(z) M_u)`` for the posterior pushforward through ``delta(z, .)``."""
    return prior_pushforward_trace(factors.prior, z) - data_reduction_trace(factors, z)


def calibrate(design: DesignSet, data: DiscrepancyData, prior: PriorFactor,
              alpha_d: float = 1e-2) -> tuple[PosteriorFactors, DiscrepancyParams]:
    factors = posterior_factors(design, data, prior, alpha_d)
    return factors, map_estimate(factors, data)
