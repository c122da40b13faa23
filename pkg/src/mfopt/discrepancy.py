"""
Affine discrepancy surrogate ``delta(z, theta) = intercept + slope @ (M_z z)``
and its structured Gaussian prior.

``theta`` is never flattened on the hot path. The prior precision is a 2x2
block operator with Kronecker blocks; it is applied through its block lower
triangular factor ``L`` (``W_theta = L L^T``) using only ``n_u``- and
``n_z``-sized linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch
from .spaces import SpdOperator, generalized_eig


@dataclass(frozen=True, eq=False)
class DiscrepancyParams:
    intercept: np.ndarray
    slope: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intercept, dtype=float)
        K = np.asarray(self.slope, dtype=float)
        if a.ndim != 1 or K.ndim != 2 or K.shape[0] != a.shape[0]:
            raise DimensionMismatch(
                f"intercept {a.shape} and slope {K.shape} are inconsistent"
            )
        object.__setattr__(self, "intercept", a)
        object.__setattr__(self, "slope", K)

    @classmethod
    def zeros(cls, n_u: int, n_z: int) -> "DiscrepancyParams":
        return cls(np.zeros(n_u), np.zeros((n_u, n_z)))

    @property
    def n_u(self) -> int:
        return self.intercept.shape[0]

    @property
    def n_z(self) -> int:
        return self.slope.shape[1]

    @property
    def size(self) -> int:
        return self.n_u * (self.n_z + 1)

    def is_zero(self) -> bool:
        return not (np.any(self.intercept) or np.any(self.slope))

    def __add__(self, other: "DiscrepancyParams") -> "DiscrepancyParams":
        return DiscrepancyParams(self.intercept + other.intercept, self.slope + other.slope)

    def __sub__(self, other: "DiscrepancyParams") -> "DiscrepancyParams":
        return DiscrepancyParams(self.intercept - other.intercept, self.slope - other.slope)

    def __mul__(self, c: float) -> "DiscrepancyParams":
        return DiscrepancyParams(c * self.intercept, c * self.slope)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dot(self, other: "DiscrepancyParams") -> float:
        return float(self.intercept @ other.intercept + np.sum(self.slope * other.slope))

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def flat(self) -> np.ndarray:
        """Stacked vector (intercept, row-major slope). For dense checks only."""
        return np.concatenate([self.intercept, self.slope.ravel()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, n_u: int, n_z: int) -> "DiscrepancyParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n_u * (n_z + 1),):
            raise DimensionMismatch(f"expected length {n_u * (n_z + 1)}, got {vec.shape}")
        return cls(vec[:n_u].copy(), vec[n_u:].reshape(n_u, n_z).copy())


def _mat(M):
    return M.matrix if isinstance(M, SpdOperator) else np.asarray(M, dtype=float)


def eval_delta(theta: DiscrepancyParams, z: np.ndarray, M_z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (theta.n_z,):
        raise DimensionMismatch(f"z has shape {z.shape}, slope expects ({theta.n_z},)")
    return theta.intercept + theta.slope @ (_mat(M_z) @ z)


def apply_A(theta: DiscrepancyParams, z: np.ndarray, M_z) -> np.ndarray:
    return eval_delta(theta, z, M_z)


def apply_A_transpose(z: np.ndarray, w: np.ndarray, M_z) -> DiscrepancyParams:
    """``A(z)^T w``: intercept ``w`` and slope ``outer(w, M_z z)``."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    Mz = _mat(M_z)
    if z.shape != (Mz.shape[0],) or w.ndim != 1:
        raise DimensionMismatch(f"bad shapes z={z.shape}, w={w.shape}")
    return DiscrepancyParams(w.copy(), np.outer(w, Mz @ z))


def dense_A(z: np.ndarray, n_u: int, M_z) -> np.ndarray:
    """Dense ``[I, I (x) z^T M_z]`` of shape ``(n_u, n_u*(n_z+1))``. Test oracle helper."""
    mz = _mat(M_z) @ np.asarray(z, dtype=float)
    eye = np.eye(n_u)
    return np.hstack([eye, np.kron(eye, mz[None, :])])


@dataclass(frozen=True, eq=False)
class PriorFactor:
    """
    Factorization of the discrepancy prior precision.

    Attributes
    ----------
    X, Lambda : ndarray
        Eigenvectors (``M_u``-orthonormal) and eigenvalues of ``W_u`` in the
        ``M_u`` inner product, so ``W_u = M_u X diag(Lambda) X^T M_u``.
    z_tilde : ndarray
        Center point of the prior (the low-fidelity optimum).
    M_u, W_u, M_z, W_z : SpdOperator
    """

    X: np.ndarray
    Lambda: np.ndarray
    z_tilde: np.ndarray
    M_u: SpdOperator
    W_u: SpdOperator
    M_z: SpdOperator
    W_z: SpdOperator

    @classmethod
    def build(cls, M_u: SpdOperator, W_u: SpdOperator, M_z: SpdOperator,
              W_z: SpdOperator, z_tilde: np.ndarray) -> "PriorFactor":
        z_tilde = np.asarray(z_tilde, dtype=float)
        if z_tilde.shape != (M_z.dim,):
            raise DimensionMismatch(f"z_tilde {z_tilde.shape} vs n_z={M_z.dim}")
        if M_u.dim != W_u.dim or M_z.dim != W_z.dim:
            raise DimensionMismatch("mass/prior operator dimensions disagree")
        eig = generalized_eig(W_u.matrix, M_u)
        return cls(eig.vectors, eig.values, z_tilde.copy(), M_u, W_u, M_z, W_z)

    @property
    def n_u(self) -> int:
        return self.M_u.dim

    @property
    def n_z(self) -> int:
        return self.M_z.dim

    @property
    def W_z_sqrt(self) -> np.ndarray:
        return self.W_z.cholesky

    # -- cached pieces --------------------------------------------------
    @cached_property
    def _P(self) -> np.ndarray:
        # top-left block of L
        return self.M_u.matrix @ (self.X * np.sqrt(self.Lambda))

    @cached_property
    def _Pinv(self) -> np.ndarray:
        return (self.X / np.sqrt(self.Lambda)).T

    @cached_property
    def mz_tilde(self) -> np.ndarray:
        return self.M_z.matrix @ self.z_tilde

    @cached_property
    def _Finv_mz(self) -> np.ndarray:
        return linalg.solve_triangular(self.W_z_sqrt, self.mz_tilde, lower=True)

    @cached_property
    def Q_z(self) -> np.ndarray:
        """``M_z W_z^{-1} M_z``."""
        Mz = self.M_z.matrix
        Q = Mz @ self.W_z.solve(Mz)
        return 0.5 * (Q + Q.T)

    @cached_property
    def trace_weights(self) -> np.ndarray:
        """``x_j^T M_u x_j`` for each prior eigenvector."""
        return np.einsum("ij,ij->j", self.X, self.M_u.matrix @ self.X)

    def _check(self, theta: DiscrepancyParams):
        if theta.n_u != self.n_u or theta.n_z != self.n_z:
            raise DimensionMismatch(
                f"theta is ({theta.n_u}, {theta.n_z}), prior is ({self.n_u}, {self.n_z})"
            )

    def _tri(self, B: np.ndarray, transpose: bool) -> np.ndarray:
        # B F^{-T} (transpose=False) or B F^{-1} (transpose=True), F = chol(W_z)
        F = self.W_z_sqrt
        if transpose:
            return linalg.solve_triangular(F, B.T, lower=True, trans="T").T
        return linalg.solve_triangular(F, B.T, lower=True).T

    # -- factor applications -------------------------------------------
    def apply_L(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        self._check(theta)
        Pa = self._P @ theta.intercept
        slope = np.outer(Pa, self.mz_tilde) + self._P @ theta.slope @ self.W_z_sqrt.T
        return DiscrepancyParams(Pa, slope)

    def apply_L_T(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        self._check(theta)
        P = self._P
        top = P.T @ (theta.intercept + theta.slope @ self.mz_tilde)
        return DiscrepancyParams(top, P.T @ theta.slope @ self.W_z_sqrt)

    def apply_Linv(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        self._check(theta)
        Pa = self._Pinv @ theta.intercept
        slope = -np.outer(Pa, self._Finv_mz) + self._tri(self._Pinv @ theta.slope, False)
        return DiscrepancyParams(Pa, slope)

    def apply_Linv_T(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        self._check(theta)
        PiT = self._Pinv.T
        KFinv = self._tri(theta.slope, True)  # K F^{-1}
        top = PiT @ (theta.intercept - theta.slope @ self._Finv_mz)
        return DiscrepancyParams(top, PiT @ KFinv)

    def apply_precision(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        return self.apply_L(self.apply_L_T(theta))

    def apply_covariance(self, theta: DiscrepancyParams) -> DiscrepancyParams:
        return self.apply_Linv_T(self.apply_Linv(theta))

    def quadratic_form(self, theta: DiscrepancyParams) -> float:
        t = self.apply_L_T(theta)
        return t.dot(t)

    def sample(self, rng: np.random.Generator) -> DiscrepancyParams:
        xi = DiscrepancyParams(rng.standard_normal(self.n_u),
                               rng.standard_normal((self.n_u, self.n_z)))
        return self.apply_Linv_T(xi)

    # -- dense oracles ----------------------------------------------------
    def dense_precision(self) -> np.ndarray:
        """The displayed block matrix, assembled densely. Test helper."""
        Wu, Wz, mz = self.W_u.matrix, self.W_z.matrix, self.mz_tilde
        top = np.hstack([Wu, np.kron(Wu, mz[None, :])])
        bot = np.hstack([np.kron(Wu, mz[:, None]), np.kron(Wu, Wz + np.outer(mz, mz))])
        return np.vstack([top, bot])

    def dense_L(self) -> np.ndarray:
        P, F, mz = self._P, self.W_z_sqrt, self.mz_tilde
        n_u, n_z = self.n_u, self.n_z
        top = np.hstack([P, np.zeros((n_u, n_u * n_z))])
        bot = np.hstack([np.kron(P, mz[:, None]), np.kron(P, F)])
        return np.vstack([top, bot])


def prior_apply_L(factor, theta):
    return factor.apply_L(theta)


def prior_apply_L_T(factor, theta):
    return factor.apply_L_T(theta)


def prior_apply_Linv(factor, theta):
    return factor.apply_Linv(theta)


def prior_apply_Linv_T(factor, theta):
    return factor.apply_Linv_T(theta)


def prior_quadratic_form(factor: PriorFactor, theta: DiscrepancyParams) -> float:
    """``theta^T W_theta theta`` as ``||L^T theta||^2``."""
    return factor.quadratic_form(theta)
