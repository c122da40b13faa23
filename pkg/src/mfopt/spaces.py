"""
1D piecewise-linear finite element spaces.

Equispaced grids, consistent mass matrices, Neumann stiffness matrices and
the ``gamma*K + beta*M`` prior operators, plus a dense generalized symmetric
eigensolver used for both the Hessian projector and the prior factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import EigensolverFailure


@dataclass(frozen=True)
class Grid1D:
    n: int
    domain: tuple[float, float]

    def __post_init__(self):
        a, b = self.domain
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got n={self.n}")
        if not a < b:
            raise ValueError(f"empty interval ({a}, {b})")

    @cached_property
    def nodes(self) -> np.ndarray:
        a, b = self.domain
        x = np.linspace(a, b, self.n)
        x[0], x[-1] = a, b
        return x

    @property
    def h(self) -> float:
        a, b = self.domain
        return (b - a) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]


def build_grid(n: int, a: float = 0.0, b: float = 1.0) -> Grid1D:
    return Grid1D(n, (float(a), float(b)))


@dataclass(frozen=True, eq=False)
class SpdOperator:
    """Dense SPD matrix with its lower Cholesky factor cached at construction."""

    matrix: np.ndarray
    cholesky: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        scale = max(np.abs(A).max(), np.finfo(float).tiny)
        if np.abs(A - A.T).max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric")
        A = 0.5 * (A + A.T)
        try:
            C = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("matrix is not positive definite") from exc
        A.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "cholesky", C)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.cholesky, True), rhs)

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.dim))
        inv = 0.5 * (inv + inv.T)
        inv.setflags(write=False)
        return inv

    def norm_sq(self, v: np.ndarray) -> float:
        return float(v @ (self.matrix @ v))


def mass_matrix(grid: Grid1D) -> SpdOperator:
    """Consistent P1 mass matrix on ``grid``."""
    n, h = grid.n, grid.h
    main = np.full(n, 2.0 * h / 3.0)
    main[[0, -1]] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return SpdOperator(np.diag(main) + np.diag(off, 1) + np.diag(off, -1))


def stiffness_matrix(grid: Grid1D) -> np.ndarray:
    """P1 stiffness matrix with natural (Neumann) boundaries. Singular: K @ 1 = 0."""
    n, h = grid.n, grid.h
    main = np.full(n, 2.0 / h)
    main[[0, -1]] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return np.diag(main) + np.diag(off, 1) + np.diag(off, -1)


def laplacian_prior(grid: Grid1D, gamma: float = 0.1, beta: float = 1.0) -> SpdOperator:
    """Precision operator ``gamma*K + beta*M``."""
    if not (gamma > 0 and beta > 0):
        raise ValueError(f"prior weights must be positive, got gamma={gamma}, beta={beta}")
    return SpdOperator(gamma * stiffness_matrix(grid) + beta * mass_matrix(grid).matrix)


@dataclass(frozen=True, eq=False)
class GenEigPairs:
    values: np.ndarray
    vectors: np.ndarray
    metric: SpdOperator

    def __len__(self):
        return len(self.values)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def generalized_eig(A: np.ndarray, M: SpdOperator, r: int | None = None) -> GenEigPairs:
    """
    Leading ``r`` eigenpairs of the pencil ``A v = rho M v``.

    Solved by reducing with the Cholesky factor of ``M`` to a standard
    symmetric problem. Eigenvectors are ``M``-orthonormal, values are sorted
    in descending order, and each vector is signed so its largest-magnitude
    entry is positive.
    """
    A = np.asarray(A, dtype=float)
    n = M.dim
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match metric dimension {n}")
    r = n if r is None else int(r)
    if not 1 <= r <= n:
        raise ValueError(f"rank must be in [1, {n}], got {r}")
    A = 0.5 * (A + A.T)
    C = M.cholesky
    try:
        tmp = linalg.solve_triangular(C, A, lower=True)
        S = linalg.solve_triangular(C, tmp.T, lower=True)
        S = 0.5 * (S + S.T)
        w, U = linalg.eigh(S, subset_by_index=[n - r, n - 1])
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise EigensolverFailure("non-finite eigenvalues")
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    V = linalg.solve_triangular(C.T, U, lower=False)
    V = _fix_signs(V)
    return GenEigPairs(values=w, vectors=V, metric=M)
