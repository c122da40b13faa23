"""
Tracking-type optimization problems with an additive discrepancy correction.

Both testbeds minimize

    J(u, z) = 1/2 ||u - target||_{M_u}^2 + gamma/2 ||z||_{M_z}^2

and the corrected low-fidelity objective is ``J(S~(z) + delta(z, theta), z)``.
Subclasses supply the low-fidelity state map together with its tangent,
adjoint and second-order adjoint actions; the composite derivatives are
assembled here once for both problems.
"""

from __future__ import annotations

import abc
from typing import Any

import numpy as np

from ..discrepancy import DiscrepancyParams, eval_delta
from ..spaces import Grid1D, SpdOperator


class OptProblem(abc.ABC):
    """
    Low-fidelity optimization problem paired with a high-fidelity solver.

    Implementations must be reentrant: no call may mutate state read by
    another call, so posterior-sample updates can run concurrently.
    """

    grid_u: Grid1D
    grid_z: Grid1D
    M_u: SpdOperator
    M_z: SpdOperator
    target: np.ndarray
    gamma_reg: float

    @property
    def n_u(self) -> int:
        return self.M_u.dim

    @property
    def n_z(self) -> int:
        return self.M_z.dim

    # -- to implement --------------------------------------------------
    @abc.abstractmethod
    def hifi_solve(self, z: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def lofi_state(self, z: np.ndarray) -> Any:
        """Solve the low-fidelity model; returns an opaque state for the methods below."""

    @abc.abstractmethod
    def state_vector(self, state) -> np.ndarray:
        ...

    @abc.abstractmethod
    def jvp(self, state, v: np.ndarray) -> np.ndarray:
        """``S~'(z) v`` for ``v`` of shape (n_z,) or (n_z, k)."""

    @abc.abstractmethod
    def vjp(self, state, w: np.ndarray) -> np.ndarray:
        """``S~'(z)^T w``."""

    @abc.abstractmethod
    def second_vjp(self, state, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``(S~''(z)[v])^T w`` for fixed ``w``; ``v`` may be (n_z, k)."""

    def initial_guess(self) -> np.ndarray:
        return np.zeros(self.n_z)

    # -- objective --------------------------------------------------------
    def lofi_solve(self, z: np.ndarray) -> np.ndarray:
        return self.state_vector(self.lofi_state(z))

    def objective(self, u: np.ndarray, z: np.ndarray) -> float:
        r = u - self.target
        return 0.5 * self.M_u.norm_sq(r) + 0.5 * self.gamma_reg * self.M_z.norm_sq(z)

    def hifi_objective(self, z: np.ndarray) -> float:
        return self.objective(self.hifi_solve(z), z)

    def discrepancy(self, z: np.ndarray) -> np.ndarray:
        return self.hifi_solve(z) - self.lofi_solve(z)

    def _zero_theta(self) -> DiscrepancyParams:
        return DiscrepancyParams.zeros(self.n_u, self.n_z)

    def composite_objective(self, z: np.ndarray, theta: DiscrepancyParams | None = None) -> float:
        theta = self._zero_theta() if theta is None else theta
        w = self.lofi_solve(z) + eval_delta(theta, z, self.M_z)
        return self.objective(w, z)

    # -- derivatives ------------------------------------------------------
    def _residual(self, state, z, theta):
        w = self.state_vector(state) + eval_delta(theta, z, self.M_z)
        return self.M_u.matrix @ (w - self.target)

    def composite_gradient(self, z: np.ndarray, theta: DiscrepancyParams | None = None,
                           state=None) -> np.ndarray:
        theta = self._zero_theta() if theta is None else theta
        state = self.lofi_state(z) if state is None else state
        Mr = self._residual(state, z, theta)
        Mz = self.M_z.matrix
        return self.vjp(state, Mr) + Mz @ (theta.slope.T @ Mr) + self.gamma_reg * (Mz @ z)

    def composite_hvp(self, z: np.ndarray, theta: DiscrepancyParams | None, v: np.ndarray,
                      state=None) -> np.ndarray:
        """Hessian of the corrected objective in ``z`` applied to ``v`` ((n_z,) or (n_z, k))."""
        theta = self._zero_theta() if theta is None else theta
        state = self.lofi_state(z) if state is None else state
        Mr = self._residual(state, z, theta)
        Mz, Mu = self.M_z.matrix, self.M_u.matrix
        K = theta.slope
        Czv = K @ (Mz @ v)
        Mw_dot = Mu @ (self.jvp(state, v) + Czv)
        return (self.vjp(state, Mw_dot) + self.second_vjp(state, v, Mr)
                + Mz @ (K.T @ Mw_dot) + self.gamma_reg * (Mz @ v))

    def composite_hessian(self, z: np.ndarray, theta: DiscrepancyParams | None = None,
                          basis: np.ndarray | None = None, state=None) -> np.ndarray:
        basis = np.eye(self.n_z) if basis is None else basis
        return self.composite_hvp(z, theta, basis, state=state)

    def mixed_apply(self, z: np.ndarray, theta: DiscrepancyParams | None,
                    theta_dir: DiscrepancyParams, state=None) -> np.ndarray:
        """Derivative of ``composite_gradient(z, .)`` at ``theta`` along ``theta_dir``."""
        theta = self._zero_theta() if theta is None else theta
        state = self.lofi_state(z) if state is None else state
        Mr = self._residual(state, z, theta)
        Mz, Mu = self.M_z.matrix, self.M_u.matrix
        M_delta_dot = Mu @ eval_delta(theta_dir, z, Mz)
        return (self.vjp(state, M_delta_dot) + Mz @ (theta_dir.slope.T @ Mr)
                + Mz @ (theta.slope.T @ M_delta_dot))
