"""
Control of a steady nonlinear diffusion-reaction equation,

    -kappa u'' + R(u) = z  on (0, 1),   kappa u' = 0 at x = 0, 1,

with heterogeneous reaction ``(1 + 0.7 sin(2 pi x)) u^2`` (high fidelity) or
homogeneous ``u^2`` (low fidelity). P1 Galerkin in space; the nonlinearity is
interpolated nodally, ``R(u) ~ M (r * u^2)``, which keeps the scheme second
order and the Jacobian ``kappa K + M diag(2 r u)`` cheap.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from ..errors import NewtonDivergence
from ..spaces import Grid1D, SpdOperator, build_grid, mass_matrix, stiffness_matrix
from .base import OptProblem

Fidelity = Literal["high", "low"]


def dr_target(x: np.ndarray) -> np.ndarray:
    return 20.0 * (x + 0.5) * (1.3 - x)


def reaction_field(x: np.ndarray, fidelity: Fidelity) -> np.ndarray:
    if fidelity == "high":
        return 1.0 + 0.7 * np.sin(2.0 * np.pi * x)
    if fidelity == "low":
        return np.ones_like(x)
    raise ValueError(f"unknown fidelity {fidelity!r}")


@dataclass(frozen=True)
class DRState:
    u: np.ndarray
    jac_lu: tuple
    r: np.ndarray


@dataclass(frozen=True, eq=False)
class DiffusionReactionProblem(OptProblem):
    n: int = 65
    kappa: float = 0.05
    gamma_reg: float = 1e-3
    newton_tol: float = 1e-11
    newton_maxiter: int = 50
    # which model the composite objective is built on; "high" gives the
    # true high-fidelity optimization problem (used only as a test oracle)
    opt_fidelity: Fidelity = "low"
    grid: Grid1D = field(init=False, repr=False)

    def __post_init__(self):
        if not self.kappa > 0 or not self.gamma_reg > 0:
            raise ValueError("kappa and gamma_reg must be positive")
        g = build_grid(self.n, 0.0, 1.0)
        M = mass_matrix(g)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", stiffness_matrix(g))
        object.__setattr__(self, "target", dr_target(g.nodes))

    # shared grid for state and control
    @property
    def grid_u(self) -> Grid1D:
        return self.grid

    @property
    def grid_z(self) -> Grid1D:
        return self.grid

    @property
    def M_u(self) -> SpdOperator:
        return self.M

    @property
    def M_z(self) -> SpdOperator:
        return self.M

    def with_opt_fidelity(self, fidelity: Fidelity) -> "DiffusionReactionProblem":
        return dataclasses.replace(self, opt_fidelity=fidelity)

    def initial_guess(self) -> np.ndarray:
        return self.target ** 2

    # -- forward solver ----------------------------------------------------
    def _dual_norm(self, F: np.ndarray) -> float:
        return float(np.sqrt(max(F @ self.M.solve(F), 0.0)))

    def solve_state(self, z: np.ndarray, fidelity: Fidelity, u0: np.ndarray | None = None) -> DRState:
        """Damped Newton for ``kappa K u + M (r u^2) = M z``."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,) or not np.all(np.isfinite(z)):
            raise ValueError("control must be a finite vector on the grid")
        r = reaction_field(self.grid.nodes, fidelity)
        Mm, K = self.M.matrix, self.K
        Mz = Mm @ z
        if u0 is None:
            zbar = max(z @ self.M.matrix.sum(axis=1) / self.grid.length, 1e-8)
            u0 = np.sqrt(np.maximum(z, 1e-2 * zbar) / r)
        u = np.array(u0, dtype=float)

        def resid(u):
            return self.kappa * (K @ u) + Mm @ (r * u * u) - Mz

        F = resid(u)
        fn = self._dual_norm(F)
        tol = self.newton_tol * max(1.0, self._dual_norm(Mz))
        for it in range(self.newton_maxiter):
            if fn <= tol:
                break
            J = self.kappa * K + Mm * (2.0 * r * u)[None, :]
            du = -linalg.solve(J, F)
            step = 1.0
            while True:
                u_new = u + step * du
                F_new = resid(u_new)
                fn_new = self._dual_norm(F_new)
                if fn_new < (1.0 - 1e-4 * step) * fn or step < 1e-10:
                    break
                step *= 0.5
            if step < 1e-10:
                raise NewtonDivergence("line search failed in state solve", residual=fn, iterations=it)
            u, F, fn = u_new, F_new, fn_new
        else:
            if fn > tol:
                raise NewtonDivergence(f"state solve did not converge (residual {fn:.3e})",
                                       residual=fn, iterations=self.newton_maxiter)
        J = self.kappa * K + Mm * (2.0 * r * u)[None, :]
        return DRState(u=u, jac_lu=linalg.lu_factor(J), r=r)

    def solve(self, z: np.ndarray, fidelity: Fidelity) -> np.ndarray:
        return self.solve_state(z, fidelity).u

    def hifi_solve(self, z):
        return self.solve(z, "high")

    # -- OptProblem plumbing ------------------------------------------------
    def lofi_state(self, z):
        return self.solve_state(z, self.opt_fidelity)

    def state_vector(self, state: DRState) -> np.ndarray:
        return state.u

    def jvp(self, state: DRState, v):
        return linalg.lu_solve(state.jac_lu, self.M.matrix @ v)

    def vjp(self, state: DRState, w):
        return self.M.matrix @ linalg.lu_solve(state.jac_lu, w, trans=1)

    def second_vjp(self, state: DRState, v, w):
        lam = linalg.lu_solve(state.jac_lu, w, trans=1)
        u_dot = self.jvp(state, v)
        Mlam = self.M.matrix @ lam
        if u_dot.ndim == 1:
            src = 2.0 * state.r * u_dot * Mlam
        else:
            src = (2.0 * state.r * Mlam)[:, None] * u_dot
        return -self.vjp(state, src)


def dr_solve(problem: DiffusionReactionProblem, z: np.ndarray, fidelity: Fidelity) -> np.ndarray:
    return problem.solve(z, fidelity)
