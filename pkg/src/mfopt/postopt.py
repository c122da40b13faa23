"""
Post-optimality updates of the low-fidelity optimum.

The update is restricted to ``z_b = z~ + V b`` where the columns of ``V`` are
the leading ``W_z``-orthonormal generalized eigenvectors of the low-fidelity
Hessian. Along ``theta(t) = t * theta_bar`` the projected optimum ``b*(t)`` is
traced with an Euler predictor and Newton corrector; a single Euler step with
``dt = 1`` is the classical linearized update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from .discrepancy import DiscrepancyParams
from .errors import CorrectorDivergence, IndefiniteHessian, NoConvergence
from .problems.base import OptProblem
from .spaces import SpdOperator, generalized_eig

log = logging.getLogger(__name__)

CorrectorMode = Literal["iterate", "single", "none"]


def _dual_norm(g: np.ndarray, M: SpdOperator) -> float:
    return float(np.sqrt(max(g @ M.solve(g), 0.0)))


def solve_lowfi(problem: OptProblem, z0: np.ndarray | None = None, tol: float = 1e-9,
                max_iter: int = 50, W_z: SpdOperator | None = None,
                theta: DiscrepancyParams | None = None) -> np.ndarray:
    """
    Newton's method with Armijo backtracking for the (corrected) low-fidelity problem.

    Convergence is declared on the ``M_z^{-1}`` dual norm of the gradient. An
    indefinite Hessian is shifted by ``tau * W_z`` (``tau`` grown by 10 from
    1e-8) for that step only.
    """
    z = problem.initial_guess() if z0 is None else np.array(z0, dtype=float)
    W = problem.M_z if W_z is None else W_z
    Mz = problem.M_z
    for it in range(max_iter):
        state = problem.lofi_state(z)
        g = problem.composite_gradient(z, theta, state=state)
        gn = _dual_norm(g, Mz)
        if gn <= tol:
            return z
        H = problem.composite_hessian(z, theta, state=state)
        H = 0.5 * (H + H.T)
        tau = 0.0
        while True:
            try:
                c = linalg.cho_factor(H + tau * W.matrix)
                break
            except linalg.LinAlgError:
                tau = 1e-8 if tau == 0.0 else 10.0 * tau
                if tau > 1e12:
                    raise IndefiniteHessian("could not regularize the Hessian")
        if tau > 0:
            log.info("solve_lowfi: indefinite Hessian at iteration %d, shift %.1e", it, tau)
        dz = -linalg.cho_solve(c, g)
        f0 = problem.composite_objective(z, theta)
        slope = g @ dz
        step = 1.0
        # once the predicted decrease is below the round-off in f the Armijo
        # test is noise; the full step is taken
        while step > 1e-12 and -slope > 1e-13 * max(abs(f0), 1.0):
            z_new = z + step * dz
            try:
                f_new = problem.composite_objective(z_new, theta)
            except NoConvergence:
                f_new = np.inf
            if f_new <= f0 + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            z_new = z + dz
        z = z_new
    state = problem.lofi_state(z)
    gn = _dual_norm(problem.composite_gradient(z, theta, state=state), Mz)
    if gn <= tol:
        return z
    raise NoConvergence(f"low-fidelity Newton stalled (gradient {gn:.3e})", residual=gn,
                        iterations=max_iter)


@dataclass(frozen=True, eq=False)
class Projector:
    V: np.ndarray
    rho: np.ndarray
    W_z: SpdOperator
    spectrum: np.ndarray | None = None

    @property
    def r(self) -> int:
        return self.V.shape[1]

    def coords(self, z_minus_center: np.ndarray) -> np.ndarray:
        """``V^T W_z (.)``, the coefficients of the projection."""
        return self.V.T @ (self.W_z.matrix @ z_minus_center)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``P v = V V^T W_z v``."""
        return self.V @ self.coords(v)


def auto_rank(rho: np.ndarray, rel_tol: float = 1e-3, cap: int = 25) -> int:
    """Smallest r with ``rho[r] <= rel_tol * rho[0]`` (0-based), capped."""
    below = np.nonzero(rho <= rel_tol * rho[0])[0]
    r = int(below[0]) if below.size else len(rho)
    return max(1, min(r, cap))


def hessian_projector(problem: OptProblem, z_tilde: np.ndarray, W_z: SpdOperator,
                      r: int | None = None, rel_tol: float = 1e-3, cap: int = 25) -> Projector:
    """Leading generalized eigenpairs of the low-fidelity Hessian at ``z_tilde``."""
    H = problem.composite_hessian(z_tilde)
    H = 0.5 * (H + H.T)
    full = generalized_eig(H, W_z)
    if r is None:
        r = auto_rank(full.values, rel_tol, cap)
    if not 1 <= r <= len(full.values):
        raise ValueError(f"rank {r} out of range")
    rho, V = full.values[:r], full.vectors[:, :r]
    if np.any(rho <= 0):
        raise IndefiniteHessian(f"retained Hessian eigenvalue {rho.min():.3e} is not positive")
    return Projector(V=V, rho=rho, W_z=W_z, spectrum=full.values)


# -- projected derivatives ---------------------------------------------------

def _projected(problem, projector, z_tilde, b, theta, want_grad=True, want_hess=True,
               mixed_dir=None):
    V = projector.V
    z = z_tilde + V @ b
    state = problem.lofi_state(z)
    out = {}
    if want_grad:
        out["grad"] = V.T @ problem.composite_gradient(z, theta, state=state)
    if want_hess:
        Hb = V.T @ problem.composite_hvp(z, theta, V, state=state)
        out["hess"] = 0.5 * (Hb + Hb.T)
    if mixed_dir is not None:
        out["mixed"] = V.T @ problem.mixed_apply(z, theta, mixed_dir, state=state)
    return out


def _spd_solve(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(A), rhs)
    except linalg.LinAlgError as exc:
        raise IndefiniteHessian(f"projected Hessian is not positive definite ({what})") from exc


def linear_update(projector: Projector, problem: OptProblem, z_tilde: np.ndarray,
                  theta: DiscrepancyParams) -> np.ndarray:
    """``z~ - P H^{-1} B theta`` computed in the projected coordinates."""
    d = _projected(problem, projector, z_tilde, np.zeros(projector.r), None,
                   want_grad=False, mixed_dir=theta)
    db = -_spd_solve(d["hess"], d["mixed"], "linear update")
    return z_tilde + projector.V @ db


@dataclass
class ContinuationResult:
    b_bar: np.ndarray
    z_bar: np.ndarray
    trajectory: list = field(default_factory=list)          # (t_n, b_n)
    corrector_residuals: list = field(default_factory=list)
    corrector_iterations: list = field(default_factory=list)


def continuation_update(problem: OptProblem, projector: Projector, z_tilde: np.ndarray,
                        theta_bar: DiscrepancyParams, n_steps: int = 3,
                        corrector_tol: float = 1e-10, corrector: CorrectorMode = "iterate",
                        max_corrector_iter: int = 10) -> ContinuationResult:
    """
    Euler-Newton continuation of the projected optimum from ``theta = 0`` to ``theta_bar``.

    ``corrector="iterate"`` repeats Newton corrections until the projected
    gradient norm is at most ``corrector_tol``; ``"single"`` applies exactly one
    correction per step; ``"none"`` is plain forward Euler.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    dt = 1.0 / n_steps
    b = np.zeros(projector.r)
    res = ContinuationResult(b_bar=b, z_bar=z_tilde.copy(), trajectory=[(0.0, b.copy())])
    for n in range(n_steps):
        theta_n = theta_bar * (n * dt)
        d = _projected(problem, projector, z_tilde, b, theta_n, want_grad=False, mixed_dir=theta_bar)
        b = b - dt * _spd_solve(d["hess"], d["mixed"], f"predictor, step {n}")
        t_next = (n + 1) * dt
        theta_next = theta_bar * t_next
        n_corr = 0
        if corrector == "none":
            gnorm = float("nan")
        else:
            d = _projected(problem, projector, z_tilde, b, theta_next)
            gnorm = float(np.linalg.norm(d["grad"]))
            growth = 0
            while True:
                if corrector == "iterate" and gnorm <= corrector_tol:
                    break
                if corrector == "single" and n_corr == 1:
                    break
                if n_corr >= max_corrector_iter:
                    raise NoConvergence(
                        f"corrector did not reach tolerance at step {n} (gradient {gnorm:.3e})",
                        residual=gnorm, iterations=n_corr)
                b = b - _spd_solve(d["hess"], d["grad"], f"corrector, step {n}")
                n_corr += 1
                d = _projected(problem, projector, z_tilde, b, theta_next)
                g_new = float(np.linalg.norm(d["grad"]))
                growth = growth + 1 if g_new > gnorm else 0
                gnorm = g_new
                if growth >= 3 or not np.isfinite(gnorm):
                    raise CorrectorDivergence(
                        f"corrector diverging at step {n}; increase n_steps",
                        residual=gnorm, iterations=n_corr)
        res.trajectory.append((t_next, b.copy()))
        res.corrector_residuals.append(gnorm)
        res.corrector_iterations.append(n_corr)
    res.b_bar = b
    res.z_bar = z_tilde + projector.V @ b
    return res


def pushforward_sample_update(problem, projector, z_tilde, theta_sample, n_steps=3,
                              corrector_tol=1e-10, corrector: CorrectorMode = "iterate"):
    """Continuation update driven by a posterior sample instead of the MAP point."""
    return continuation_update(problem, projector, z_tilde, theta_sample, n_steps,
                               corrector_tol, corrector)


def projected_newton(problem: OptProblem, projector: Projector, z_tilde: np.ndarray,
                     theta: DiscrepancyParams | None, b0: np.ndarray | None = None,
                     tol: float = 1e-11, max_iter: int = 50) -> np.ndarray:
    """
    Direct minimization of ``J(z~ + V b, theta)`` over ``b`` by damped Newton.

    Independent of the continuation path; used as the reference optimum.
    """
    b = np.zeros(projector.r) if b0 is None else np.array(b0, dtype=float)
    V = projector.V
    for _ in range(max_iter):
        d = _projected(problem, projector, z_tilde, b, theta)
        gn = np.linalg.norm(d["grad"])
        if gn <= tol:
            return b
        Hb = d["hess"]
        tau = 0.0
        while True:
            try:
                c = linalg.cho_factor(Hb + tau * np.eye(len(b)))
                break
            except linalg.LinAlgError:
                tau = max(1e-8 * np.abs(Hb).max(), 10 * tau)
        db = -linalg.cho_solve(c, d["grad"])
        f0 = problem.composite_objective(z_tilde + V @ b, theta)
        step = 1.0
        while step > 1e-12:
            try:
                f1 = problem.composite_objective(z_tilde + V @ (b + step * db), theta)
            except NoConvergence:
                f1 = np.inf
            if f1 <= f0 + 1e-4 * step * (d["grad"] @ db):
                break
            step *= 0.5
        else:
            step = 1.0
        b = b + step * db
    d = _projected(problem, projector, z_tilde, b, theta, want_hess=False)
    if np.linalg.norm(d["grad"]) <= tol:
        return b
    raise NoConvergence("projected Newton did not converge",
                        residual=float(np.linalg.norm(d["grad"])), iterations=max_iter)
