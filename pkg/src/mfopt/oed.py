"""
Sequential A-optimal acquisition of high-fidelity evaluation points.

New points are parameterized as ``z = z~ + V eta`` inside the projector range.
In these coordinates the data Gram matrix is ``G = e e^T + E^T Gamma E``
(``E`` holds the ``eta`` of every point, ``Gamma = V^T M_z W_z^{-1} M_z V``)
and the expected data-driven variance reduction around ``z_bar_k`` reads

    Psi~(eta) = sum_i p_i T(mu_i),
    p_i = (e^T g_i + a^T E g_i)^2 + alpha_k (E g_i)^T Gamma2 (E g_i),

with ``(mu_i, g_i)`` the eigenpairs of ``G``, ``a = V^T M_z W_z^{-1} M_z (z_bar_k - z~)``,
``Gamma2 = V^T (M_z W_z^{-1} M_z) W_z^{-1} (M_z W_z^{-1} M_z) V`` and ``T`` the
prior trace table. Maximizing ``Psi~`` minimizes the expected posterior
pushforward variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .calibration import G_COND_MAX, sym_eig_desc
from .discrepancy import PriorFactor
from .errors import IllConditionedDesign
from .postopt import Projector
from .spaces import SpdOperator

log = logging.getLogger(__name__)


def trace_ratio(W_z: SpdOperator, M_z: SpdOperator) -> float:
    """``tr(W_z^{-1} M_z)``."""
    return float(np.trace(W_z.solve(M_z.matrix)))


def alpha_k(z_bar_k: np.ndarray, z_bar_prev: np.ndarray, W_z: SpdOperator, M_z: SpdOperator,
            alpha_min: float = 0.0, tr_ratio: float | None = None) -> float:
    """Neighborhood scale ``||z_bar_k - z_bar_prev||_{M_z}^2 / tr(W_z^{-1} M_z)``, floored."""
    tr = trace_ratio(W_z, M_z) if tr_ratio is None else tr_ratio
    dz = np.asarray(z_bar_k, dtype=float) - np.asarray(z_bar_prev, dtype=float)
    return max(M_z.norm_sq(dz) / tr, alpha_min)


@dataclass(frozen=True, eq=False)
class DesignParams:
    eta: np.ndarray          # (r, p)
    z_tilde: np.ndarray
    V: np.ndarray
    k: int = 0

    @property
    def p(self) -> int:
        return self.eta.shape[1]

    def points(self) -> list[np.ndarray]:
        Z = self.z_tilde[:, None] + self.V @ self.eta
        return [Z[:, i] for i in range(Z.shape[1])]


@dataclass(frozen=True, eq=False)
class CriterionWorkspace:
    """Design-independent quantities for one acquisition round."""

    gram: np.ndarray         # Gamma, (r, r)
    gram2: np.ndarray        # Gamma2, (r, r)
    a: np.ndarray            # (r,)
    eta_existing: np.ndarray  # (r, k)
    center: np.ndarray       # b_bar_k in eta coordinates
    alpha_oed: float
    alpha_d: float
    lam: np.ndarray
    trace_weights: np.ndarray
    z_tilde: np.ndarray
    V: np.ndarray
    gap_tol: float = 1e-8
    fd_step: float = 1e-6

    @property
    def r(self) -> int:
        return self.gram.shape[0]

    @property
    def k(self) -> int:
        return self.eta_existing.shape[1]

    def T(self, mu):
        lam, m = self.lam, self.trace_weights
        mu = np.atleast_1d(mu)
        return np.sum(m / (lam * (mu[:, None] + self.alpha_d * lam)), axis=1)

    def dT(self, mu):
        lam, m = self.lam, self.trace_weights
        mu = np.atleast_1d(mu)
        return -np.sum(m / (lam * (mu[:, None] + self.alpha_d * lam) ** 2), axis=1)

    def with_alpha(self, alpha_oed: float) -> "CriterionWorkspace":
        return replace(self, alpha_oed=float(alpha_oed))


def build_workspace(prior: PriorFactor, projector: Projector, z_bar_k: np.ndarray,
                    existing: np.ndarray | list, alpha_oed: float,
                    alpha_d: float) -> CriterionWorkspace:
    """
    Offline setup for the criterion around ``z_bar_k``.

    ``existing`` holds the already-evaluated points (columns or list); they
    must lie in ``z~ + range(V)``.
    """
    V, W_z = projector.V, projector.W_z
    Q = prior.Q_z
    QV = Q @ V
    gram = V.T @ QV
    WQV = W_z.solve(QV)
    gram2 = QV.T @ WQV
    a = QV.T @ (np.asarray(z_bar_k) - prior.z_tilde)
    if isinstance(existing, list):
        Z = np.column_stack(existing) if existing else np.zeros((V.shape[0], 0))
    else:
        Z = np.asarray(existing, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    eta_ex = projector.coords(Z - prior.z_tilde[:, None])
    resid = Z - prior.z_tilde[:, None] - V @ eta_ex
    scale = max(np.abs(Z).max(initial=0.0), 1.0)
    if Z.size and np.abs(resid).max() > 1e-8 * scale:
        raise ValueError("existing design points are not in the projected affine subspace")
    center = projector.coords(np.asarray(z_bar_k) - prior.z_tilde)
    return CriterionWorkspace(
        gram=0.5 * (gram + gram.T), gram2=0.5 * (gram2 + gram2.T), a=a,
        eta_existing=eta_ex, center=center, alpha_oed=float(alpha_oed),
        alpha_d=float(alpha_d), lam=prior.Lambda, trace_weights=prior.trace_weights,
        z_tilde=prior.z_tilde, V=V,
    )


def _eta_array(eta) -> np.ndarray:
    return eta.eta if isinstance(eta, DesignParams) else np.asarray(eta, dtype=float)


def _eig_G(E: np.ndarray, ws: CriterionWorkspace):
    G = 1.0 + E.T @ ws.gram @ E
    mu, g = sym_eig_desc(0.5 * (G + G.T))
    if mu[-1] <= 0 or mu[0] / mu[-1] > G_COND_MAX:
        raise IllConditionedDesign(f"augmented design is rank deficient (mu_min={mu[-1]:.3e})")
    return mu, g


def criterion(eta, ws: CriterionWorkspace, prior: PriorFactor | None = None) -> float:
    """Expected variance reduction ``Psi~`` (to be maximized) for new points ``eta`` (r, p)."""
    E = np.hstack([ws.eta_existing, _eta_array(eta)])
    mu, g = _eig_G(E, ws)
    Eg = E @ g
    c = g.sum(axis=0) + ws.a @ Eg
    p = c ** 2 + ws.alpha_oed * np.einsum("ri,ri->i", Eg, ws.gram2 @ Eg)
    return float(p @ ws.T(mu))


def _criterion_grad_fd(eta, ws):
    eta = np.array(eta, dtype=float)
    grad = np.zeros_like(eta)
    h = ws.fd_step
    for idx in np.ndindex(*eta.shape):
        e1, e2 = eta.copy(), eta.copy()
        e1[idx] += h
        e2[idx] -= h
        grad[idx] = (criterion(e1, ws) - criterion(e2, ws)) / (2 * h)
    return grad


def criterion_grad(eta, ws: CriterionWorkspace, prior: PriorFactor | None = None,
                   force_fd: bool = False) -> np.ndarray:
    """
    Gradient of ``Psi~`` with respect to the new points' coordinates, shape (r, p).

    Uses first-order perturbation of the simple eigenpairs of ``G``; falls
    back to central differences when two eigenvalues are closer than
    ``gap_tol * mu_1``.
    """
    eta = _eta_array(eta)
    E = np.hstack([ws.eta_existing, eta])
    mu, g = _eig_G(E, ws)
    N = len(mu)
    if force_fd or (N > 1 and np.min(-np.diff(mu)) < ws.gap_tol * mu[0]):
        return _criterion_grad_fd(eta, ws)

    Eg = E @ g                      # (r, N)
    R = ws.gram @ Eg                # R[k, i] = (Gamma E g_i)_k
    R2 = ws.gram2 @ Eg
    S2 = Eg.T @ R2                  # (N, N)
    c = g.sum(axis=0) + ws.a @ Eg
    p = c ** 2 + ws.alpha_oed * np.diag(S2)
    T, dT = ws.T(mu), ws.dT(mu)

    diff = mu[:, None] - mu[None, :]
    np.fill_diagonal(diff, np.inf)
    F = 1.0 / diff                  # F[i, j] = 1/(mu_i - mu_j), zero on diagonal

    cols = np.arange(ws.k, N)
    gc = g[cols]                    # (p, N): gc[l, i] = g_i[col_l]
    # beta[k, l, i, j] = R[k,i] g_j[col_l] + g_i[col_l] R[k,j]
    beta = R[:, None, :, None] * gc[None, :, None, :] + gc[None, :, :, None] * R[:, None, None, :]
    Fb = beta * F[None, None]
    dmu = 2.0 * gc[None, :, :] * R[:, None, :]                       # (r, p, N)
    dc = np.einsum("klij,j->kli", Fb, c) + ws.a[:, None, None] * gc[None]
    dq = R2[:, None, :] * gc[None] + np.einsum("klij,ij->kli", Fb, S2)
    dp = 2.0 * c * dc + 2.0 * ws.alpha_oed * dq
    return np.einsum("kli,i->kl", dp, T) + np.einsum("kli,i->kl", dmu, p * dT)


# -- optimization -----------------------------------------------------------

def _project_ball(eta: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    d = eta - center[:, None]
    nrm = np.linalg.norm(d, axis=0)
    scale = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)
    return center[:, None] + d * scale


def _safe_criterion(eta, ws):
    try:
        return criterion(eta, ws)
    except IllConditionedDesign:
        return -np.inf


def _ascent(eta, ws, radius, max_iter, step_tol):
    f = _safe_criterion(eta, ws)
    if not np.isfinite(f):
        return eta, f
    step = None
    for _ in range(max_iter):
        try:
            grad = criterion_grad(eta, ws)
        except IllConditionedDesign:
            break
        gn = np.linalg.norm(grad)
        if gn == 0:
            break
        step = radius / gn if step is None else 2.0 * step
        accepted = False
        while True:
            cand = _project_ball(eta + step * grad, ws.center, radius)
            move = np.linalg.norm(cand - eta)
            if move < step_tol:
                break
            fc = _safe_criterion(cand, ws)
            if fc >= f + 1e-4 * (grad.ravel() @ (cand - eta).ravel()):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        eta, f = cand, fc
        if move < step_tol:
            break
    return eta, f


def optimize_design(ws: CriterionWorkspace, prior: PriorFactor | None, p: int,
                    b_bar_k: np.ndarray | None = None, n_starts: int = 8,
                    rng: np.random.Generator | None = None, max_iter: int = 200,
                    step_tol: float = 1e-8) -> DesignParams:
    """
    Multi-start projected gradient ascent of ``Psi~`` over ``p`` new points,
    each constrained to ``||eta^l - b_bar_k||^2 <= alpha_k``.

    ``step_tol`` is relative to the ball radius.
    """
    if p < 1:
        raise ValueError("batch size must be at least 1")
    if not ws.alpha_oed > 0:
        raise ValueError("alpha_k must be positive")
    rng = np.random.default_rng() if rng is None else rng
    center = ws.center if b_bar_k is None else np.asarray(b_bar_k, dtype=float)
    if b_bar_k is not None:
        ws = replace(ws, center=center)
    radius = float(np.sqrt(ws.alpha_oed))
    r = ws.r
    starts = []
    for _ in range(n_starts):
        d = rng.standard_normal((r, p))
        d /= np.linalg.norm(d, axis=0)
        d *= radius * rng.uniform(0.0, 1.0, size=p) ** (1.0 / r)
        starts.append(center[:, None] + d)
    if p == 1:
        starts.append(center[:, None].copy())
    best_eta, best_f = None, -np.inf
    for eta0 in starts:
        eta, f = _ascent(eta0, ws, radius, max_iter, step_tol * radius)
        if f > best_f:
            best_eta, best_f = eta, f
    if best_eta is None:
        raise IllConditionedDesign("no feasible start produced a well-posed design")
    best_eta = _project_ball(best_eta, center, radius)
    return DesignParams(eta=best_eta, z_tilde=ws.z_tilde, V=ws.V, k=ws.k)


def random_design(ws: CriterionWorkspace, p: int, rng: np.random.Generator,
                  clip: bool = True) -> DesignParams:
    """Draws ``eta ~ N(b_bar_k, alpha_k I_r)``, clipped radially to the feasibility ball."""
    if not ws.alpha_oed > 0:
        raise ValueError("alpha_k must be positive")
    radius = float(np.sqrt(ws.alpha_oed))
    eta = ws.center[:, None] + radius * rng.standard_normal((ws.r, p))
    if clip:
        eta = _project_ball(eta, ws.center, radius)
    return DesignParams(eta=eta, z_tilde=ws.z_tilde, V=ws.V, k=ws.k)


def tracing_design(z_bar_k: np.ndarray, projector: Projector | None = None,
                   z_tilde: np.ndarray | None = None, k: int = 0) -> DesignParams:
    """Baseline that evaluates at the current optimal-solution update."""
    z_bar_k = np.asarray(z_bar_k, dtype=float)
    if projector is None or z_tilde is None:
        # identity embedding: eta is z itself
        return DesignParams(eta=z_bar_k[:, None].copy(), z_tilde=np.zeros_like(z_bar_k),
                            V=np.eye(len(z_bar_k)), k=k)
    eta = projector.coords(z_bar_k - z_tilde)[:, None]
    return DesignParams(eta=eta, z_tilde=z_tilde, V=projector.V, k=k)


def feasibility_residual(design: DesignParams, ws: CriterionWorkspace) -> np.ndarray:
    """``||eta^l - b_bar_k||^2 - alpha_k`` per point (<= 0 when feasible)."""
    d = design.eta - ws.center[:, None]
    return np.sum(d * d, axis=0) - ws.alpha_oed
