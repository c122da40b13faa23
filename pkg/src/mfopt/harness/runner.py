"""
Sequential calibrate / update / acquire loop and the four studies built on it.

Every high-fidelity solve goes through :class:`HifiBudget`, which separates
acquisition evaluations (bounded by ``N_budget``) from diagnostic ones
(objective values reported in the record, oracles).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..calibration import (DesignSet, DiscrepancyData, calibrate, map_estimate,
                           posterior_factors, prior_pushforward_trace, standard_normal_params)
from ..discrepancy import DiscrepancyParams, PriorFactor, eval_delta
from ..errors import BudgetError, ConfigError, CorrectorDivergence, IllConditionedDesign, MfoptError
from ..oed import (alpha_k, build_workspace, criterion, optimize_design, random_design,
                   trace_ratio, tracing_design)
from ..postopt import (Projector, continuation_update, hessian_projector, linear_update,
                       projected_newton, solve_lowfi)
from ..problems.base import OptProblem
from ..spaces import SpdOperator, laplacian_prior
from .config import RunConfig

log = logging.getLogger(__name__)


class RoundError(MfoptError):
    """A module error tagged with the acquisition round it occurred in."""

    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index}: {type(cause).__name__}: {cause}")
        self.round_index = round_index
        self.cause = cause


# -- setup ------------------------------------------------------------------

def build_problem(cfg: RunConfig) -> OptProblem:
    if cfg.problem == "diffusion_reaction":
        from ..problems.diffusion_reaction import DiffusionReactionProblem
        return DiffusionReactionProblem(n=cfg.n, kappa=cfg.kappa, gamma_reg=cfg.gamma_reg)
    from ..problems.flow_transport import FlowTransportProblem
    return FlowTransportProblem(n=cfg.n, n_time_steps=cfg.n_time_steps, gamma_reg=cfg.gamma_reg)


@dataclass(frozen=True, eq=False)
class Setup:
    """Everything computed once before any high-fidelity evaluation."""

    cfg: RunConfig
    problem: OptProblem
    W_u: SpdOperator
    W_z: SpdOperator
    z_tilde: np.ndarray
    projector: Projector
    prior: PriorFactor
    tr_ratio: float
    alpha_min: float


def build_setup(cfg: RunConfig, problem: OptProblem | None = None) -> Setup:
    problem = build_problem(cfg) if problem is None else problem
    W_u = laplacian_prior(problem.grid_u, cfg.prior_u_gamma, cfg.prior_u_beta)
    W_z = laplacian_prior(problem.grid_z, cfg.prior_z_gamma, cfg.prior_z_beta)
    z_tilde = solve_lowfi(problem, W_z=W_z)
    projector = hessian_projector(problem, z_tilde, W_z, r=cfg.rank,
                                  rel_tol=cfg.rank_rel_tol, cap=cfg.rank_cap)
    prior = PriorFactor.build(problem.M_u, W_u, problem.M_z, W_z, z_tilde)
    tr = trace_ratio(W_z, problem.M_z)
    scale = max(problem.M_z.norm_sq(z_tilde), 1e-12)
    return Setup(cfg, problem, W_u, W_z, z_tilde, projector, prior, tr,
                 cfg.alpha_min_rel * scale / tr)


class HifiBudget:
    """Counts high-fidelity solves, split into acquisition and diagnostic use."""

    def __init__(self, problem: OptProblem, limit: int):
        self.problem = problem
        self.limit = limit
        self.acquisition = 0
        self.diagnostic = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.acquisition

    def acquire(self, points: list[np.ndarray]) -> list[np.ndarray]:
        """Discrepancy data at ``points``; solves run concurrently for batches."""
        if len(points) > self.remaining:
            raise BudgetError(f"{len(points)} evaluations requested, {self.remaining} left")
        self.acquisition += len(points)
        if len(points) == 1:
            return [self.problem.discrepancy(points[0])]
        with ThreadPoolExecutor(max_workers=len(points)) as pool:
            return list(pool.map(self.problem.discrepancy, points))

    def objective(self, z: np.ndarray) -> float:
        self.diagnostic += 1
        return self.problem.hifi_objective(z)


# -- records ------------------------------------------------------------------

RECORD_COLUMNS = (
    "round", "n_data", "n_new", "policy", "alpha_k", "criterion", "data_norm_max",
    "theta_intercept_norm", "theta_slope_norm", "J_lofi", "J_corrected", "J_hifi",
    "J_hifi_linear", "n_steps_used", "wall_time", "eta_new", "z_new", "z_bar",
)


@dataclass
class RunRecord:
    rows: list[dict] = field(default_factory=list)
    scatter: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    @property
    def J_hifi(self) -> np.ndarray:
        return self.column("J_hifi")


def _vec(x) -> str:
    return json.dumps([float(v) for v in np.ravel(x)])


def _row(k, n_data, new_pts, eta, policy, alpha, crit, data, theta, z_bar, problem,
         budget, t0, J_lin=float("nan"), n_steps_used=0):
    J_lofi = problem.composite_objective(z_bar)
    J_corr = problem.composite_objective(z_bar, theta) if theta is not None else J_lofi
    M_u = problem.M_u
    dnorm = max((float(np.sqrt(M_u.norm_sq(d))) for d in data), default=float("nan"))
    return {
        "round": k, "n_data": n_data, "n_new": len(new_pts), "policy": policy,
        "alpha_k": float(alpha), "criterion": float(crit), "data_norm_max": dnorm,
        "theta_intercept_norm": float(np.linalg.norm(theta.intercept)) if theta is not None else 0.0,
        "theta_slope_norm": float(np.linalg.norm(theta.slope)) if theta is not None else 0.0,
        "J_lofi": float(J_lofi), "J_corrected": float(J_corr), "J_hifi": budget.objective(z_bar),
        "J_hifi_linear": float(J_lin), "n_steps_used": int(n_steps_used),
        "wall_time": time.perf_counter() - t0,
        "eta_new": json.dumps([_vec(e) for e in eta]) if eta else "[]",
        "z_new": json.dumps([_vec(z) for z in new_pts]) if new_pts else "[]",
        "z_bar": _vec(z_bar),
    }


# -- building blocks ------------------------------------------------------------

def update_with_retry(setup: Setup, theta: DiscrepancyParams, n_steps: int | None = None,
                      corrector: str | None = None):
    """Continuation update; one retry with doubled ``n_steps`` if the corrector diverges."""
    cfg = setup.cfg
    n_steps = cfg.n_steps if n_steps is None else n_steps
    corrector = cfg.corrector if corrector is None else corrector
    try:
        res = continuation_update(setup.problem, setup.projector, setup.z_tilde, theta,
                                  n_steps, cfg.corrector_tol, corrector)
        return res, n_steps
    except CorrectorDivergence as exc:
        log.warning("corrector diverged with n_steps=%d (%s); retrying with %d",
                    n_steps, exc, 2 * n_steps)
        res = continuation_update(setup.problem, setup.projector, setup.z_tilde, theta,
                                  2 * n_steps, cfg.corrector_tol, corrector)
        return res, 2 * n_steps


def predictive_alpha(setup: Setup, rng: np.random.Generator, n_samples: int = 64) -> float:
    """
    Expected value of ``alpha_1`` before any data: the discrepancy at ``z~`` is
    drawn from the prior model (plus noise), calibrated, and pushed through the
    linearized update.
    """
    prior, problem, alpha_d = setup.prior, setup.problem, setup.cfg.alpha_d
    design = DesignSet.from_points([setup.z_tilde])
    factors = posterior_factors(design, None, prior, alpha_d)
    noise_factor = np.linalg.cholesky(problem.M_u.inverse)
    acc = 0.0
    for _ in range(n_samples):
        theta = prior.apply_Linv_T(standard_normal_params(rng, prior.n_u, prior.n_z))
        d = eval_delta(theta, setup.z_tilde, problem.M_z)
        d = d + np.sqrt(alpha_d) * (noise_factor @ rng.standard_normal(prior.n_u))
        theta_bar = map_estimate(factors, DiscrepancyData.from_vectors([d]))
        dz = linear_update(setup.projector, problem, setup.z_tilde, theta_bar) - setup.z_tilde
        acc += problem.M_z.norm_sq(dz)
    return max(acc / n_samples / setup.tr_ratio, setup.alpha_min)


def _independent_subset(points: list[np.ndarray], data: list[np.ndarray], setup: Setup):
    """Greedily keep points that leave the design well-posed; drops duplicates."""
    keep_p, keep_d = [], []
    for z, d in zip(points, data):
        try:
            posterior_factors(DesignSet.from_points(keep_p + [z]), None, setup.prior,
                              setup.cfg.alpha_d)
        except IllConditionedDesign:
            log.warning("dropping a high-fidelity point that makes the design degenerate")
            continue
        keep_p.append(z)
        keep_d.append(d)
    return keep_p, keep_d


def acquire(setup: Setup, policy: str, points: list[np.ndarray], z_bar: np.ndarray,
            alpha: float, p: int, rng: np.random.Generator):
    """Next ``p`` points by the given policy; returns (points, eta list, criterion value)."""
    cfg = setup.cfg
    ws = build_workspace(setup.prior, setup.projector, z_bar, points, alpha, cfg.alpha_d)
    if policy == "oed":
        design = optimize_design(ws, setup.prior, p, n_starts=cfg.n_starts, rng=rng)
    elif policy == "random":
        design = random_design(ws, p, rng)
    elif policy == "tracing":
        if p != 1:
            raise BudgetError("the tracing policy acquires one point per round")
        design = tracing_design(z_bar, setup.projector, setup.z_tilde, k=len(points))
    else:
        raise ValueError(f"unknown policy {policy!r}")
    try:
        crit = criterion(design.eta, ws)
    except IllConditionedDesign:
        crit = float("nan")
    return design.points(), [design.eta[:, i] for i in range(design.p)], crit


# -- studies --------------------------------------------------------------------

def run_sequential(cfg: RunConfig, setup: Setup | None = None, compare_linear: bool = False,
                   scatter_fn=None) -> RunRecord:
    """
    Full loop: the first batch holds ``z~``, then calibrate, update and acquire
    batches of ``batch_size`` points until the acquisition budget is spent. ``compare_linear`` adds the high-fidelity
    objective of the linearized update computed from the same data.
    """
    t0 = time.perf_counter()
    # a shared setup only caches the problem-level pieces; run settings come from cfg
    setup = build_setup(cfg) if setup is None else dataclasses.replace(setup, cfg=cfg)
    problem, prior = setup.problem, setup.prior
    rng = np.random.default_rng(cfg.seed)
    budget = HifiBudget(problem, cfg.N_budget)
    rec = RunRecord(meta={"rank": setup.projector.r, "tr_ratio": setup.tr_ratio,
                          "alpha_min": setup.alpha_min})
    rec.rows.append(_row(0, 0, [], [], cfg.policy, float("nan"), float("nan"), [], None,
                         setup.z_tilde, problem, budget, t0))

    # first round: z~ plus, for batches, p - 1 points chosen before any data
    new_pts, new_eta = [setup.z_tilde.copy()], [np.zeros(setup.projector.r)]
    crit, alpha = float("nan"), float("nan")
    p0 = min(cfg.batch_size, cfg.N_budget)
    if p0 > 1:
        alpha = predictive_alpha(setup, rng)
        pts, eta, crit = acquire(setup, cfg.policy, new_pts, setup.z_tilde, alpha, p0 - 1, rng)
        new_pts += pts
        new_eta += eta
    points, data = [], []
    z_prev = setup.z_tilde
    k = 0
    while True:
        k += 1
        try:
            new_data = budget.acquire(new_pts)
            points, data = _independent_subset(points + new_pts, data + new_data, setup)
            factors, theta = calibrate(DesignSet.from_points(points),
                                       DiscrepancyData.from_vectors(data), prior, cfg.alpha_d)
            res, used = update_with_retry(setup, theta)
        except MfoptError as exc:
            raise RoundError(k, exc) from exc
        z_bar = res.z_bar
        J_lin = float("nan")
        if compare_linear:
            J_lin = budget.objective(linear_update(setup.projector, problem, setup.z_tilde, theta))
        rec.rows.append(_row(k, len(points), new_pts, new_eta, cfg.policy, alpha, crit, new_data,
                             theta, z_bar, problem, budget, t0, J_lin, used))
        if budget.remaining == 0:
            break
        alpha = alpha_k(z_bar, z_prev, setup.W_z, problem.M_z, setup.alpha_min, setup.tr_ratio)
        z_prev = z_bar
        p = min(cfg.batch_size, budget.remaining)
        try:
            if scatter_fn is not None:
                rec.scatter.extend(scatter_fn(setup, k, points, z_bar, alpha, rng))
            new_pts, new_eta, crit = acquire(setup, cfg.policy, points, z_bar, alpha, p, rng)
        except MfoptError as exc:
            raise RoundError(k, exc) from exc
    rec.meta.update(acquisition_solves=budget.acquisition, diagnostic_solves=budget.diagnostic)
    if budget.acquisition != cfg.N_budget:
        raise BudgetError(f"used {budget.acquisition} acquisition solves, budget {cfg.N_budget}")
    return rec


def nominal_theta(setup: Setup, z_star: np.ndarray, fd_step: float = 1e-4) -> DiscrepancyParams:
    """
    Affine discrepancy linearized at ``z_star`` along the projector directions.

    With ``J_V`` the finite-difference Jacobian columns ``d'(z*) v_j``, the slope
    ``K = J_V V^T W_z M_z^{-1}`` reproduces them on ``range(V)`` and the
    intercept makes ``delta(z*) = d(z*)``.
    """
    problem, V, W_z = setup.problem, setup.projector.V, setup.W_z
    M_z = problem.M_z
    d0 = problem.discrepancy(z_star)
    scale = fd_step * max(1.0, float(np.sqrt(M_z.norm_sq(z_star))))
    J = np.column_stack([(problem.discrepancy(z_star + scale * V[:, j]) - d0) / scale
                         for j in range(V.shape[1])])
    K = J @ M_z.solve(W_z.matrix @ V).T
    return DiscrepancyParams(d0 - K @ (M_z.matrix @ z_star), K)


def high_fidelity_optimum(problem: OptProblem, z0: np.ndarray | None = None,
                          W_z: SpdOperator | None = None) -> np.ndarray:
    """Direct Newton on the high-fidelity objective (diffusion-reaction only)."""
    if not hasattr(problem, "with_opt_fidelity"):
        raise NotImplementedError("no high-fidelity optimum oracle for this problem")
    return solve_lowfi(problem.with_opt_fidelity("high"), z0=z0, W_z=W_z)


def run_continuation_study(cfg: RunConfig, setup: Setup | None = None,
                           theta: DiscrepancyParams | None = None) -> RunRecord:
    """Error of the continuation update against direct re-optimization, per step count."""
    t0 = time.perf_counter()
    setup = build_setup(cfg) if setup is None else setup
    problem = setup.problem
    if theta is None:
        if not hasattr(problem, "with_opt_fidelity"):
            raise ConfigError("the continuation study needs the high-fidelity optimum oracle, "
                              "available for diffusion_reaction only")
        z_star = high_fidelity_optimum(problem, setup.z_tilde, setup.W_z)
        theta = nominal_theta(setup, z_star)
    b_direct = projected_newton(problem, setup.projector, setup.z_tilde, theta)
    z_direct = setup.z_tilde + setup.projector.V @ b_direct
    J_direct = problem.composite_objective(z_direct, theta)
    rec = RunRecord(meta={"J_direct": J_direct, "corrector": cfg.continuation_corrector,
                          "rank": setup.projector.r})
    for n in cfg.continuation_steps:
        res = continuation_update(problem, setup.projector, setup.z_tilde, theta, n,
                                  cfg.corrector_tol, cfg.continuation_corrector)
        J = problem.composite_objective(res.z_bar, theta)
        rec.rows.append({
            "n_steps": n, "J_corrected": J, "objective_error": abs(J - J_direct),
            "b_error": float(np.linalg.norm(res.b_bar - b_direct)),
            "corrector_iterations": int(sum(res.corrector_iterations)),
            "wall_time": time.perf_counter() - t0, "z_bar": _vec(res.z_bar),
        })
    return rec


def uncertainty_axes(setup: Setup, points: list[np.ndarray], center: np.ndarray,
                     alpha: float, etas: np.ndarray) -> np.ndarray:
    """
    Relative uncertainty reduction of each candidate (columns of ``etas``)
    around ``center``: ``(U_0 - U) / U_0`` with ``U`` the expected pushforward
    variance over ``N(center, alpha W_z^{-1})`` and ``U_0`` its value without
    the candidate.
    """
    prior, cfg = setup.prior, setup.cfg
    ws = build_workspace(prior, setup.projector, center, points, alpha, cfg.alpha_d)
    const = expected_prior_trace(setup, center, alpha)
    base = const - _existing_reduction(ws)
    out = np.empty(etas.shape[1])
    for i in range(etas.shape[1]):
        try:
            out[i] = (base - (const - criterion(etas[:, i:i + 1], ws))) / base
        except IllConditionedDesign:
            out[i] = 0.0
    return out


def _existing_reduction(ws) -> float:
    return criterion(np.zeros((ws.r, 0)), ws)


def expected_prior_trace(setup: Setup, center: np.ndarray, alpha: float) -> float:
    """``E_z tr(A(z) W_theta^{-1} A(z)^T M_u)`` for ``z ~ N(center, alpha W_z^{-1})``."""
    prior = setup.prior
    base = float(np.sum(prior.trace_weights / prior.Lambda))
    extra = alpha * float(np.trace(prior.Q_z @ setup.W_z.inverse))
    return prior_pushforward_trace(prior, center) + base * extra


def run_oed_vs_random(cfg: RunConfig, setup: Setup | None = None) -> RunRecord:
    """
    OED and random policies side by side. For every OED round the chosen
    point and ``n_random`` random candidates are scored on two axes: the
    criterion around ``z_bar_k`` and the expected posterior variance around
    the high-fidelity optimum.
    """
    setup = build_setup(cfg) if setup is None else setup
    try:
        z_star = high_fidelity_optimum(setup.problem, setup.z_tilde, setup.W_z)
    except NotImplementedError:
        z_star = None
    rec = RunRecord(meta={"seeds": cfg.study_seeds, "n_random": cfg.n_random})

    def scatter(seed):
        def fn(setup_, k, points, z_bar, alpha, rng):
            if cfg.n_random == 0:
                return []
            # use a separate stream so the OED run is identical with or without the scatter
            srng = np.random.default_rng([seed, k])
            ws = build_workspace(setup_.prior, setup_.projector, z_bar, points, alpha, cfg.alpha_d)
            oed_eta = optimize_design(ws, setup_.prior, 1, n_starts=cfg.n_starts,
                                      rng=np.random.default_rng([seed, k, 1])).eta
            rnd = random_design(ws, cfg.n_random, srng).eta
            etas = np.hstack([oed_eta, rnd])
            crit_axis = uncertainty_axes(setup_, points, z_bar, alpha, etas)
            star_axis = (uncertainty_axes(setup_, points, z_star, alpha, etas)
                         if z_star is not None else np.full(etas.shape[1], np.nan))
            return [{"seed": seed, "round": k, "kind": "oed" if i == 0 else "random",
                     "criterion_reduction": float(crit_axis[i]),
                     "zstar_reduction": float(star_axis[i])} for i in range(etas.shape[1])]
        return fn

    for s in range(cfg.study_seeds):
        seed = cfg.seed + s
        for policy in ("oed", "random"):
            sub = cfg.replace(policy=policy, seed=seed)
            r = run_sequential(sub, setup, scatter_fn=scatter(seed) if policy == "oed" else None)
            for row in r.rows:
                rec.rows.append({"seed": seed, **row})
            rec.scatter.extend(r.scatter)
    if rec.scatter:
        a = np.array([s["criterion_reduction"] for s in rec.scatter])
        b = np.array([s["zstar_reduction"] for s in rec.scatter])
        ok = np.isfinite(a) & np.isfinite(b)
        rec.meta["correlation"] = (float(np.corrcoef(a[ok], b[ok])[0, 1])
                                   if ok.sum() > 2 and np.std(a[ok]) > 0 and np.std(b[ok]) > 0
                                   else float("nan"))
    return rec


def run_batch_study(cfg: RunConfig, setup: Setup | None = None) -> RunRecord:
    """Sequential runs at a shared budget for each batch size in ``cfg.batch_sizes``."""
    setup = build_setup(cfg) if setup is None else setup
    rec = RunRecord(meta={"N_budget": cfg.N_budget, "batch_sizes": list(cfg.batch_sizes)})
    for p in cfg.batch_sizes:
        if p > cfg.N_budget:
            raise BudgetError(f"batch size {p} exceeds the budget {cfg.N_budget}")
        r = run_sequential(cfg.replace(batch_size=p), setup)
        rec.meta[f"acquisition_solves_p{p}"] = r.meta["acquisition_solves"]
        for row in r.rows:
            rec.rows.append({"batch_size": p, **row})
    return rec


STUDY_RUNNERS = {
    "sequential": run_sequential,
    "continuation": run_continuation_study,
    "oed-vs-random": run_oed_vs_random,
    "batch": run_batch_study,
}
