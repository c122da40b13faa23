import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfopt.discrepancy import DiscrepancyParams
from mfopt.errors import CflViolation, NewtonDivergence
from mfopt.problems import (DiffusionReactionProblem, FlowTransportProblem, dr_solve,
                            flow_nominal_velocity, flow_solve)

from conftest import derivative_battery, rel_err

# -- diffusion-reaction ---------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 20.0))
def test_dr_constant_solution(u_star):
    prob = DiffusionReactionProblem()
    u = dr_solve(prob, np.full(prob.n, u_star ** 2), "low")
    assert np.abs(u - u_star).max() < 1e-9 * max(1.0, u_star)


def test_dr_zero_control_gives_zero_state():
    prob = DiffusionReactionProblem()
    for fid in ("high", "low"):
        assert np.abs(dr_solve(prob, np.zeros(prob.n), fid)).max() < 1e-5
    assert np.abs(prob.discrepancy(np.zeros(prob.n))).max() < 1e-5


def manufactured_errors(ns=(33, 65, 129), kappa=0.05):
    """L2 errors of both fidelities for u_m = 2 + cos(pi x) (zero end slopes)."""
    errs = {"high": [], "low": []}
    for n in ns:
        prob = DiffusionReactionProblem(n=n, kappa=kappa)
        x = prob.grid.nodes
        um = 2.0 + np.cos(np.pi * x)
        for fid in errs:
            r = 1.0 + 0.7 * np.sin(2 * np.pi * x) if fid == "high" else 1.0
            z = kappa * np.pi ** 2 * np.cos(np.pi * x) + r * um ** 2
            e = dr_solve(prob, z, fid) - um
            errs[fid].append(np.sqrt(prob.M.norm_sq(e)))
    return {k: np.array(v) for k, v in errs.items()}


def test_dr_manufactured_rate():
    errs = manufactured_errors()
    for fid, e in errs.items():
        rates = np.log2(e[:-1] / e[1:])
        assert np.all(rates >= 1.9), (fid, rates)


def test_dr_discrepancy_nonzero_at_default(dr_setup):
    d = dr_setup.problem.discrepancy(dr_setup.z_tilde)
    assert np.all(np.isfinite(d)) and np.sqrt(dr_setup.problem.M.norm_sq(d)) > 1e-2


def test_dr_newton_divergence_reports_residual():
    prob = dataclasses.replace(DiffusionReactionProblem(), newton_maxiter=1)
    with pytest.raises(NewtonDivergence) as info:
        dr_solve(prob, np.full(prob.n, 400.0) + 300 * np.sin(7 * prob.grid.nodes), "high")
    assert info.value.residual is not None and info.value.residual > 0


def test_dr_rejects_bad_input():
    with pytest.raises(ValueError):
        DiffusionReactionProblem(kappa=0.0)
    prob = DiffusionReactionProblem(n=9)
    with pytest.raises(ValueError):
        dr_solve(prob, np.full(9, np.nan), "low")
    with pytest.raises(ValueError):
        dr_solve(prob, np.ones(9), "medium")


def test_dr_derivative_battery(dr_setup):
    s, rng = dr_setup, np.random.default_rng(0)
    n = s.problem.n_z
    for _ in range(10):
        z = s.z_tilde + s.projector.V @ (2.0 * rng.standard_normal(s.projector.r))
        th = DiscrepancyParams(rng.standard_normal(n), 1e-3 * rng.standard_normal((n, n)))
        e = derivative_battery(s.problem, z, th, rng)
        assert e["gradient"] < 1e-6 and e["hvp"] < 1e-6 and e["mixed"] < 1e-6
        assert e["mixed_e1"] < 1e-6 and e["symmetry"] < 1e-10


def test_dr_composite_gradient_at_zero_theta(dr_setup):
    s = dr_setup
    n = s.problem.n_z
    z = s.z_tilde + 1.0
    np.testing.assert_array_equal(s.problem.composite_gradient(z),
                                  s.problem.composite_gradient(z, DiscrepancyParams.zeros(n, n)))


# -- flow / transport -------------------------------------------------------------


def test_flow_cfl_of_initial_data(flow_problem):
    rho, u, e = flow_problem.initial_flow()
    assert flow_problem.cfl(rho, u, e) < 0.9
    assert flow_problem.nominal_history.max_cfl < 0.9


def test_flow_coefficients():
    p = FlowTransportProblem()
    assert (p.t_final, p.gamma_d, p.c_v, p.k_thermal, p.R_gas, p.nu, p.gamma_reg) == \
        (0.1, 0.05, 1.0, 30.0, 1.0, 1e5, 1e-6)
    assert p.n_time_steps == 400


def test_flow_zero_is_preserved(flow_problem):
    assert np.abs(flow_solve(flow_problem, np.zeros(flow_problem.n), "low")).max() < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flow_lofi_linear(flow_problem, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal((2, flow_problem.n))
    lhs = flow_solve(flow_problem, z1 + z2, "low")
    rhs = flow_solve(flow_problem, z1, "low") + flow_solve(flow_problem, z2, "low")
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(rhs).max())


def test_flow_adjoint_consistency(flow_problem, rng):
    v, w = rng.standard_normal((2, flow_problem.n))
    lhs = flow_problem.transport(v) @ w
    rhs = v @ flow_problem.transport_adjoint(w)
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def flow_dt_refinement_change(problem=None):
    """Relative L2 change of the high-fidelity c(., T) when the time step is halved."""
    p = FlowTransportProblem() if problem is None else problem
    fine = dataclasses.replace(p, n_time_steps=2 * p.n_time_steps)
    z = p.true_source
    c1, c2 = flow_solve(p, z, "high"), flow_solve(fine, z, "high")
    return np.sqrt(p.M.norm_sq(c1 - c2) / p.M.norm_sq(c2))


def test_flow_time_step_refinement():
    assert flow_dt_refinement_change() < 0.01


def test_flow_nominal_velocity_deterministic_and_inflow():
    a = flow_nominal_velocity(FlowTransportProblem())
    b = flow_nominal_velocity(FlowTransportProblem())
    np.testing.assert_array_equal(a, b)
    assert a.shape == (400, 101)
    assert np.all(a[:, 0] == 1.0)


def test_flow_decoupled_fidelities_coincide(rng):
    p = FlowTransportProblem(nu=0.0, n_time_steps=200)
    z = p.true_source + 0.3 * rng.standard_normal(p.n)
    assert np.abs(flow_solve(p, z, "high") - flow_solve(p, z, "low")).max() < 1e-8


def test_flow_lofi_objective_is_quadratic(flow_problem, rng):
    v = rng.standard_normal(flow_problem.n)
    z1, z2 = rng.standard_normal((2, flow_problem.n))
    h1 = flow_problem.composite_hvp(z1, None, v)
    h2 = flow_problem.composite_hvp(z2, None, v)
    assert rel_err(h1, h2) < 1e-10


def test_flow_discrepancy_finite(flow_problem):
    d = flow_problem.discrepancy(flow_problem.true_source)
    assert np.all(np.isfinite(d)) and np.abs(d).max() > 0


def test_flow_cfl_violation():
    p = FlowTransportProblem(n_time_steps=20)
    with pytest.raises(CflViolation):
        flow_solve(p, np.zeros(p.n), "high")


def test_flow_derivative_battery(flow_problem):
    rng = np.random.default_rng(1)
    n = flow_problem.n
    for _ in range(3):
        z = flow_problem.true_source + 0.2 * rng.standard_normal(n)
        th = DiscrepancyParams(0.01 * rng.standard_normal(n), 1e-3 * rng.standard_normal((n, n)))
        e = derivative_battery(flow_problem, z, th, rng)
        assert e["gradient"] < 1e-6 and e["hvp"] < 1e-6 and e["mixed"] < 1e-6
        assert e["mixed_e1"] < 1e-6 and e["symmetry"] < 1e-10
