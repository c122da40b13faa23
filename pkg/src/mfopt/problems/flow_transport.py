"""
Contaminant source identification in a 1D inviscid, heat-conducting flow.

High fidelity couples density, velocity and specific internal energy,

    rho_t + u rho_x + rho u_x = 0
    u_t + u u_x + p_x / rho = 0
    e_t + u e_x + (p / rho) u_x = k / (rho c_v) e_xx + nu / rho f(c)
    p = (R / c_v) rho e

to the contaminant ``c_t + (u c)_x = gamma_d c_xx - f(c)`` with ``f(c) = c``.
The low-fidelity model only transports ``c`` with a frozen velocity history
(the flow computed with ``c = 0``), so it is linear in the initial
concentration ``z = c(., 0)``.

Discretization on the nodes of a uniform grid with fixed time step:

* flow: local Lax-Friedrichs (Rusanov) dissipation with centered differences
  of the primitive system, explicit; thermal diffusion implicit.
* contaminant: conservative first-order upwind fluxes, explicit; diffusion
  and decay implicit. Both fidelities use the velocity at the start of the
  step, so with ``nu = 0`` they coincide.
* boundaries: ``u = 1``, ``rho = 1`` at inflow, ``p = 2`` at outflow (imposed
  through ``rho``), zero gradient for ``e`` and ``c`` at both ends and
  zero-gradient extrapolation for everything else.

Concentrations exposed through the optimization interface (controls, states,
target) are measured in units of ``concentration_scale``; the physical
coefficients are untouched, only the unit of ``c`` changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from scipy import linalg, sparse

from ..errors import CflViolation, NonfiniteState
from ..spaces import Grid1D, SpdOperator, build_grid, mass_matrix, stiffness_matrix
from .base import OptProblem

Fidelity = Literal["high", "low"]


def default_source(x: np.ndarray, amplitude: float = 2.0, center: float = 0.3,
                   width: float = 0.08) -> np.ndarray:
    """Smooth bump used to generate the terminal-concentration target."""
    return amplitude * np.exp(-0.5 * ((x - center) / width) ** 2)


@dataclass(frozen=True)
class FlowHistory:
    """Velocity at the start of every time step, and the final flow state."""

    u: np.ndarray        # (n_time_steps, n)
    rho: np.ndarray
    e: np.ndarray
    max_cfl: float


@dataclass(frozen=True, eq=False)
class FlowTransportProblem(OptProblem):
    n: int = 101
    n_time_steps: int = 400
    t_final: float = 0.1
    gamma_d: float = 0.05
    c_v: float = 1.0
    k_thermal: float = 30.0
    R_gas: float = 1.0
    nu: float = 1e5
    gamma_reg: float = 1e-6
    p_out: float = 2.0
    cfl_max: float = 0.9
    concentration_scale: float = 1e-3
    source_amplitude: float = 2.0
    source_center: float = 0.3
    source_width: float = 0.08
    grid: Grid1D = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_time_steps < 1 or not self.t_final > 0:
            raise ValueError("need a positive final time and at least one time step")
        if not self.concentration_scale > 0:
            raise ValueError("concentration_scale must be positive")
        if not self.gamma_d > 0 or not self.k_thermal >= 0 or not self.c_v > 0:
            raise ValueError("gamma_d and c_v must be positive, k_thermal non-negative")
        g = build_grid(self.n, 0.0, 1.0)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "M", mass_matrix(g))
        # lumped mass and the Neumann Laplacian used by both transport schemes
        K = stiffness_matrix(g)
        ml = self.M.matrix.sum(axis=1)
        object.__setattr__(self, "_ml", ml)
        object.__setattr__(self, "_lap", K / ml[:, None])

    # -- spaces ----------------------------------------------------------------
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

    @property
    def dt(self) -> float:
        return self.t_final / self.n_time_steps

    @cached_property
    def true_source(self) -> np.ndarray:
        return default_source(self.grid.nodes, self.source_amplitude, self.source_center,
                              self.source_width)

    @cached_property
    def target(self) -> np.ndarray:
        """Terminal concentration of the high-fidelity model started from ``true_source``."""
        return self.solve(self.true_source, "high")

    # -- building blocks --------------------------------------------------------
    def initial_flow(self):
        x = self.grid.nodes
        return np.ones_like(x), 1.0 - 0.5 * x, 1.0 + x

    def _pressure(self, rho, e):
        return (self.R_gas / self.c_v) * rho * e

    def _wave_speed(self, rho, u, e):
        gam = 1.0 + self.R_gas / self.c_v
        return np.abs(u) + np.sqrt(gam * self._pressure(rho, e) / rho)

    def cfl(self, rho, u, e) -> float:
        return float(np.max(self._wave_speed(rho, u, e)) * self.dt / self.grid.h)

    @cached_property
    def _contaminant_lu(self):
        """Factor of ``I + dt (gamma_d L + I)`` (implicit diffusion and decay)."""
        A = np.eye(self.n) + self.dt * (self.gamma_d * self._lap + np.eye(self.n))
        return linalg.lu_factor(A)

    def _advection_matrix(self, u: np.ndarray) -> sparse.csr_matrix:
        """Upwind discretization ``D`` of ``(u c)_x`` with zero-gradient boundary ghosts."""
        n, ml = self.n, self._ml
        uf = 0.5 * (u[:-1] + u[1:])                 # face velocities
        up, um = np.maximum(uf, 0.0), np.minimum(uf, 0.0)
        # flux F_{i+1/2} = up c_i + um c_{i+1}; boundary faces carry u c of the end node
        main = np.zeros(n)
        main[:-1] += up
        main[1:] -= um
        main[0] -= u[0]
        main[-1] += u[-1]
        upper = um                                  # d/dc_{i+1} of F_{i+1/2}
        lower = -up                                 # d/dc_{i-1} of -F_{i-1/2}
        D = sparse.diags([lower, main, upper], [-1, 0, 1], format="csr")
        return sparse.diags(1.0 / ml) @ D

    def _transport_step(self, c: np.ndarray, u: np.ndarray) -> np.ndarray:
        rhs = c - self.dt * (self._advection_matrix(u) @ c)
        return linalg.lu_solve(self._contaminant_lu, rhs)

    def _flow_step(self, rho, u, e, c):
        """One explicit Rusanov step of the flow plus implicit heat conduction."""
        dx, dt = self.grid.h, self.dt
        p = self._pressure(rho, e)
        s = self._wave_speed(rho, u, e)

        def ext(q):
            return np.concatenate(([q[0]], q, [q[-1]]))

        rg, ug, eg, pg, sg = ext(rho), ext(u), ext(e), ext(p), ext(s)

        def ddx(qg):
            return (qg[2:] - qg[:-2]) / (2.0 * dx)

        sf = np.maximum(sg[:-1], sg[1:])            # face speeds

        def diss(qg):
            flux = sf * (qg[1:] - qg[:-1])
            return (flux[1:] - flux[:-1]) / (2.0 * dx)

        rho_x, u_x, e_x, p_x = ddx(rg), ddx(ug), ddx(eg), ddx(pg)
        rho_n = rho + dt * (-u * rho_x - rho * u_x + diss(rg))
        u_n = u + dt * (-u * u_x - p_x / rho + diss(ug))
        e_s = e + dt * (-u * e_x - (p / rho) * u_x + diss(eg) + self.nu * c / rho)
        rho_n[0], u_n[0] = 1.0, 1.0
        # implicit conduction, coefficient frozen at the predicted density
        kap = self.k_thermal / (np.maximum(rho_n, 1e-300) * self.c_v)
        A = np.eye(self.n) + dt * kap[:, None] * self._lap
        e_n = linalg.solve(A, e_s)
        rho_n[-1] = self.p_out * self.c_v / (self.R_gas * e_n[-1])
        return rho_n, u_n, e_n

    def _check(self, step, *fields):
        for f in fields:
            if not np.all(np.isfinite(f)):
                raise NonfiniteState(f"non-finite state at time step {step}")
        rho, u, e = fields[:3]
        if np.any(rho <= 0) or np.any(e <= 0):
            raise NonfiniteState(f"non-physical density or energy at time step {step}")
        cfl = self.cfl(rho, u, e)
        if cfl > self.cfl_max:
            raise CflViolation(f"CFL number {cfl:.3f} exceeds {self.cfl_max} at time step {step}")
        return cfl

    # -- solvers -------------------------------------------------------------------
    def run_coupled(self, z: np.ndarray, record_velocity: bool = False):
        """
        Advance the coupled system to ``t_final`` from ``c(., 0) = z`` (scaled
        units); returns (c_T in scaled units, history or None).
        """
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,) or not np.all(np.isfinite(z)):
            raise ValueError("initial concentration must be a finite vector on the grid")
        rho, u, e = self.initial_flow()
        c = self.concentration_scale * z
        max_cfl = self._check(0, rho, u, e, c)
        hist = np.empty((self.n_time_steps, self.n)) if record_velocity else None
        for step in range(self.n_time_steps):
            if record_velocity:
                hist[step] = u
            c_new = self._transport_step(c, u)
            rho, u, e = self._flow_step(rho, u, e, c)
            c = c_new
            max_cfl = max(max_cfl, self._check(step + 1, rho, u, e, c))
        history = FlowHistory(hist, rho, e, max_cfl) if record_velocity else None
        return c / self.concentration_scale, history

    @cached_property
    def nominal_history(self) -> FlowHistory:
        return self.run_coupled(np.zeros(self.n), record_velocity=True)[1]

    @property
    def nominal_velocity(self) -> np.ndarray:
        """Velocity at the start of each time step of the contaminant-free flow, (n_t, n)."""
        return self.nominal_history.u

    @cached_property
    def _nominal_advection(self) -> list:
        return [self._advection_matrix(u) for u in self.nominal_velocity]

    def transport(self, c0: np.ndarray) -> np.ndarray:
        """Low-fidelity forward map; ``c0`` may hold several columns."""
        c = np.array(c0, dtype=float)
        lu, dt = self._contaminant_lu, self.dt
        for D in self._nominal_advection:
            c = linalg.lu_solve(lu, c - dt * (D @ c))
        return c

    def transport_adjoint(self, w: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`transport`, marching backwards in time."""
        lam = np.array(w, dtype=float)
        lu, dt = self._contaminant_lu, self.dt
        for D in reversed(self._nominal_advection):
            lam = linalg.lu_solve(lu, lam, trans=1)
            lam = lam - dt * (D.T @ lam)
        return lam

    def solve(self, z: np.ndarray, fidelity: Fidelity) -> np.ndarray:
        if fidelity == "high":
            return self.run_coupled(z)[0]
        if fidelity == "low":
            z = np.asarray(z, dtype=float)
            if z.shape[0] != self.n or not np.all(np.isfinite(z)):
                raise ValueError("initial concentration must be a finite vector on the grid")
            return self.transport(z)
        raise ValueError(f"unknown fidelity {fidelity!r}")

    def hifi_solve(self, z):
        return self.solve(z, "high")

    # -- OptProblem plumbing: the low-fidelity map is linear -------------------------
    def lofi_state(self, z):
        return self.solve(z, "low")

    def state_vector(self, state):
        return state

    def jvp(self, state, v):
        return self.transport(v)

    def vjp(self, state, w):
        return self.transport_adjoint(w)

    def second_vjp(self, state, v, w):
        return np.zeros_like(np.asarray(v, dtype=float))


def flow_solve(problem: FlowTransportProblem, z: np.ndarray, fidelity: Fidelity) -> np.ndarray:
    return problem.solve(z, fidelity)


def flow_nominal_velocity(problem: FlowTransportProblem) -> np.ndarray:
    return problem.nominal_velocity
