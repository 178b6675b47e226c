"""Discretized verification oracle for the longitudinal OCPs.

Poses the same problems as ocp.py on a uniform control grid (piecewise
constant control, exact kinematic integration) and solves the resulting
convex QP with the active-set method in qp.py.  Used by tests and
diagnostics only; the planning path never calls into this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import ControlBounds, SafetyParams, SpeedBounds, VehicleState
from .qp import QPError, solve_qp_active_set

__all__ = [
    "FixedEndpointProblem",
    "CavCFixedTimeProblem",
    "OracleResult",
    "OracleInfeasible",
    "solve_discretized_oracle",
]

DEFAULT_DT = 0.05


class OracleInfeasible(Exception):
    """Phase-1 certified the discretized constraint set empty."""


@dataclass(frozen=True)
class FixedEndpointProblem:
    i0: VehicleState
    t0: float
    tf: float
    xf: float
    bounds: ControlBounds
    speeds: SpeedBounds


@dataclass(frozen=True)
class CavCFixedTimeProblem:
    c0: VehicleState
    u0: VehicleState          # slow leader, constant speed
    t0: float
    tf: float
    v_f: float                # terminal-speed equality target
    bounds: ControlBounds
    speeds: SpeedBounds
    safety: SafetyParams


@dataclass
class OracleResult:
    energy: float
    controls: np.ndarray
    dt: float


def _grid(problem, dt: float) -> int:
    T = problem.tf - problem.t0
    if T <= 0.0:
        raise ValueError("oracle horizon must be positive")
    return max(1, int(round(T / dt)))


def _kinematic_maps(n: int, dt: float):
    """Linear maps from the control vector to knot speeds and positions.

    v_k = v0 + dt * sum_{j<k} u_j            (k = 0..n)
    x_k = x0 + v0*k*dt + dt^2 * sum_{j<k} (k - j - 0.5) u_j
    """
    Sv = np.tril(np.ones((n + 1, n)), k=-1) * dt
    Sx = np.zeros((n + 1, n))
    for k in range(n + 1):
        for j in range(k):
            Sx[k, j] = dt * dt * (k - j - 0.5)
    return Sv, Sx


def _assemble(problem, dt: float):
    n = _grid(problem, dt)
    T = problem.tf - problem.t0
    dt_eff = T / n
    Sv, Sx = _kinematic_maps(n, dt_eff)
    bounds = problem.bounds
    speeds = problem.speeds

    rows_in = []
    rhs_in = []
    eye = np.eye(n)
    # control box
    rows_in.append(eye)
    rhs_in.append(np.full(n, bounds.u_max))
    rows_in.append(-eye)
    rhs_in.append(np.full(n, -bounds.u_min))
    # speed box at interior and terminal knots
    if isinstance(problem, CavCFixedTimeProblem):
        v0 = problem.c0.v
        x0 = problem.c0.x
    else:
        v0 = problem.i0.v
        x0 = problem.i0.x
    rows_in.append(Sv[1:, :])
    rhs_in.append(np.full(n, speeds.v_max - v0))
    rows_in.append(-Sv[1:, :])
    rhs_in.append(np.full(n, v0 - speeds.v_min))

    A_eq_rows = []
    b_eq_vals = []
    if isinstance(problem, CavCFixedTimeProblem):
        # safety vs the constant-speed leader at every knot:
        # x_k + phi*v_k <= xU(t_k) - delta
        safety = problem.safety
        t_knots = np.arange(n + 1) * dt_eff
        lead = problem.u0.x + problem.u0.v * t_knots
        Grow = Sx + safety.phi * Sv
        rhs = lead - safety.delta - (x0 + v0 * t_knots) - safety.phi * v0
        rows_in.append(Grow)
        rhs_in.append(rhs)
        # terminal speed equality
        A_eq_rows.append(Sv[n, :])
        b_eq_vals.append(problem.v_f - v0)
    else:
        # terminal position equality, terminal speed free
        A_eq_rows.append(Sx[n, :])
        b_eq_vals.append(problem.xf - (x0 + v0 * T))

    A_in = np.vstack(rows_in)
    b_in = np.concatenate(rhs_in)
    A_eq = np.vstack(A_eq_rows)
    b_eq = np.array(b_eq_vals)
    return n, dt_eff, A_in, b_in, A_eq, b_eq


def _phase1_start(n, A_in, b_in, A_eq, b_eq) -> np.ndarray:
    """Feasible point via an LP minimizing the worst constraint violation."""
    # variables: (u, s); minimize s subject to A_in u - s <= b_in, A_eq u = b_eq
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([A_in, -np.ones((A_in.shape[0], 1))])
    A_eq_l = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b_in, A_eq=A_eq_l, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if not res.success:
        raise OracleInfeasible("phase-1 LP failed: " + str(res.message))
    if res.x[-1] > 1e-7:
        raise OracleInfeasible(f"phase-1 certificate: residual {res.x[-1]:.3e}")
    return res.x[:n]


def solve_discretized_oracle(problem, dt: float = DEFAULT_DT) -> OracleResult:
    """Solve the time-discretized problem to KKT stationarity.

    Quadratic objective sum(u_k^2/2)*dt, linear dynamics, linear inequality
    constraints; infeasibility is certified by the phase-1 LP.
    """
    n, dt_eff, A_in, b_in, A_eq, b_eq = _assemble(problem, dt)
    H = np.eye(n) * dt_eff
    g = np.zeros(n)

    x0 = None
    if isinstance(problem, FixedEndpointProblem):
        # constant control meeting the endpoint is often box-feasible
        T = problem.tf - problem.t0
        u_c = 2.0 * (problem.xf - problem.i0.x - problem.i0.v * T) / (T * T)
        cand = np.full(n, u_c)
        if (np.all(A_in @ cand <= b_in + 1e-10)
                and np.max(np.abs(A_eq @ cand - b_eq)) < 1e-8):
            x0 = cand
    if x0 is None:
        x0 = _phase1_start(n, A_in, b_in, A_eq, b_eq)
        # polish the start onto the equality manifold exactly
        resid = A_eq @ x0 - b_eq
        if np.max(np.abs(resid)) > 1e-12:
            correction = A_eq.T @ np.linalg.solve(A_eq @ A_eq.T, resid)
            x1 = x0 - correction
            if np.all(A_in @ x1 <= b_in + 1e-9):
                x0 = x1

    try:
        res = solve_qp_active_set(H, g, A_eq=A_eq, b_eq=b_eq,
                                  A_in=A_in, b_in=b_in, x0=x0, tol=1e-8)
    except QPError as exc:
        raise OracleInfeasible(f"QP solve failed: {exc}") from exc
    energy = float(0.5 * dt_eff * np.sum(res.x ** 2))
    return OracleResult(energy=energy, controls=res.x, dt=dt_eff)


def oracle_feasible(problem, dt: float = DEFAULT_DT) -> bool:
    """Phase-1 feasibility test for the discretized constraint set."""
    try:
        n, _, A_in, b_in, A_eq, b_eq = _assemble(problem, dt)
        _phase1_start(n, A_in, b_in, A_eq, b_eq)
        return True
    except OracleInfeasible:
        return False
