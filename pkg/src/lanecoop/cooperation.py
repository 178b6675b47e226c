"""Cooperating-pair selection in the fast lane.

Builds the set of candidate cooperating vehicles around the projected merge
location, solves the per-pair terminal-position program minimizing the
weighted squared disruption, and picks the admissible pair with the least
disruption.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .core import (
    ControlBounds,
    SafetyParams,
    SpeedBounds,
    VehicleState,
    project_constant_speed,
    safe_distance,
)
from .ocp import TerminalInterval, feasible_terminal_interval

__all__ = [
    "FastLaneVehicle",
    "CooperativeSet",
    "PairSolution",
    "build_cooperative_set",
    "build_cooperative_set_minmax",
    "disruption_metric",
    "pair_terminal_qp",
    "select_optimal_pair",
]

VIRTUAL_LEADER_OFFSET = 1000.0  # assigned ahead of the front-most candidate


@dataclass(frozen=True)
class FastLaneVehicle:
    """Candidate cooperating vehicle: id, state at t0, and its own headway."""

    vid: int
    state: VehicleState
    phi: float = 0.6

    @property
    def safety(self) -> SafetyParams:
        return SafetyParams(delta=1.5, phi=self.phi)


@dataclass(frozen=True)
class CooperativeSet:
    """Front-to-rear ordered candidates and the maneuver end time they target."""

    members: tuple[FastLaneVehicle, ...]
    t_f_star: float

    def __post_init__(self):
        xs = [m.state.x for m in self.members]
        if any(a <= b for a, b in zip(xs, xs[1:])):
            raise ValueError("cooperative set must be strictly ordered front to rear")

    def __len__(self):
        return len(self.members)

    def adjacent_pairs(self) -> list[tuple[FastLaneVehicle, FastLaneVehicle]]:
        return list(zip(self.members, self.members[1:]))


@dataclass(frozen=True)
class PairSolution:
    i_id: int
    i1_id: int
    x_i_f: float
    x_i1_f: float
    delta_i: float
    delta_i1: float
    d_star: float
    feasible: bool
    blocking: str = ""


def _window(xC_tf: float, xU_tf: float, L_f: float, L_r: float) -> tuple[float, float]:
    return xC_tf - L_r, xU_tf + L_f


def build_cooperative_set(fast_lane: list[FastLaneVehicle], xU_tf: float,
                          xC_tf: float, t0: float, tf: float,
                          L_f: float, L_r: float) -> CooperativeSet:
    """Candidates whose constant-speed projection at tf lies in the window
    [xC(tf) - L_r, xU(tf) + L_f], in front-to-rear order."""
    if tf < t0:
        raise ValueError("tf must not precede t0")
    lo, hi = _window(xC_tf, xU_tf, L_f, L_r)
    members = []
    for veh in sorted(fast_lane, key=lambda m: -m.state.x):
        proj = project_constant_speed(veh.state, t0, tf)
        if lo <= proj <= hi:
            members.append(veh)
    return CooperativeSet(members=tuple(members), t_f_star=tf)


def build_cooperative_set_minmax(fast_lane: list[FastLaneVehicle], xU_tf: float,
                                 xC_tf: float, t0: float, tf: float,
                                 L_f: float, L_r: float, bounds: ControlBounds,
                                 speeds: SpeedBounds) -> CooperativeSet:
    """Union of the memberships under full-throttle and full-brake projections
    (the reachable-extreme variant of the candidate window test)."""
    if tf < t0:
        raise ValueError("tf must not precede t0")
    lo, hi = _window(xC_tf, xU_tf, L_f, L_r)
    members = []
    for veh in sorted(fast_lane, key=lambda m: -m.state.x):
        interval = feasible_terminal_interval(veh.state, t0, tf, bounds, speeds)
        if lo <= interval.x_hi <= hi or lo <= interval.x_lo <= hi:
            members.append(veh)
    return CooperativeSet(members=tuple(members), t_f_star=tf)


def disruption_metric(delta_i: float, delta_i1: float, gamma: float) -> float:
    """Weighted squared pair disruption gamma*d_i^2 + (1-gamma)*d_{i+1}^2."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * delta_i * delta_i + (1.0 - gamma) * delta_i1 * delta_i1


def _solve_two_var_qp(w_i: float, w_i1: float, target_i: float, target_i1: float,
                      constraints: list[tuple[float, float, float]]
                      ) -> tuple[float, float] | None:
    """Minimize w_i*(target_i - x)^2 + w_i1*(target_i1 - y)^2 subject to
    a*x + b*y <= c rows, by active-set enumeration (exact for 2 variables).

    Weights may be zero (gamma at the ends of its range); ties resolve to the
    unconstrained target in the weightless coordinate.
    """
    w_i = max(w_i, 1e-12)
    w_i1 = max(w_i1, 1e-12)

    def feasible(x: float, y: float) -> bool:
        return all(a * x + b * y <= c + 1e-7 for a, b, c in constraints)

    def objective(x: float, y: float) -> float:
        return w_i * (target_i - x) ** 2 + w_i1 * (target_i1 - y) ** 2

    best = None
    # unconstrained optimum, then every single- and two-constraint active set
    candidates = [(target_i, target_i1)]
    for a, b, c in constraints:
        # projection of the target onto a*x + b*y = c under the weighted norm
        denom = a * a / w_i + b * b / w_i1
        if denom < 1e-15:
            continue
        lam = (a * target_i + b * target_i1 - c) / denom
        candidates.append((target_i - lam * a / w_i, target_i1 - lam * b / w_i1))
    for (a1, b1, c1), (a2, b2, c2) in itertools.combinations(constraints, 2):
        det = a1 * b2 - a2 * b1
        if abs(det) < 1e-12:
            continue
        candidates.append((((c1 * b2 - c2 * b1) / det), ((a1 * c2 - a2 * c1) / det)))
    for x, y in candidates:
        if feasible(x, y):
            val = objective(x, y)
            if best is None or val < best[0] - 1e-15:
                best = (val, x, y)
    if best is None:
        return None
    return best[1], best[2]


def pair_terminal_qp(pair_i: FastLaneVehicle, pair_i1: FastLaneVehicle,
                     leader_proj_tf: float | None, xC_tf: float, vC_tf: float,
                     t0: float, tf: float, gamma: float, c_safety: SafetyParams,
                     bounds: ControlBounds, speeds: SpeedBounds) -> PairSolution:
    """Optimal terminal positions for an adjacent pair bracketing the merge slot.

    Minimizes the weighted squared shortfalls from the pair's undisturbed
    constant-speed positions subject to: the lane changer's gap behind the
    front vehicle, the rear vehicle's gap behind the lane changer (headway at
    its t0 speed, the worst case over the horizon), the front vehicle's gap
    behind its own leader (headway at the full-throttle terminal speed), and
    each vehicle's reachable terminal interval.
    """
    T = tf - t0
    if T < 0.0:
        raise ValueError("tf must not precede t0")
    proj_i = project_constant_speed(pair_i.state, t0, tf)
    proj_i1 = project_constant_speed(pair_i1.state, t0, tf)
    iv_i = feasible_terminal_interval(pair_i.state, t0, tf, bounds, speeds)
    iv_i1 = feasible_terminal_interval(pair_i1.state, t0, tf, bounds, speeds)
    if leader_proj_tf is None:
        leader_proj_tf = proj_i + VIRTUAL_LEADER_OFFSET

    # constraint rows a*x_i + b*x_i1 <= c
    rows = [
        (-1.0, 0.0, -(xC_tf + safe_distance(vC_tf, c_safety))),          # slot ahead
        (0.0, 1.0, xC_tf - safe_distance(pair_i1.state.v, pair_i1.safety)),  # slot behind
        (1.0, 0.0, leader_proj_tf
         - safe_distance(pair_i.state.v + bounds.u_max * T, pair_i.safety)),  # front gap
        (1.0, 0.0, iv_i.x_hi), (-1.0, 0.0, -iv_i.x_lo),                  # reachability i
        (0.0, 1.0, iv_i1.x_hi), (0.0, -1.0, -iv_i1.x_lo),                # reachability i+1
    ]
    sol = _solve_two_var_qp(gamma, 1.0 - gamma, proj_i, proj_i1, rows)
    if sol is None:
        # identify the most violated requirement at the projections (diagnostic)
        viol = [(a * proj_i + b * proj_i1 - c, idx) for idx, (a, b, c) in enumerate(rows)]
        worst = max(viol)[1]
        names = ["slot_ahead", "slot_behind", "front_gap", "reach_i_hi",
                 "reach_i_lo", "reach_i1_hi", "reach_i1_lo"]
        return PairSolution(pair_i.vid, pair_i1.vid, math.nan, math.nan,
                            math.nan, math.nan, math.inf, feasible=False,
                            blocking=names[worst])
    x_i, x_i1 = sol
    delta_i = proj_i - x_i
    delta_i1 = proj_i1 - x_i1
    return PairSolution(pair_i.vid, pair_i1.vid, x_i, x_i1, delta_i, delta_i1,
                        disruption_metric(delta_i, delta_i1, gamma), feasible=True)


def solve_all_pairs(coop: CooperativeSet, xC_tf: float, vC_tf: float, t0: float,
                    gamma: float, c_safety: SafetyParams, bounds: ControlBounds,
                    speeds: SpeedBounds) -> list[PairSolution]:
    """Terminal-position solve for every adjacent pair in the set; the
    front-most pair gets a virtual leader far ahead."""
    sols = []
    for idx, (veh_i, veh_i1) in enumerate(coop.adjacent_pairs()):
        if idx == 0:
            leader_proj = None
        else:
            leader_proj = project_constant_speed(coop.members[idx - 1].state,
                                                 t0, coop.t_f_star)
        sols.append(pair_terminal_qp(veh_i, veh_i1, leader_proj, xC_tf, vC_tf,
                                     t0, coop.t_f_star, gamma, c_safety,
                                     bounds, speeds))
    return sols


def select_optimal_pair(solutions: list[PairSolution], D_th: float
                        ) -> PairSolution | None:
    """Feasible pair with minimal disruption not exceeding the threshold.

    Ties break toward the furthest-forward pair, which is the earliest entry
    in the front-to-rear solution order.
    """
    best = None
    for sol in solutions:
        if not sol.feasible or sol.d_star > D_th + 1e-12:
            continue
        if best is None or sol.d_star < best.d_star - 1e-12:
            best = sol
    return best
