"""Maneuver planning: trigger detection, the plan/relax/abort loop, and the
sequential scheduling rule that keeps at most one maneuver active.

A maneuver plan fixes the lane changer's longitudinal trajectory, selects the
cooperating pair bracketing the merge slot, and assigns both cooperating
vehicles minimum-energy trajectories to their optimal terminal positions.
When no pair is admissible the terminal time is relaxed and the fixed-time
problem re-solved; when even that fails the maneuver aborts (or, under the
vehicle-centric policy, the pair with the widest slot is forced open with no
regard for the disruption cap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import (
    ControlBounds,
    ManeuverParams,
    SafetyParams,
    SpeedBounds,
    Trajectory,
    VehicleState,
    project_constant_speed,
    safe_distance,
)
from .cooperation import (
    CooperativeSet,
    FastLaneVehicle,
    PairSolution,
    build_cooperative_set,
    select_optimal_pair,
    solve_all_pairs,
)
from .ocp import (
    InfeasibleOCP,
    UnreachableTarget,
    min_energy_fixed_time_free_endpoint_cost,
    solve_cav_c_free_time,
    solve_energy_fixed_endpoint,
)

__all__ = [
    "ScenarioSnapshot",
    "ManeuverPlan",
    "ManeuverRecord",
    "ManeuverLog",
    "PlanValidationError",
    "TriggerEvent",
    "POLICY_SYSTEM",
    "POLICY_SELFISH",
    "STATUS_PLANNED",
    "STATUS_ABORTED_INFEASIBLE",
    "STATUS_ABORTED_TIMEOUT",
    "STATUS_FALLBACK_SELFISH",
    "should_trigger",
    "plan_maneuver",
    "validate_plan",
    "schedule_sequential",
]

POLICY_SYSTEM = "system_centric"
POLICY_SELFISH = "vehicle_centric"

STATUS_PLANNED = "planned"
STATUS_ABORTED_INFEASIBLE = "aborted_infeasible"
STATUS_ABORTED_TIMEOUT = "aborted_timeout"
STATUS_FALLBACK_SELFISH = "fallback_selfish"

RELAX_SEED = 1.0  # duration seeded into the relaxation when tf* = t0 [s]


class PlanValidationError(RuntimeError):
    """A produced plan failed its independent constraint re-check."""


@dataclass(frozen=True)
class ScenarioSnapshot:
    """Frozen planning view at maneuver start: the slow leader U, the lane
    changer C (with its own headway and trigger distance), and the fast lane
    front-to-rear."""

    t: float
    u_id: int
    u_state: VehicleState
    c_id: int
    c_state: VehicleState
    c_phi: float
    c_d_start: float
    fast_lane: tuple[FastLaneVehicle, ...]
    delta: float = 1.5

    def c_safety(self) -> SafetyParams:
        return SafetyParams(delta=self.delta, phi=self.c_phi)


@dataclass(frozen=True)
class ManeuverPlan:
    t0: float
    tf: float
    relaxations: int
    status: str
    traj_C: Trajectory | None = None
    traj_i: Trajectory | None = None
    traj_i1: Trajectory | None = None
    pair: tuple[int, int] | None = None
    d_star: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.status in (STATUS_PLANNED, STATUS_FALLBACK_SELFISH)


@dataclass(frozen=True)
class ManeuverRecord:
    index: int
    t0: float
    tf: float
    d_star: float
    energies: tuple[float, float, float]
    status: str          # planning outcome (planned / fallback / aborted_*)
    outcome: str = ""    # execution outcome when simulated (completed / cancelled)


@dataclass
class ManeuverLog:
    records: list[ManeuverRecord] = field(default_factory=list)

    def append(self, rec: ManeuverRecord):
        planned = [r for r in self.records if r.status in (STATUS_PLANNED,
                                                           STATUS_FALLBACK_SELFISH)]
        if planned and rec.status in (STATUS_PLANNED, STATUS_FALLBACK_SELFISH):
            if rec.t0 < planned[-1].tf - 1e-9:
                raise ValueError("maneuver starts before the previous one ends")
        self.records.append(rec)

    def d_total(self) -> float:
        return sum(r.d_star for r in self.records if r.status == STATUS_PLANNED)

    def counts_by_status(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.status] = out.get(r.status, 0) + 1
        return out


def should_trigger(xU: float, xC: float, d_start: float) -> bool:
    """Maneuver trigger: the gap to the slow leader has shrunk to d_start."""
    if xU <= xC:
        raise ValueError("the slow leader must be ahead of the lane changer")
    return xU - xC <= d_start


def _select_selfish(solutions: list[PairSolution], coop: CooperativeSet,
                    t0: float) -> PairSolution | None:
    """Widest-slot feasible pair, disruption cap ignored."""
    best = None
    best_gap = -math.inf
    by_id = {m.vid: m for m in coop.members}
    for sol in solutions:
        if not sol.feasible:
            continue
        gap = by_id[sol.i_id].state.x - by_id[sol.i1_id].state.x
        if gap > best_gap + 1e-12:
            best_gap = gap
            best = sol
    return best


def plan_maneuver(snapshot: ScenarioSnapshot, params: ManeuverParams,
                  bounds: ControlBounds, speeds: SpeedBounds,
                  policy: str = POLICY_SYSTEM,
                  relaxation_enabled: bool = True) -> ManeuverPlan:
    """One full pass of the planning loop from a frozen snapshot.

    Solves the lane changer's free-time problem, then repeatedly: builds the
    candidate set at the current terminal time, solves every adjacent pair's
    terminal-position program, and either dispatches the selected pair's
    trajectories or relaxes the terminal time and re-solves the fixed-time
    problem, while the horizon stays within T_th.
    """
    t0 = snapshot.t
    c_safety = snapshot.c_safety()
    try:
        c_sol = solve_cav_c_free_time(snapshot.c_state, snapshot.u_state, t0,
                                      params, bounds, speeds, c_safety)
    except InfeasibleOCP:
        return ManeuverPlan(t0=t0, tf=t0, relaxations=0,
                            status=STATUS_ABORTED_INFEASIBLE)

    traj_C = c_sol.traj
    tf = c_sol.tf_star
    relaxations = 0
    while True:
        xC_tf = traj_C.position(tf)
        vC_tf = traj_C.speed(tf)
        xU_tf = project_constant_speed(snapshot.u_state, t0, tf)
        coop = build_cooperative_set(list(snapshot.fast_lane), xU_tf, xC_tf,
                                     t0, tf, params.L_f, params.L_r)
        solutions = solve_all_pairs(coop, xC_tf, vC_tf, t0, params.gamma,
                                    c_safety, bounds, speeds)
        if policy == POLICY_SELFISH:
            chosen = _select_selfish(solutions, coop, t0)
        else:
            chosen = select_optimal_pair(solutions, params.D_th)
        if chosen is not None:
            by_id = {m.vid: m for m in coop.members}
            try:
                traj_i = solve_energy_fixed_endpoint(
                    by_id[chosen.i_id].state, t0, tf, chosen.x_i_f, bounds, speeds)
                traj_i1 = solve_energy_fixed_endpoint(
                    by_id[chosen.i1_id].state, t0, tf, chosen.x_i1_f, bounds, speeds)
            except UnreachableTarget:
                chosen = None
            if chosen is not None:
                status = (STATUS_FALLBACK_SELFISH if policy == POLICY_SELFISH
                          else STATUS_PLANNED)
                plan = ManeuverPlan(t0=t0, tf=tf, relaxations=relaxations,
                                    status=status, traj_C=traj_C, traj_i=traj_i,
                                    traj_i1=traj_i1,
                                    pair=(chosen.i_id, chosen.i1_id),
                                    d_star=chosen.d_star)
                validate_plan(plan, snapshot, params, bounds, speeds)
                return plan
        if not relaxation_enabled:
            return ManeuverPlan(t0=t0, tf=tf, relaxations=relaxations,
                                status=STATUS_ABORTED_TIMEOUT)
        duration = max(tf - t0, RELAX_SEED)
        new_duration = duration * params.lambda_tf
        if new_duration > params.T_th + 1e-9:
            return ManeuverPlan(t0=t0, tf=tf, relaxations=relaxations,
                                status=STATUS_ABORTED_TIMEOUT)
        relaxations += 1
        tf = t0 + new_duration
        try:
            _, traj_C = min_energy_fixed_time_free_endpoint_cost(
                snapshot.c_state, snapshot.u_state, t0, tf, params, bounds,
                speeds, c_safety)
        except InfeasibleOCP:
            return ManeuverPlan(t0=t0, tf=tf, relaxations=relaxations,
                                status=STATUS_ABORTED_INFEASIBLE)


def validate_plan(plan: ManeuverPlan, snapshot: ScenarioSnapshot,
                  params: ManeuverParams, bounds: ControlBounds,
                  speeds: SpeedBounds, dt: float = 0.01) -> None:
    """Independent re-check of every constraint the plan must satisfy.

    Verifies control and speed boxes for all three trajectories at dense
    samples, the lane changer's gap to the slow leader throughout, the merge
    slot gaps at the terminal time, the in-lane gap between the cooperating
    pair throughout, and the disruption cap for system-centric plans.
    """
    if not plan.succeeded:
        return
    tol = 1e-6
    if plan.tf - plan.t0 > params.T_th + tol:
        raise PlanValidationError("terminal time exceeds T_th")
    if plan.status == STATUS_PLANNED and plan.d_star > params.D_th + tol:
        raise PlanValidationError("disruption exceeds D_th")
    by_id = {m.vid: m for m in snapshot.fast_lane}
    veh_i = by_id[plan.pair[0]]
    veh_i1 = by_id[plan.pair[1]]
    c_safety = snapshot.c_safety()

    for label, traj in (("C", plan.traj_C), ("i", plan.traj_i), ("i1", plan.traj_i1)):
        for t in traj.sample_times(dt):
            u = traj.control(t)
            v = traj.speed(t)
            if not (bounds.u_min - tol <= u <= bounds.u_max + tol):
                raise PlanValidationError(f"{label}: control bound violated at t={t:.3f}")
            if not (speeds.v_min - tol <= v <= speeds.v_max + tol):
                raise PlanValidationError(f"{label}: speed bound violated at t={t:.3f}")

    for t in plan.traj_C.sample_times(dt):
        gap = (snapshot.u_state.x + snapshot.u_state.v * (t - plan.t0)
               - plan.traj_C.position(t))
        if gap - safe_distance(plan.traj_C.speed(t), c_safety) < -tol:
            raise PlanValidationError(f"C: leader gap violated at t={t:.3f}")

    for t in plan.traj_i.sample_times(dt):
        gap = plan.traj_i.position(t) - plan.traj_i1.position(t)
        if gap - safe_distance(plan.traj_i1.speed(t), veh_i1.safety) < -tol:
            raise PlanValidationError(f"pair gap violated at t={t:.3f}")

    xC_tf = plan.traj_C.position(plan.tf)
    vC_tf = plan.traj_C.speed(plan.tf)
    if plan.traj_i.position(plan.tf) - xC_tf < safe_distance(vC_tf, c_safety) - tol:
        raise PlanValidationError("slot-ahead gap violated at tf")
    if xC_tf - plan.traj_i1.position(plan.tf) < \
            safe_distance(veh_i1.state.v, veh_i1.safety) - tol:
        raise PlanValidationError("slot-behind gap violated at tf")


@dataclass(frozen=True)
class TriggerEvent:
    """A lane-change request: the earliest time it can run and a callable
    producing the live snapshot at any admission time."""

    time: float
    snapshot_at: "callable[[float], ScenarioSnapshot | None]"


def schedule_sequential(events: list[TriggerEvent], params: ManeuverParams,
                        bounds: ControlBounds, speeds: SpeedBounds,
                        policy: str = POLICY_SYSTEM,
                        relaxation_enabled: bool = True) -> ManeuverLog:
    """Serialize maneuvers: a new one is admitted only after the previous
    longitudinal and lateral phases complete, and a queued trigger is
    revalidated against the live snapshot at its admission time."""
    log = ManeuverLog()
    free_at = -math.inf
    for k, event in enumerate(sorted(events, key=lambda e: e.time)):
        t_adm = max(event.time, free_at)
        snapshot = event.snapshot_at(t_adm)
        if snapshot is None:
            continue
        if not should_trigger(snapshot.u_state.x, snapshot.c_state.x,
                              snapshot.c_d_start):
            continue
        plan = plan_maneuver(snapshot, params, bounds, speeds, policy=policy,
                             relaxation_enabled=relaxation_enabled)
        energies = (plan.traj_C.energy if plan.traj_C else 0.0,
                    plan.traj_i.energy if plan.traj_i else 0.0,
                    plan.traj_i1.energy if plan.traj_i1 else 0.0)
        log.append(ManeuverRecord(index=k, t0=plan.t0, tf=plan.tf,
                                  d_star=plan.d_star if plan.succeeded else 0.0,
                                  energies=energies, status=plan.status))
        if plan.succeeded:
            free_at = plan.tf + params.t_lat
    return log
