"""Deterministic two-lane highway microsimulator.

A slow uncontrolled vehicle rides the right lane at constant speed; connected
vehicles spawn in both lanes, follow an Intelligent Driver Model baseline, and
the slow leader's immediate follower periodically escapes to the fast lane via
the cooperative maneuver planner.  Maneuver trajectories are executed exactly
(closed-form evaluation, no integration drift); everything else advances with
exact constant-acceleration steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    ControlBounds,
    ManeuverParams,
    SafetyParams,
    SpeedBounds,
    VehicleState,
    safe_distance,
)
from .cooperation import FastLaneVehicle
from .planner import (
    ManeuverLog,
    ManeuverPlan,
    ManeuverRecord,
    POLICY_SELFISH,
    POLICY_SYSTEM,
    STATUS_ABORTED_INFEASIBLE,
    STATUS_ABORTED_TIMEOUT,
    ScenarioSnapshot,
    plan_maneuver,
    should_trigger,
)

__all__ = [
    "SimConfig",
    "NormalSpec",
    "Vehicle",
    "World",
    "SimInvariantError",
    "MODE_NO_COOPERATION",
    "MODE_VEHICLE_CENTRIC",
    "MODE_SYSTEM_CENTRIC",
    "STATUS_COMPLETED",
    "STATUS_CANCELLED",
    "identify_C",
    "spawn",
    "step",
    "run_simulation",
    "export_trace",
]

MODE_NO_COOPERATION = "no_cooperation"
MODE_VEHICLE_CENTRIC = "vehicle_centric"
MODE_SYSTEM_CENTRIC = "system_centric"

STATUS_COMPLETED = "completed"
STATUS_CANCELLED = "cancelled"

LANE_SLOW = "slow"
LANE_FAST = "fast"

ROLE_U = "U"
ROLE_CAV = "CAV"
ROLE_BACKGROUND = "background"


class SimInvariantError(RuntimeError):
    """A physical invariant broke (negative hard gap, lane order violation);
    indicates a solver or model bug and halts the run."""


@dataclass(frozen=True)
class NormalSpec:
    mean: float
    std: float

    def draw(self, rng: np.random.Generator, lo: float, hi: float) -> float:
        return float(min(max(rng.normal(self.mean, self.std), lo), hi))


@dataclass(frozen=True)
class SimConfig:
    highway_length: float = 1500.0
    flow: float = 3000.0                  # vehicles/hour, both lanes combined
    v_desired_spawn: float = 29.0
    vU: float = 16.0
    dt: float = 0.1
    seed: int = 0
    vehicle_length: float = 5.0
    measurement_point: float = 1200.0
    measurement_window: float = 240.0
    warmup: float = 60.0
    duration: float = 300.0
    d_start_dist: NormalSpec = field(default_factory=lambda: NormalSpec(70.0, 10.0))
    phi_dist: NormalSpec = field(default_factory=lambda: NormalSpec(0.6, 0.04))
    delta: float = 1.5
    params: ManeuverParams = field(default_factory=lambda: ManeuverParams(beta=16.333333333333336))
    bounds: ControlBounds = field(default_factory=lambda: ControlBounds(-7.0, 3.3))
    ocp_speeds: SpeedBounds = field(default_factory=lambda: SpeedBounds(12.0, 33.0))
    mode: str = MODE_SYSTEM_CENTRIC
    relaxation_enabled: bool = True
    abort_wait: float = 5.0
    u_start_x: float = 0.0
    u_spawn_time: float = 0.0
    persistent_u: bool = True             # respawn the slow leader when it exits
    cav_penetration: float = 1.0
    idm_accel: float = 3.3
    idm_decel: float = 3.0
    idm_exponent: float = 4.0
    idm_headway_buffer: float = 0.2       # added to each vehicle's phi for car following
    trace_sample_every: int = 0           # steps between trace rows; 0 disables


@dataclass
class Vehicle:
    vid: int
    lane: str
    role: str
    x: float
    v: float
    u: float = 0.0
    phi: float = 0.6
    d_start: float = 70.0
    desired_speed: float = 29.0
    spawn_t: float = 0.0
    crossed_at: float | None = None

    def state(self) -> VehicleState:
        return VehicleState(self.x, self.v)

    def safety(self, delta: float) -> SafetyParams:
        return SafetyParams(delta=delta, phi=self.phi)


@dataclass
class _ActiveManeuver:
    plan: ManeuverPlan
    c_id: int
    i_id: int
    i1_id: int
    record_index: int


@dataclass
class World:
    config: SimConfig
    t: float = 0.0
    step_index: int = 0
    next_vid: int = 1
    vehicles: dict[int, Vehicle] = field(default_factory=dict)
    lanes: dict[str, list[int]] = field(default_factory=lambda: {LANE_SLOW: [], LANE_FAST: []})
    rng: np.random.Generator = None
    active: _ActiveManeuver | None = None
    wait_until: float = -math.inf
    log: ManeuverLog = field(default_factory=ManeuverLog)
    crossings: list[tuple[float, int, str, str]] = field(default_factory=list)
    exits: list[tuple[int, float, float]] = field(default_factory=list)
    maneuver_energy: float = 0.0
    min_exec_margin: float = math.inf
    trace_rows: list[tuple] = field(default_factory=list)
    spawn_deferrals: int = 0

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)

    def lane_vehicles(self, lane: str) -> list[Vehicle]:
        return [self.vehicles[v] for v in self.lanes[lane]]


def _new_vehicle(world: World, lane: str, role: str, x: float, v: float) -> Vehicle:
    cfg = world.config
    if role == ROLE_U:
        phi, dstart = cfg.phi_dist.mean, cfg.d_start_dist.mean
    else:
        phi = cfg.phi_dist.draw(world.rng, 0.1, 2.0)
        dstart = cfg.d_start_dist.draw(world.rng, 15.0, 150.0)
    veh = Vehicle(vid=world.next_vid, lane=lane, role=role, x=x, v=v, phi=phi,
                  d_start=dstart, desired_speed=cfg.v_desired_spawn,
                  spawn_t=world.t)
    world.next_vid += 1
    world.vehicles[veh.vid] = veh
    ids = world.lanes[lane]
    pos = 0
    while pos < len(ids) and world.vehicles[ids[pos]].x > x:
        pos += 1
    ids.insert(pos, veh.vid)
    return veh


def identify_C(world: World) -> tuple[int, int] | None:
    """The slow leader and its immediate slow-lane follower, when that
    follower is a connected vehicle."""
    slow = world.lanes[LANE_SLOW]
    for idx, vid in enumerate(slow):
        if world.vehicles[vid].role == ROLE_U:
            if idx + 1 < len(slow):
                follower = world.vehicles[slow[idx + 1]]
                if follower.role == ROLE_CAV:
                    return vid, follower.vid
            return None
    return None


def _idm_accel(cfg: SimConfig, veh: Vehicle, leader: Vehicle | None) -> float:
    v0 = max(veh.desired_speed, 0.1)
    free = cfg.idm_accel * (1.0 - (max(veh.v, 0.0) / v0) ** cfg.idm_exponent)
    if leader is None:
        return free
    gap = leader.x - veh.x - cfg.vehicle_length
    if gap <= cfg.delta:
        return cfg.bounds.u_min  # hard-brake guard
    dv = veh.v - leader.v
    T_follow = veh.phi + cfg.idm_headway_buffer
    s_star = cfg.delta + max(0.0, veh.v * T_follow
                             + veh.v * dv / (2.0 * math.sqrt(cfg.idm_accel * cfg.idm_decel)))
    acc = cfg.idm_accel * (1.0 - (max(veh.v, 0.0) / v0) ** cfg.idm_exponent
                           - (s_star / gap) ** 2)
    return min(max(acc, cfg.bounds.u_min), cfg.bounds.u_max)


def _advance_kinematic(veh: Vehicle, u: float, dt: float):
    """Exact constant-acceleration step; speed clamps at zero (no reversing)."""
    if veh.v + u * dt < 0.0 and u < 0.0:
        t_stop = veh.v / -u
        veh.x += veh.v * t_stop - 0.5 * -u * t_stop * t_stop
        veh.v = 0.0
    else:
        veh.x += veh.v * dt + 0.5 * u * dt * dt
        veh.v += u * dt
    veh.u = u


def _build_snapshot(world: World, u_id: int, c_id: int) -> ScenarioSnapshot:
    cfg = world.config
    u = world.vehicles[u_id]
    c = world.vehicles[c_id]
    fast = tuple(FastLaneVehicle(vid=m.vid, state=m.state(), phi=m.phi)
                 for m in world.lane_vehicles(LANE_FAST) if m.role == ROLE_CAV)
    return ScenarioSnapshot(t=world.t, u_id=u_id, u_state=u.state(),
                            c_id=c_id, c_state=c.state(), c_phi=c.phi,
                            c_d_start=c.d_start, fast_lane=fast,
                            delta=cfg.delta)


def _try_start_maneuver(world: World):
    cfg = world.config
    if cfg.mode == MODE_NO_COOPERATION:
        return
    if world.active is not None or world.t < world.wait_until:
        return
    found = identify_C(world)
    if found is None:
        return
    u_id, c_id = found
    u = world.vehicles[u_id]
    c = world.vehicles[c_id]
    if u.x <= c.x or not should_trigger(u.x, c.x, c.d_start):
        return
    # do not start a maneuver that would outrun the highway
    horizon = cfg.params.T_th + cfg.params.t_lat
    if c.x + cfg.ocp_speeds.v_max * horizon > cfg.highway_length:
        return
    snapshot = _build_snapshot(world, u_id, c_id)
    policy = POLICY_SELFISH if cfg.mode == MODE_VEHICLE_CENTRIC else POLICY_SYSTEM
    plan = plan_maneuver(snapshot, cfg.params, cfg.bounds, cfg.ocp_speeds,
                         policy=policy, relaxation_enabled=cfg.relaxation_enabled)
    index = len(world.log.records)
    if plan.succeeded:
        world.active = _ActiveManeuver(plan=plan, c_id=c_id,
                                       i_id=plan.pair[0], i1_id=plan.pair[1],
                                       record_index=index)
        world.log.append(ManeuverRecord(
            index=index, t0=plan.t0, tf=plan.tf, d_star=plan.d_star,
            energies=(plan.traj_C.energy, plan.traj_i.energy, plan.traj_i1.energy),
            status=plan.status))
    else:
        world.log.append(ManeuverRecord(index=index, t0=plan.t0, tf=plan.tf,
                                        d_star=0.0, energies=(0.0, 0.0, 0.0),
                                        status=plan.status))
        world.wait_until = world.t + cfg.abort_wait


def _cancel_active(world: World, reason: str):
    act = world.active
    world.active = None
    records = world.log.records
    rec = records[act.record_index]
    records[act.record_index] = replace(rec, outcome=STATUS_CANCELLED + ":" + reason)
    world.wait_until = world.t + world.config.abort_wait


def _complete_lateral(world: World):
    """Move the lane changer into the fast lane between its cooperating pair."""
    cfg = world.config
    act = world.active
    c = world.vehicles.get(act.c_id)
    veh_i = world.vehicles.get(act.i_id)
    veh_i1 = world.vehicles.get(act.i1_id)
    if c is None or c.lane != LANE_SLOW:
        _cancel_active(world, "lane changer left the road")
        return
    if veh_i is not None and veh_i.x - c.x < safe_distance(c.v, c.safety(cfg.delta)) - 1e-3:
        _cancel_active(world, "front gap collapsed during the lateral phase")
        return
    if veh_i1 is not None and c.x - veh_i1.x < \
            safe_distance(veh_i1.v, veh_i1.safety(cfg.delta)) - 1e-3:
        _cancel_active(world, "rear gap collapsed during the lateral phase")
        return
    world.lanes[LANE_SLOW].remove(c.vid)
    ids = world.lanes[LANE_FAST]
    pos = 0
    while pos < len(ids) and world.vehicles[ids[pos]].x > c.x:
        pos += 1
    ids.insert(pos, c.vid)
    c.lane = LANE_FAST
    world.maneuver_energy += (act.plan.traj_C.energy + act.plan.traj_i.energy
                              + act.plan.traj_i1.energy)
    records = world.log.records
    rec = records[act.record_index]
    records[act.record_index] = replace(rec, outcome=STATUS_COMPLETED)
    world.active = None


def spawn(world: World):
    """Poisson-thinned arrivals at flow/2 per lane; insertion defers when the
    entrance gap cannot admit a safe speed."""
    cfg = world.config
    # keep the slow bottleneck alive: respawn the uncontrolled leader
    has_u = any(v.role == ROLE_U for v in world.vehicles.values())
    if not has_u and cfg.persistent_u and world.t >= cfg.u_spawn_time:
        blocked = any(v.x - cfg.u_start_x < cfg.vehicle_length + cfg.delta
                      and v.x >= cfg.u_start_x
                      for v in world.lane_vehicles(LANE_SLOW))
        rear_clear = all(v.x < cfg.u_start_x - cfg.vehicle_length - cfg.delta
                         or v.x > cfg.u_start_x
                         for v in world.lane_vehicles(LANE_SLOW))
        if not blocked and rear_clear:
            _new_vehicle(world, LANE_SLOW, ROLE_U, cfg.u_start_x, cfg.vU)

    p = 0.5 * cfg.flow * cfg.dt / 3600.0
    for lane in (LANE_SLOW, LANE_FAST):
        if world.rng.uniform() >= p:
            continue
        ids = world.lanes[lane]
        leader = world.vehicles[ids[-1]] if ids else None
        if leader is None:
            v_ins = cfg.v_desired_spawn
        else:
            gap_net = leader.x - 0.0 - cfg.vehicle_length
            if gap_net <= cfg.delta:
                world.spawn_deferrals += 1
                continue
            phi_probe = cfg.phi_dist.mean + cfg.idm_headway_buffer
            v_safe = (gap_net - cfg.delta) / phi_probe
            v_ins = min(cfg.v_desired_spawn, max(v_safe, 0.0), )
            if v_ins < 1.0:
                world.spawn_deferrals += 1
                continue
        role = ROLE_CAV if world.rng.uniform() < cfg.cav_penetration else ROLE_BACKGROUND
        _new_vehicle(world, lane, role, 0.0, v_ins)


def _record_crossings_and_exits(world: World, prev_x: dict[int, float]):
    cfg = world.config
    gone = []
    for vid, veh in world.vehicles.items():
        x0 = prev_x.get(vid)
        if x0 is None:
            continue
        if veh.crossed_at is None and x0 <= cfg.measurement_point < veh.x:
            frac = (cfg.measurement_point - x0) / max(veh.x - x0, 1e-12)
            t_cross = world.t - cfg.dt + frac * cfg.dt
            veh.crossed_at = t_cross
            world.crossings.append((t_cross, vid, veh.lane, veh.role))
        if veh.x > cfg.highway_length:
            gone.append(vid)
    for vid in gone:
        veh = world.vehicles[vid]
        world.exits.append((vid, veh.spawn_t, world.t))
        world.lanes[veh.lane].remove(vid)
        del world.vehicles[vid]


def _check_lane_order(world: World):
    for lane, ids in world.lanes.items():
        xs = [world.vehicles[v].x for v in ids]
        for a, b, ia, ib in zip(xs, xs[1:], ids, ids[1:]):
            if b > a + 1e-9:
                raise SimInvariantError(
                    f"lane order violated in {lane}: vehicle {ib} passed {ia}")
            gap = a - b - world.config.vehicle_length
            if gap < -1e-6:
                raise SimInvariantError(
                    f"vehicle overlap in {lane}: {ib} into {ia} (gap {gap:.3f})")


def step(world: World):
    """Advance one simulation step: maneuver lifecycle, controls, exact
    kinematics, crossings/exits, spawning, and invariant checks."""
    cfg = world.config
    dt = cfg.dt

    # maneuver lifecycle at the step boundary
    if world.active is not None:
        act = world.active
        if world.t >= act.plan.tf + cfg.params.t_lat:
            _complete_lateral(world)
    _try_start_maneuver(world)

    act = world.active
    controlled: dict[int, str] = {}
    if act is not None:
        controlled[act.c_id] = "C"
        if world.t < act.plan.tf:
            # cooperating pair only follows the plan through the longitudinal
            # phase; afterwards they rejoin car following
            controlled[act.i_id] = "i"
            controlled[act.i1_id] = "i1"

    prev_x = {vid: veh.x for vid, veh in world.vehicles.items()}
    t_next = world.t + dt

    # compute IDM accelerations from the frozen step-start state
    idm_u: dict[int, float] = {}
    for lane in (LANE_SLOW, LANE_FAST):
        ids = world.lanes[lane]
        for idx, vid in enumerate(ids):
            veh = world.vehicles[vid]
            if veh.role == ROLE_U or vid in controlled:
                continue
            leader = world.vehicles[ids[idx - 1]] if idx > 0 else None
            # during the lateral phase the rear cooperating vehicle already
            # follows the (virtual) lane changer about to merge ahead of it
            if (act is not None and world.t >= act.plan.tf
                    and vid == act.i1_id and act.c_id in world.vehicles):
                cveh = world.vehicles[act.c_id]
                virtual = Vehicle(vid=-1, lane=lane, role=ROLE_CAV, x=cveh.x,
                                  v=cveh.v, phi=cveh.phi)
                if leader is None or cveh.x < leader.x:
                    leader = virtual
            idm_u[vid] = _idm_accel(cfg, veh, leader)

    # advance
    for vid, veh in world.vehicles.items():
        if veh.role == ROLE_U:
            veh.x += veh.v * dt
            veh.u = 0.0
        elif vid in controlled and act is not None:
            traj = {"C": act.plan.traj_C, "i": act.plan.traj_i,
                    "i1": act.plan.traj_i1}[controlled[vid]]
            if t_next <= act.plan.tf:
                veh.u = traj.control(t_next)
                veh.x = traj.position(t_next)
                veh.v = traj.speed(t_next)
            elif world.t <= act.plan.tf:
                # step straddles the end of the longitudinal phase: finish the
                # plan exactly, then hold the terminal speed
                v_end = traj.speed(act.plan.tf)
                veh.x = traj.position(act.plan.tf) + v_end * (t_next - act.plan.tf)
                veh.v = v_end
                veh.u = 0.0
            else:
                # lateral phase: the lane changer keeps its terminal speed
                veh.x += veh.v * dt
                veh.u = 0.0
        else:
            _advance_kinematic(veh, idm_u.get(vid, 0.0), dt)

    world.t = t_next
    world.step_index += 1

    # executed-margin monitor for the lane changer vs the slow leader
    if act is not None and world.t <= act.plan.tf and act.c_id in world.vehicles:
        c = world.vehicles[act.c_id]
        u_ids = [v.vid for v in world.lane_vehicles(LANE_SLOW) if v.role == ROLE_U]
        if u_ids:
            u = world.vehicles[u_ids[0]]
            if u.x > c.x:
                margin = (u.x - c.x) - safe_distance(c.v, c.safety(cfg.delta))
                world.min_exec_margin = min(world.min_exec_margin, margin)

    _record_crossings_and_exits(world, prev_x)
    spawn(world)
    _check_lane_order(world)

    if cfg.trace_sample_every and world.step_index % cfg.trace_sample_every == 0:
        for lane in (LANE_SLOW, LANE_FAST):
            for vid in world.lanes[lane]:
                veh = world.vehicles[vid]
                world.trace_rows.append((round(world.t, 6), vid, lane,
                                         veh.x, veh.v, veh.u, veh.role))


def run_simulation(config: SimConfig) -> World:
    world = World(config=config)
    n_steps = int(round(config.duration / config.dt))
    for _ in range(n_steps):
        step(world)
    return world


def export_trace(world: World, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "vehicle_id", "lane", "x", "v", "u", "role"])
        for row in world.trace_rows:
            writer.writerow(row)
