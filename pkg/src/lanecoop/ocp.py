"""Longitudinal optimal-control solvers for the lane-change pipeline.

Three problems are solved here, closed-form first:

* free terminal time for the lane-changing vehicle: minimize
  beta*(tf - t0) + integral(u^2/2) subject to control/speed boxes, a
  constant-time-headway gap to the slow leader, and a terminal-speed window;
* the same problem with the terminal time fixed (used by time relaxation);
* minimum-energy transfer to a fixed terminal position with free terminal
  speed (the cooperating vehicles' problem), plus the reachable terminal
  interval under the boxes.

The control family underlying every solver is u(t) = clip(a + b*t) with
speed-limit hold arcs, which contains the Pontryagin structures for this
problem class (affine unconstrained arcs, saturated arcs, speed-boundary
coasts).  Candidate structures are resolved by scalar root-finding on the
family parameters and validated by dense sampling; an independent
discretized oracle (oracle.py) cross-checks energies in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    Arc,
    ControlBounds,
    ManeuverParams,
    SafetyParams,
    SpeedBounds,
    Trajectory,
    VehicleState,
    safe_distance,
)

__all__ = [
    "CavCSolution",
    "TerminalInterval",
    "InfeasibleOCP",
    "UnreachableTarget",
    "SHAPE_ACCEL_ONLY",
    "SHAPE_DECEL_THEN_ACCEL",
    "SHAPE_DECEL_ONLY",
    "SHAPE_DEGENERATE",
    "feasible_terminal_interval",
    "solve_energy_fixed_endpoint",
    "min_energy_fixed_time_free_endpoint_cost",
    "solve_cav_c_free_time",
    "free_time_cost_profile",
    "classify_shape",
    "margin_min",
    "validate_cav_c_trajectory",
]

SHAPE_ACCEL_ONLY = "accel_only"
SHAPE_DECEL_THEN_ACCEL = "decel_then_accel"
SHAPE_DECEL_ONLY = "decel_only"
SHAPE_DEGENERATE = "degenerate_zero_time"

_MARGIN_TOL = 1e-9
_EDGE_TOL = 1e-9


class InfeasibleOCP(Exception):
    """No admissible control meets the constraints; carries a diagnostic."""

    def __init__(self, message: str, smallest_feasible_tf: float | None = None):
        super().__init__(message)
        self.smallest_feasible_tf = smallest_feasible_tf


class UnreachableTarget(ValueError):
    """Requested terminal position lies outside the reachable interval."""


@dataclass(frozen=True)
class TerminalInterval:
    x_lo: float
    x_hi: float

    def contains(self, x: float, tol: float = 1e-6) -> bool:
        return self.x_lo - tol <= x <= self.x_hi + tol


@dataclass(frozen=True)
class CavCSolution:
    tf_star: float
    traj: Trajectory
    cost: float
    terminal_speed: float
    shape: str


# ---------------------------------------------------------------------------
# exact propagation of u(t) = clip(a + b*s) with speed-limit hold arcs
# ---------------------------------------------------------------------------

def _clip(val: float, lo: float, hi: float) -> float:
    return lo if val < lo else hi if val > hi else val


def _quad_first_root(c0: float, c1: float, c2: float, s_max: float) -> float | None:
    """Smallest root of c0 + c1*s + 0.5*c2*s^2 = 0 in (tiny, s_max], or None."""
    tiny = 1e-12
    roots = []
    if abs(c2) < 1e-14:
        if abs(c1) > 1e-14:
            roots.append(-c0 / c1)
    else:
        disc = c1 * c1 - 2.0 * c2 * c0
        if disc >= 0.0:
            sq = math.sqrt(disc)
            roots.append((-c1 - sq) / c2)
            roots.append((-c1 + sq) / c2)
    best = None
    for r in roots:
        if tiny < r <= s_max + 1e-12:
            if best is None or r < best:
                best = r
    return best


def propagate_clipped_affine(v0: float, a: float, b: float, T: float,
                             bounds: ControlBounds, speeds: SpeedBounds
                             ) -> list[tuple[float, float, float]]:
    """Integrate u(s) = clip(a + b*s, u_min, u_max) over [0, T] with speed holds.

    While the speed sits on v_min (resp. v_max) and the raw control still
    pushes outward, the effective control is zero; the vehicle re-enters the
    clipped-affine law when the raw control changes sign.  Returns exact
    (duration, u_at_piece_start, u_slope) pieces.
    """
    if T <= 0.0:
        return []
    pieces: list[tuple[float, float, float]] = []
    s = 0.0
    v = v0
    guard = 0
    while s < T - 1e-12:
        guard += 1
        if guard > 100:
            raise RuntimeError("propagation failed to terminate")
        raw = a + b * s
        at_vmin = v <= speeds.v_min + 1e-12
        at_vmax = v >= speeds.v_max - 1e-12
        if at_vmin and _clip(raw, bounds.u_min, bounds.u_max) < -1e-14:
            # hold at the speed floor until the raw control turns nonnegative
            s_exit = T if b <= 0.0 else min(T, -a / b) if -a / b > s else T
            if b > 0.0 and -a / b > s:
                s_exit = min(T, -a / b)
            pieces.append((s_exit - s, 0.0, 0.0))
            v = speeds.v_min
            s = s_exit
            continue
        if at_vmax and _clip(raw, bounds.u_min, bounds.u_max) > 1e-14:
            s_exit = T
            if b < 0.0 and -a / b > s:
                s_exit = min(T, -a / b)
            pieces.append((s_exit - s, 0.0, 0.0))
            v = speeds.v_max
            s = s_exit
            continue
        # current clipped regime and its end
        if raw <= bounds.u_min + 1e-12 and b <= 0.0:
            u_here, slope, s_regime = bounds.u_min, 0.0, T
        elif raw >= bounds.u_max - 1e-12 and b >= 0.0:
            u_here, slope, s_regime = bounds.u_max, 0.0, T
        elif raw < bounds.u_min - 1e-14:
            u_here, slope = bounds.u_min, 0.0
            s_regime = min(T, (bounds.u_min - a) / b)
        elif raw > bounds.u_max + 1e-14:
            u_here, slope = bounds.u_max, 0.0
            s_regime = min(T, (bounds.u_max - a) / b)
        else:
            u_here, slope = raw, b
            s_regime = T
            if b > 0.0:
                s_regime = min(T, (bounds.u_max - a) / b)
            elif b < 0.0:
                s_regime = min(T, (bounds.u_min - a) / b)
        if s_regime <= s + 1e-14:
            s_regime = min(T, s + 1e-12)
        # speed-bound hit inside this regime?
        span = s_regime - s
        hit = None
        hit_bound = None
        for vb in (speeds.v_min, speeds.v_max):
            r = _quad_first_root(v - vb, u_here, slope, span)
            if r is not None and (hit is None or r < hit):
                hit = r
                hit_bound = vb
        if hit is not None:
            pieces.append((hit, u_here, slope))
            v = hit_bound
            s = s + hit
        else:
            pieces.append((span, u_here, slope))
            v = v + u_here * span + 0.5 * slope * span * span
            s = s_regime
    return pieces


def _build_traj(t0: float, x0: float, v0: float,
                pieces: list[tuple[float, float, float]]) -> Trajectory:
    return Trajectory.from_controls(t0, x0, v0, pieces)


def margin_min(traj: Trajectory, leader_x_t0: float, leader_v: float,
               safety: SafetyParams) -> float:
    """Exact minimum over [t0, tf] of gap-to-leader minus the required gap.

    The leader runs at constant speed from leader_x_t0 at traj.t0.
    """
    best = math.inf
    for arc in traj.arcs:
        dt0 = arc.t_start - traj.t0
        m_start = (leader_x_t0 + leader_v * dt0 - arc.x0
                   - safety.delta - safety.phi * arc.v0)
        # m(s) = m_start + (lv - v0)s - 0.5 u0 s^2 - du s^3/6 - phi(u0 s + 0.5 du s^2)
        c1 = (leader_v - arc.v0) - safety.phi * arc.u0
        c2 = -arc.u0 - safety.phi * arc.du
        c3 = -arc.du
        dur = arc.duration

        def m_of(s: float) -> float:
            return m_start + c1 * s + 0.5 * c2 * s * s + c3 * s ** 3 / 6.0

        candidates = [0.0, dur]
        # interior critical points: c1 + c2 s + 0.5 c3 s^2 = 0
        if abs(c3) < 1e-14:
            if abs(c2) > 1e-14:
                candidates.append(-c1 / c2)
        else:
            disc = c2 * c2 - 2.0 * c3 * c1
            if disc >= 0.0:
                sq = math.sqrt(disc)
                candidates.append((-c2 - sq) / c3)
                candidates.append((-c2 + sq) / c3)
        for s in candidates:
            if -1e-12 <= s <= dur + 1e-12:
                best = min(best, m_of(min(max(s, 0.0), dur)))
    return best


# ---------------------------------------------------------------------------
# reachable terminal interval and the fixed-endpoint solver
# ---------------------------------------------------------------------------

def feasible_terminal_interval(i0: VehicleState, t0: float, tf: float,
                               bounds: ControlBounds, speeds: SpeedBounds
                               ) -> TerminalInterval:
    """Positions reachable at tf under the control and speed boxes.

    Extremals are bang-then-hold: full acceleration until the speed cap, then
    cruise (and symmetrically for the floor).
    """
    if tf < t0:
        raise ValueError("tf must not precede t0")
    T = tf - t0

    def extreme(u: float, v_stop: float) -> float:
        t_sat = max(0.0, (v_stop - i0.v) / u) if u != 0.0 else math.inf
        if t_sat >= T:
            return i0.x + i0.v * T + 0.5 * u * T * T
        d_sat = i0.v * t_sat + 0.5 * u * t_sat * t_sat
        return i0.x + d_sat + v_stop * (T - t_sat)

    return TerminalInterval(x_lo=extreme(bounds.u_min, speeds.v_min),
                            x_hi=extreme(bounds.u_max, speeds.v_max))


def _try_brentq(f, lo: float, hi: float, tol: float = 1e-12) -> float | None:
    """Root in [lo, hi] when bracketed; None otherwise (tolerating flat ends)."""
    f_lo, f_hi = f(lo), f(hi)
    if abs(f_lo) <= 1e-9:
        return lo
    if abs(f_hi) <= 1e-9:
        return hi
    if f_lo * f_hi > 0.0:
        return None
    return _brentq(f, lo, hi, tol=tol)


def _brentq(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Bisection-with-secant root finder (monotone bracket assumed)."""
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0.0:
        raise ValueError("root not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        # secant proposal, guarded to the bracket interior
        if f_hi != f_lo:
            sec = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            if lo + 0.1 * (hi - lo) < sec < hi - 0.1 * (hi - lo):
                mid = sec
        f_mid = f(mid)
        if abs(f_mid) == 0.0 or hi - lo < tol:
            return mid
        if f_lo * f_mid <= 0.0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def solve_energy_fixed_endpoint(i0: VehicleState, t0: float, tf: float, xf: float,
                                bounds: ControlBounds, speeds: SpeedBounds
                                ) -> Trajectory:
    """Minimum-energy transfer to position xf at tf with free terminal speed.

    The unconstrained optimum is the affine control u(t) = c*(tf - t)
    vanishing at tf (free-terminal-speed transversality); saturation and
    speed caps are handled by clipping the same family, with the shooting
    parameter c resolved by root-finding on the terminal position.
    """
    T = tf - t0
    if T < 0.0:
        raise ValueError("tf must not precede t0")
    interval = feasible_terminal_interval(i0, t0, tf, bounds, speeds)
    if not interval.contains(xf, tol=1e-6):
        raise UnreachableTarget(
            f"target {xf:.3f} outside reachable interval "
            f"[{interval.x_lo:.3f}, {interval.x_hi:.3f}]")
    if T == 0.0:
        return Trajectory.at_rest_point(t0, i0)
    xf = min(max(xf, interval.x_lo), interval.x_hi)

    def end_x(c: float) -> float:
        pieces = propagate_clipped_affine(i0.v, c * T, -c, T, bounds, speeds)
        traj = _build_traj(t0, i0.x, i0.v, pieces)
        return traj.position(tf)

    # the pure affine ramp covers the interior; compute it directly when valid
    lam = 3.0 * (i0.v * T - (xf - i0.x)) / T ** 3
    c_unc = -lam
    u_start = c_unc * T
    v_end = i0.v + 0.5 * c_unc * T * T
    if (bounds.u_min - _EDGE_TOL <= u_start <= bounds.u_max + _EDGE_TOL
            and speeds.contains(v_end) and speeds.contains(i0.v)
            and (u_start >= 0) == (v_end >= i0.v)):
        pieces = [(T, _clip(u_start, bounds.u_min, bounds.u_max), -_clip_slope(u_start, c_unc))]
        traj = _build_traj(t0, i0.x, i0.v, pieces)
        if abs(traj.position(tf) - xf) < 1e-6:
            return traj

    c_hi = 4.0 * max(bounds.u_max, -bounds.u_min) / T
    c_lo = -c_hi
    # expand the bracket if the extremes do not straddle the target
    for _ in range(60):
        if end_x(c_lo) <= xf:
            break
        c_lo *= 2.0
    for _ in range(60):
        if end_x(c_hi) >= xf:
            break
        c_hi *= 2.0
    c_star = _brentq(lambda c: end_x(c) - xf, c_lo, c_hi, tol=1e-13)
    pieces = propagate_clipped_affine(i0.v, c_star * T, -c_star, T, bounds, speeds)
    traj = _build_traj(t0, i0.x, i0.v, pieces)

    # if the ramp runs into a speed cap non-tangentially, re-solve with the
    # optimal structure: ramp vanishing exactly at the cap entry, then hold
    v_end_traj = traj.speed(tf)
    if v_end_traj >= speeds.v_max - 1e-9 and c_star > 0.0:
        tangent = _fixed_endpoint_hold(i0, t0, T, xf, bounds, speeds, speeds.v_max)
        if tangent is not None and tangent.energy < traj.energy - 1e-12:
            traj = tangent
    elif v_end_traj <= speeds.v_min + 1e-9 and c_star < 0.0:
        tangent = _fixed_endpoint_hold(i0, t0, T, xf, bounds, speeds, speeds.v_min)
        if tangent is not None and tangent.energy < traj.energy - 1e-12:
            traj = tangent
    return traj


def _fixed_endpoint_hold(i0: VehicleState, t0: float, T: float, xf: float,
                         bounds: ControlBounds, speeds: SpeedBounds,
                         v_bound: float) -> Trajectory | None:
    """Fixed-endpoint structure that enters a speed bound tangentially at t_e
    (u -> 0 there) and holds it to tf; t_e is resolved against the target.

    The approach prefix is the pure ramp u = c*(t_e - s) when its start value
    fits the control box, and a saturated arc followed by a ramp vanishing at
    t_e otherwise.
    """
    dv = v_bound - i0.v
    if abs(dv) < 1e-12:
        return None
    cap = bounds.u_max if dv > 0 else -bounds.u_min
    t_bang = abs(dv) / cap          # earliest possible arrival at the bound
    t_ramp = 2.0 * abs(dv) / cap    # earliest tangential arrival without saturation
    if t_bang > T:
        return None

    def assemble(t_e: float) -> Trajectory | None:
        sign = 1.0 if dv > 0 else -1.0
        if t_e >= t_ramp - 1e-12:
            c = 2.0 * dv / (t_e * t_e)
            prefix = [(t_e, c * t_e, -c)]
        elif t_e >= t_bang - 1e-12:
            s0 = 2.0 * abs(dv) / cap - t_e
            tail = t_e - s0
            if tail <= 1e-12:
                prefix = [(t_e, sign * cap, 0.0)]
            else:
                prefix = [(s0, sign * cap, 0.0), (tail, sign * cap, -sign * cap / tail)]
        else:
            return None
        prefix.append((T - t_e, 0.0, 0.0))
        return _build_traj(t0, i0.x, i0.v, prefix)

    def end_x(t_e: float) -> float:
        traj = assemble(t_e)
        return traj.position(t0 + T) if traj is not None else math.nan

    lo, hi = t_bang, T
    x_lo, x_hi = end_x(lo), end_x(hi)
    if math.isnan(x_lo) or math.isnan(x_hi):
        return None
    if not (min(x_lo, x_hi) - 1e-9 <= xf <= max(x_lo, x_hi) + 1e-9):
        return None
    # x(T) is monotone in t_e (later entry covers less ground on the cap)
    if x_lo <= x_hi:
        t_e = _brentq(lambda t: end_x(t) - xf, lo, hi, tol=1e-12)
    else:
        t_e = _brentq(lambda t: xf - end_x(t), lo, hi, tol=1e-12)
    return assemble(t_e)


def _clip_slope(u_start: float, c: float) -> float:
    # helper for the direct-ramp shortcut: slope is -c when unclipped
    return c


# ---------------------------------------------------------------------------
# fixed-time minimum-energy solve for the lane changer (terminal-speed window,
# safety gap to the constant-speed leader)
# ---------------------------------------------------------------------------

def _terminal_window(params: ManeuverParams, speeds: SpeedBounds) -> tuple[float, float]:
    w_lo, w_hi = params.speed_window()
    return max(w_lo, speeds.v_min), min(w_hi, speeds.v_max)


def _reach_window(v0: float, T: float, bounds: ControlBounds, speeds: SpeedBounds
                  ) -> tuple[float, float]:
    return (max(speeds.v_min, v0 + bounds.u_min * T),
            min(speeds.v_max, v0 + bounds.u_max * T))


def _const_candidate(c0: VehicleState, gap0: float, v_leader: float, t0: float,
                     T: float, v_f: float, bounds: ControlBounds,
                     speeds: SpeedBounds, safety: SafetyParams) -> Trajectory | None:
    u_c = (v_f - c0.v) / T
    if not (bounds.u_min - _EDGE_TOL <= u_c <= bounds.u_max + _EDGE_TOL):
        return None
    u_c = _clip(u_c, bounds.u_min, bounds.u_max)
    traj = _build_traj(t0, c0.x, c0.v, [(T, u_c, 0.0)])
    if margin_min(traj, c0.x + gap0, v_leader, safety) < -_MARGIN_TOL:
        return None
    return traj


def _min_feasible_slope(make_traj, b_cap: float) -> Trajectory | None:
    """Least b >= 0 whose trajectory is feasible; the slope is the multiplier
    of the binding gap constraint, so the least feasible slope is the
    minimum-energy family member."""
    b_feasible = None
    b_lo = 0.0
    b_probe = max(1e-4, 1e-3 * b_cap)
    scan = []
    while b_probe <= b_cap:
        scan.append(b_probe)
        b_probe *= 2.0
    scan.append(b_cap)
    for b in scan:
        if make_traj(b) is not None:
            b_feasible = b
            break
        b_lo = b
    if b_feasible is None:
        return None
    for _ in range(60):
        if b_feasible - b_lo < 1e-6 * max(1.0, b_feasible):
            break
        mid = 0.5 * (b_lo + b_feasible)
        if make_traj(mid) is not None:
            b_feasible = mid
        else:
            b_lo = mid
    return make_traj(b_feasible)


def _dip_candidate(c0: VehicleState, gap0: float, v_leader: float, t0: float,
                   T: float, v_f: float, bounds: ControlBounds,
                   speeds: SpeedBounds, safety: SafetyParams) -> Trajectory | None:
    """Minimum-energy dip reaching v_f at T without violating the gap.

    Two structures cover the Pontryagin solutions: a single clipped-affine
    control (gap binding at the terminal time, trough above the speed floor),
    and a symmetric-slope pair of ramps joined by a coast on the speed floor
    entered and left tangentially (u -> 0 at both junctions).
    """
    leader_x0 = c0.x + gap0

    def check(traj: Trajectory | None) -> Trajectory | None:
        if traj is None:
            return None
        if abs(traj.speed(t0 + T) - v_f) > 1e-6:
            return None
        if margin_min(traj, leader_x0, v_leader, safety) < -_MARGIN_TOL:
            return None
        return traj

    def single_slope(b: float) -> Trajectory | None:
        def v_end(a: float) -> float:
            v = c0.v
            for dur, u0, du in propagate_clipped_affine(c0.v, a, b, T, bounds, speeds):
                v += u0 * dur + 0.5 * du * dur * dur
            return v

        a_lo, a_hi = bounds.u_min - b * T, bounds.u_max
        if v_end(a_hi) < v_f - 1e-9 or v_end(a_lo) > v_f + 1e-9:
            return None
        a = _brentq(lambda a: v_end(a) - v_f, a_lo, a_hi, tol=1e-12)
        pieces = propagate_clipped_affine(c0.v, a, b, T, bounds, speeds)
        return check(_build_traj(t0, c0.x, c0.v, pieces))

    def _leg_to_zero(dv: float, b: float, cap: float, descending: bool
                     ) -> list[tuple[float, float, float]]:
        """Ramp leg joining the coast tangentially (u = 0 at the junction) at
        slope b, saturating at the control cap away from it.  dv > 0 is the
        speed-change magnitude, cap > 0 the control magnitude limit; pieces
        come in forward time order (down-leg ends, up-leg starts, at u = 0).
        """
        if dv <= 1e-12:
            return []
        if 2.0 * b * dv <= cap * cap + 1e-12:
            dur = math.sqrt(2.0 * dv / b)
            if descending:
                return [(dur, -b * dur, b)]      # u: -b*dur -> 0
            return [(dur, 0.0, b)]               # u: 0 -> +b*dur
        tail = cap / b
        sat = dv / cap - cap / (2.0 * b)
        if descending:
            return [(sat, -cap, 0.0), (tail, -cap, b)]
        return [(tail, 0.0, b), (sat, cap, 0.0)]

    def floor_coast(b: float) -> Trajectory | None:
        # down-ramp to the speed floor with u -> 0 at entry, coast, then an
        # up-ramp leaving tangentially; both legs share the slope b
        if c0.v <= speeds.v_min + 1e-9 or v_f <= speeds.v_min + 1e-9 or b <= 0.0:
            return None
        down = _leg_to_zero(c0.v - speeds.v_min, b, -bounds.u_min, descending=True)
        up = _leg_to_zero(v_f - speeds.v_min, b, bounds.u_max, descending=False)
        if down is None or up is None:
            return None
        t1 = sum(p[0] for p in down)
        dur_up = sum(p[0] for p in up)
        coast = T - t1 - dur_up
        if coast < 0.0:
            return None
        pieces = list(down) + [(coast, 0.0, 0.0)] + list(up)
        return check(_build_traj(t0, c0.x, c0.v, pieces))

    b_cap = 400.0 * (bounds.u_max - bounds.u_min) / max(T, 1e-3) / max(T, 1e-3)
    best = None
    for family in (single_slope, floor_coast):
        traj = _min_feasible_slope(family, b_cap)
        if traj is not None and (best is None or traj.energy < best.energy):
            best = traj
    return best


def _solve_min_energy_to_target(c0: VehicleState, gap0: float, v_leader: float,
                                t0: float, T: float, v_f: float,
                                bounds: ControlBounds, speeds: SpeedBounds,
                                safety: SafetyParams) -> Trajectory | None:
    lo, hi = _reach_window(c0.v, T, bounds, speeds)
    if not (lo - 1e-9 <= v_f <= hi + 1e-9):
        return None
    traj = _const_candidate(c0, gap0, v_leader, t0, T, v_f, bounds, speeds, safety)
    if traj is not None:
        return traj
    return _dip_candidate(c0, gap0, v_leader, t0, T, v_f, bounds, speeds, safety)


def min_energy_fixed_time_free_endpoint_cost(
        c0: VehicleState, u0: VehicleState, t0: float, tf: float,
        params: ManeuverParams, bounds: ControlBounds, speeds: SpeedBounds,
        safety: SafetyParams) -> tuple[float, Trajectory]:
    """Minimum-energy trajectory over the fixed horizon [t0, tf].

    The terminal speed must land in the tolerance window around the desired
    speed; of the admissible window edges the higher feasible one is taken
    (the maneuver exists to reach free-flow speed, so the tolerance is spent
    upward whenever the gap to the slow leader allows it).  Returns the
    energy and the trajectory; raises InfeasibleOCP when no admissible
    control exists, which signals the planner to relax or abort.
    """
    gap0 = u0.x - c0.x
    m0 = gap0 - safe_distance(c0.v, safety)
    if m0 < -1e-6:
        raise InfeasibleOCP("safety constraint already violated at t0")
    T = tf - t0
    w_lo, w_hi = _terminal_window(params, speeds)
    if w_lo > w_hi + 1e-12:
        raise InfeasibleOCP("terminal-speed window empty under the speed box")
    if T < 0.0:
        raise InfeasibleOCP("terminal time precedes start time")
    if T == 0.0:
        if w_lo - 1e-9 <= c0.v <= w_hi + 1e-9:
            traj = Trajectory.at_rest_point(t0, c0)
            return 0.0, traj
        raise InfeasibleOCP("zero horizon with terminal speed outside the window")

    # coasting is unbeatable when the current speed already qualifies
    if w_lo - 1e-9 <= c0.v <= w_hi + 1e-9:
        coast = _build_traj(t0, c0.x, c0.v, [(T, 0.0, 0.0)])
        if margin_min(coast, u0.x, u0.v, safety) >= -_MARGIN_TOL:
            return 0.0, coast

    for v_f in (w_hi, w_lo):
        traj = _solve_min_energy_to_target(c0, gap0, u0.v, t0, T, v_f,
                                           bounds, speeds, safety)
        if traj is not None:
            return traj.energy, traj
    raise InfeasibleOCP(f"no admissible control reaches the terminal window by tf={tf:.3f}")


# ---------------------------------------------------------------------------
# free-terminal-time solve
# ---------------------------------------------------------------------------

def _ramp_energy(dv: float, T: float) -> float:
    return 2.0 * dv * dv / (3.0 * T)


def _ramp_traj(c0: VehicleState, t0: float, T: float, v_f: float) -> Trajectory:
    u0 = 2.0 * (v_f - c0.v) / T
    return _build_traj(t0, c0.x, c0.v, [(T, u0, -u0 / T)])


def _ramp_domain(c0: VehicleState, u0state: VehicleState, t0: float, v_f: float,
                 T_th: float, bounds: ControlBounds, speeds: SpeedBounds,
                 safety: SafetyParams) -> tuple[float, float] | None:
    """Feasible horizon range for the single-arc ramp reaching v_f with u(tf)=0."""
    dv = v_f - c0.v
    if abs(dv) < 1e-12:
        return None
    cap = bounds.u_max if dv > 0 else -bounds.u_min
    T_min = 2.0 * abs(dv) / cap
    if T_min > T_th + 1e-12:
        return None
    if not (speeds.contains(c0.v) and speeds.contains(v_f)):
        return None

    def ok(T: float) -> bool:
        traj = _ramp_traj(c0, t0, T, v_f)
        return margin_min(traj, u0state.x, u0state.v, safety) >= -_MARGIN_TOL

    if not ok(T_min):
        return None
    if ok(T_th):
        return (T_min, T_th)
    lo, hi = T_min, T_th
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return (T_min, lo)


@dataclass(frozen=True)
class _FreeTimeStrategy:
    mode: str                       # "degenerate" | "ramp" | "general"
    v_f: float | None
    domain: tuple[float, float] | None


def _free_time_strategy(c0: VehicleState, u0state: VehicleState, t0: float,
                        params: ManeuverParams, bounds: ControlBounds,
                        speeds: SpeedBounds, safety: SafetyParams) -> _FreeTimeStrategy:
    w_lo, w_hi = _terminal_window(params, speeds)
    gap0 = u0state.x - c0.x
    if w_lo - 1e-9 <= c0.v <= w_hi + 1e-9:
        # coasting through the lateral phase must stay safe for a no-op solve
        horizon = max(params.t_lat, 1e-3)
        coast = _build_traj(t0, c0.x, c0.v, [(horizon, 0.0, 0.0)])
        if (gap0 - safe_distance(c0.v, safety) >= -1e-9
                and margin_min(coast, u0state.x, u0state.v, safety) >= -_MARGIN_TOL):
            return _FreeTimeStrategy(mode="degenerate", v_f=c0.v, domain=None)
    for v_f in (w_hi, w_lo):
        dom = _ramp_domain(c0, u0state, t0, v_f, params.T_th, bounds, speeds, safety)
        if dom is not None:
            return _FreeTimeStrategy(mode="ramp", v_f=v_f, domain=dom)
    return _FreeTimeStrategy(mode="general", v_f=None, domain=None)


def _general_energy(c0, u0state, t0, T, params, bounds, speeds, safety) -> float:
    try:
        energy, _ = min_energy_fixed_time_free_endpoint_cost(
            c0, u0state, t0, t0 + T, params, bounds, speeds, safety)
        return energy
    except InfeasibleOCP:
        return math.inf


def _bang_coast_feasible(c0: VehicleState, gap0: float, v_leader: float, T: float,
                         v_f: float, bounds: ControlBounds, speeds: SpeedBounds,
                         safety: SafetyParams) -> bool:
    """Necessary-and-sufficient feasibility probe via the maximal-slack
    structure: brake at u_min to the lowest dip speed the horizon and the
    speed floor allow, coast there, full throttle to v_f at the last moment.
    """
    lo, hi = _reach_window(c0.v, T, bounds, speeds)
    if not (lo - 1e-9 <= v_f <= hi + 1e-9):
        return False
    brake = -bounds.u_min
    # deepest dip that still fits the horizon with no coast
    v_fit = ((c0.v / brake + v_f / bounds.u_max) - T) / (1.0 / brake + 1.0 / bounds.u_max)
    v_low = min(max(v_fit, speeds.v_min), c0.v, v_f)
    t1 = (c0.v - v_low) / brake
    t2 = (v_f - v_low) / bounds.u_max if v_f > v_low else 0.0
    tc = T - t1 - t2
    if tc < -1e-9:
        return False
    pieces = []
    if t1 > 0.0:
        pieces.append((t1, bounds.u_min, 0.0))
    if tc > 0.0:
        pieces.append((tc, 0.0, 0.0))
    if t2 > 0.0:
        pieces.append((t2, bounds.u_max, 0.0))
    if not pieces:
        pieces = [(T, 0.0, 0.0)]
    traj = _build_traj(0.0, c0.x, c0.v, pieces)
    return margin_min(traj, c0.x + gap0, v_leader, safety) >= -_MARGIN_TOL


def _general_min_feasible_T(c0, u0state, t0, v_f, T_lb, T_th, bounds, speeds, safety
                            ) -> float | None:
    gap0 = u0state.x - c0.x

    def feas(T: float) -> bool:
        return _bang_coast_feasible(c0, gap0, u0state.v, T, v_f, bounds, speeds, safety)

    if feas(T_lb):
        return T_lb
    if not feas(T_th):
        return None
    lo, hi = T_lb, T_th
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feas(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _golden_min(f, lo: float, hi: float, tol: float = 1e-3) -> float:
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def classify_shape(traj: Trajectory, tol: float = 1e-6) -> str:
    if traj.duration <= 0.0:
        return SHAPE_DEGENERATE
    u_lo = math.inf
    u_hi = -math.inf
    first_sign = 0
    for arc in traj.arcs:
        for u in (arc.control(arc.t_start), arc.control(arc.t_end)):
            u_lo = min(u_lo, u)
            u_hi = max(u_hi, u)
            if first_sign == 0 and abs(u) > tol:
                first_sign = 1 if u > 0 else -1
    if u_lo >= -tol and u_hi <= tol:
        return SHAPE_DEGENERATE
    if u_lo >= -tol:
        return SHAPE_ACCEL_ONLY
    if u_hi <= tol:
        return SHAPE_DECEL_ONLY
    return SHAPE_DECEL_THEN_ACCEL if first_sign < 0 else SHAPE_ACCEL_ONLY


def solve_cav_c_free_time(c0: VehicleState, u0state: VehicleState, t0: float,
                          params: ManeuverParams, bounds: ControlBounds,
                          speeds: SpeedBounds, safety: SafetyParams) -> CavCSolution:
    """Free-terminal-time solve of the combined time/energy maneuver cost.

    Strategy, in order of preference:

    1. if the current speed already sits in the terminal window and coasting
       is safe, no longitudinal phase is needed (degenerate solve);
    2. the planned control is the single affine arc that vanishes at the
       handoff to the lateral phase, reaching the upper window edge when the
       gap allows it and the lower edge otherwise; the horizon minimizes
       beta*T + E(T) within the arc's feasible range;
    3. when no such arc exists within T_th, fall back to the general
       minimum-energy structures and minimize beta*T + E*(T) by a coarse scan
       plus golden-section refinement, with the feasibility cliff located by
       bisection.
    """
    strat = _free_time_strategy(c0, u0state, t0, params, bounds, speeds, safety)
    beta = params.beta

    if strat.mode == "degenerate":
        traj = Trajectory.at_rest_point(t0, c0)
        return CavCSolution(tf_star=t0, traj=traj, cost=0.0,
                            terminal_speed=c0.v, shape=SHAPE_DEGENERATE)

    if strat.mode == "ramp":
        v_f = strat.v_f
        dv = v_f - c0.v
        T_lo, T_hi = strat.domain
        if beta > 1e-12:
            T_unc = abs(dv) * math.sqrt(2.0 / (3.0 * beta))
            T_star = min(max(T_unc, T_lo), T_hi)
        else:
            T_star = T_hi
        traj = _ramp_traj(c0, t0, T_star, v_f)
        cost = beta * T_star + traj.energy
        return CavCSolution(tf_star=t0 + T_star, traj=traj, cost=cost,
                            terminal_speed=traj.speed(t0 + T_star),
                            shape=classify_shape(traj))

    # general mode: the inner solve picks the terminal-speed edge itself; the
    # earliest feasibility cliff across both edges bounds the scan from below
    w_lo, w_hi = _terminal_window(params, speeds)
    cliffs = []
    for v_f in (w_hi, w_lo):
        dv = v_f - c0.v
        cap = bounds.u_max if dv > 0 else -bounds.u_min
        T_lb = abs(dv) / cap if cap > 0 else 0.0
        T_cliff = _general_min_feasible_T(c0, u0state, t0, v_f, max(T_lb, 1e-3),
                                          params.T_th, bounds, speeds, safety)
        if T_cliff is not None:
            cliffs.append(T_cliff)
    if not cliffs:
        # diagnostic: smallest feasible tf beyond T_th, if any
        probe = None
        for v_f in (w_hi, w_lo):
            dv = v_f - c0.v
            cap = bounds.u_max if dv > 0 else -bounds.u_min
            T_lb = abs(dv) / cap if cap > 0 else 0.0
            t = _general_min_feasible_T(c0, u0state, t0, v_f, max(T_lb, 1e-3),
                                        3.0 * params.T_th, bounds, speeds, safety)
            if t is not None and (probe is None or t < probe):
                probe = t
        raise InfeasibleOCP("no feasible maneuver within T_th",
                            smallest_feasible_tf=None if probe is None else t0 + probe)
    T_first = min(cliffs)

    cache: dict[float, float] = {}

    def g(T: float) -> float:
        key = round(T, 6)
        if key in cache:
            return cache[key]
        if T <= 0.0 or T > params.T_th + 1e-9:
            val = math.inf
        else:
            val = beta * T + _general_energy(c0, u0state, t0, T, params, bounds,
                                             speeds, safety)
        cache[key] = val
        return val

    # coarse scan, then a 0.05 s lattice descent so the local-optimality
    # certificate g(T* +/- 0.05) >= g(T*) holds by construction, then a
    # guarded golden refinement inside the lattice cell
    grid = sorted(set(cliffs) | {min(T_first + 0.25 * k, params.T_th)
                                 for k in range(int((params.T_th - T_first) / 0.25) + 2)})
    vals = [g(T) for T in grid]
    k = min(range(len(grid)), key=lambda i: vals[i])
    if math.isinf(vals[k]):
        raise InfeasibleOCP("no feasible maneuver within T_th")
    T_star = grid[k]
    eps = 0.05
    for _ in range(400):
        left = max(T_first, T_star - eps)
        right = min(params.T_th, T_star + eps)
        if g(left) < g(T_star) - 1e-12:
            T_star = left
        elif g(right) < g(T_star) - 1e-12:
            T_star = right
        else:
            break
    refined = _golden_min(g, max(T_first, T_star - eps),
                          min(params.T_th, T_star + eps), tol=1e-3)
    if (g(refined) <= g(T_star)
            and g(max(T_first, refined - eps)) >= g(refined) - 1e-9
            and g(min(params.T_th, refined + eps)) >= g(refined) - 1e-9):
        T_star = refined
    energy, traj = min_energy_fixed_time_free_endpoint_cost(
        c0, u0state, t0, t0 + T_star, params, bounds, speeds, safety)
    return CavCSolution(tf_star=t0 + T_star, traj=traj,
                        cost=beta * T_star + energy,
                        terminal_speed=traj.speed(t0 + T_star),
                        shape=classify_shape(traj))


def free_time_cost_profile(c0: VehicleState, u0state: VehicleState, t0: float,
                           params: ManeuverParams, bounds: ControlBounds,
                           speeds: SpeedBounds, safety: SafetyParams,
                           T: float) -> float:
    """Cost beta*T + E(T) under the same family preference the solver uses.

    Infeasible horizons evaluate to +inf, so local-optimality certificates can
    probe tf* +/- epsilon directly against this profile.
    """
    if T <= 0.0:
        return math.inf
    strat = _free_time_strategy(c0, u0state, t0, params, bounds, speeds, safety)
    if strat.mode == "degenerate":
        return params.beta * T  # any positive horizon only adds time cost
    if strat.mode == "ramp":
        T_lo, T_hi = strat.domain
        if T < T_lo - 1e-9 or T > T_hi + 1e-9:
            return math.inf
        dv = strat.v_f - c0.v
        return params.beta * T + _ramp_energy(dv, T)
    if T > params.T_th + 1e-9:
        return math.inf
    return params.beta * T + _general_energy(c0, u0state, t0, T, params, bounds,
                                             speeds, safety)


def validate_cav_c_trajectory(traj: Trajectory, u0state: VehicleState,
                              params: ManeuverParams, bounds: ControlBounds,
                              speeds: SpeedBounds, safety: SafetyParams,
                              dt: float = 0.01) -> None:
    """Dense-sampled admissibility check; raises InfeasibleOCP on violation."""
    for t in traj.sample_times(dt):
        u = traj.control(t)
        v = traj.speed(t)
        if not (bounds.u_min - 1e-6 <= u <= bounds.u_max + 1e-6):
            raise InfeasibleOCP(f"control bound violated at t={t:.3f}: u={u:.6f}")
        if not (speeds.v_min - 1e-6 <= v <= speeds.v_max + 1e-6):
            raise InfeasibleOCP(f"speed bound violated at t={t:.3f}: v={v:.6f}")
        gap = (u0state.x + u0state.v * (t - traj.t0)) - traj.position(t)
        if gap - safe_distance(v, safety) < -1e-6:
            raise InfeasibleOCP(f"safety margin violated at t={t:.3f}")
    w_lo, w_hi = _terminal_window(params, speeds)
    v_end = traj.speed(traj.tf)
    if traj.duration > 0 and not (w_lo - 1e-6 <= v_end <= w_hi + 1e-6):
        raise InfeasibleOCP(f"terminal speed {v_end:.3f} outside the window")
