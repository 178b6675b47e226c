"""Shared domain types: vehicle states, parameter bundles, and piecewise
trajectories with closed-form kinematics.

All types here are immutable value objects; everything downstream (solvers,
planner, simulator) builds on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

__all__ = [
    "VehicleState",
    "ControlBounds",
    "SpeedBounds",
    "SafetyParams",
    "ManeuverParams",
    "Arc",
    "Trajectory",
    "safe_distance",
    "project_constant_speed",
    "derive_beta",
]


@dataclass(frozen=True)
class VehicleState:
    """Longitudinal position [m] and speed [m/s] of one vehicle at an instant."""

    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ValueError(f"non-finite vehicle state ({self.x}, {self.v})")


@dataclass(frozen=True)
class ControlBounds:
    """Acceleration limits [m/s^2]; u_min < 0 < u_max."""

    u_min: float
    u_max: float

    def __post_init__(self):
        if not (self.u_min < 0.0 < self.u_max):
            raise ValueError(f"control bounds must satisfy u_min < 0 < u_max, got ({self.u_min}, {self.u_max})")


@dataclass(frozen=True)
class SpeedBounds:
    """Allowed speed interval [m/s]; 0 < v_min < v_max."""

    v_min: float
    v_max: float

    def __post_init__(self):
        if not (0.0 < self.v_min < self.v_max):
            raise ValueError(f"speed bounds must satisfy 0 < v_min < v_max, got ({self.v_min}, {self.v_max})")

    def contains(self, v: float, tol: float = 1e-9) -> bool:
        return self.v_min - tol <= v <= self.v_max + tol


@dataclass(frozen=True)
class SafetyParams:
    """Constant-time-headway gap model: required gap = delta + phi * v."""

    delta: float  # standstill gap [m]
    phi: float    # time headway [s]

    def __post_init__(self):
        if self.delta < 0.0 or self.phi < 0.0:
            raise ValueError(f"safety parameters must be nonnegative, got ({self.delta}, {self.phi})")


def safe_distance(v: float, p: SafetyParams) -> float:
    """Minimum gap [m] a vehicle travelling at speed v must keep to its leader."""
    return p.delta + p.phi * v


def project_constant_speed(s: VehicleState, t0: float, t: float) -> float:
    """Position at time t if the vehicle holds its speed from time t0."""
    if t < t0:
        raise ValueError(f"projection time {t} precedes start time {t0}")
    return s.x + s.v * (t - t0)


def derive_beta(alpha: float, b: ControlBounds) -> float:
    """Time weight for the combined time/energy maneuver cost.

    beta = alpha * max(u_min^2, u_max^2) / (2 * (1 - alpha)), which folds the
    normalized convex combination of travel time and control energy into the
    simpler form beta*(tf - t0) + integral of u^2/2.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    u_sq = max(b.u_min ** 2, b.u_max ** 2)
    return alpha * u_sq / (2.0 * (1.0 - alpha))


@dataclass(frozen=True)
class ManeuverParams:
    """Tunable parameters of one cooperative lane-change maneuver."""

    alpha: float = 0.4        # time-vs-energy weight, in [0, 1)
    beta: float = 0.0         # derived time weight (see derive_beta)
    v_d: float = 29.0         # desired terminal speed [m/s]
    delta_tol: float = 4.0    # squared terminal-speed tolerance [m^2/s^2]
    d_start: float = 70.0     # trigger distance to the slow leader [m]
    T_th: float = 12.0        # maximum maneuver duration [s]
    D_th: float = 25.0        # maximum admissible pair disruption [m^2]
    gamma: float = 0.01       # disruption weight on the leading pair vehicle
    lambda_tf: float = 1.2    # terminal-time relaxation factor, > 1
    L_f: float = 40.0         # cooperative window ahead of the slow leader [m]
    L_r: float = 40.0         # cooperative window behind the lane changer [m]
    t_lat: float = 2.0        # lateral phase duration [s]

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.lambda_tf <= 1.0:
            raise ValueError(f"lambda_tf must exceed 1, got {self.lambda_tf}")
        if self.T_th <= 0.0:
            raise ValueError(f"T_th must be positive, got {self.T_th}")
        if self.D_th < 0.0 or self.delta_tol < 0.0:
            raise ValueError("D_th and delta_tol must be nonnegative")
        if self.L_f < 0.0 or self.L_r < 0.0 or self.t_lat < 0.0:
            raise ValueError("window lengths and lateral duration must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    @staticmethod
    def with_derived_beta(bounds: ControlBounds, **kwargs) -> "ManeuverParams":
        """Build params with beta computed from alpha and the control bounds."""
        p = ManeuverParams(**kwargs)
        return replace(p, beta=derive_beta(p.alpha, bounds))

    def speed_window(self) -> tuple[float, float]:
        """Admissible terminal-speed interval [v_d - sqrt(tol), v_d + sqrt(tol)]."""
        half = math.sqrt(self.delta_tol)
        return self.v_d - half, self.v_d + half


@dataclass(frozen=True)
class Arc:
    """One trajectory piece with affine control u(t) = u0 + du*(t - t_start).

    x and v over the arc follow by exact integration from (x0, v0).
    """

    t_start: float
    t_end: float
    u0: float
    du: float
    x0: float
    v0: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def control(self, t: float) -> float:
        return self.u0 + self.du * (t - self.t_start)

    def speed(self, t: float) -> float:
        s = t - self.t_start
        return self.v0 + self.u0 * s + 0.5 * self.du * s * s

    def position(self, t: float) -> float:
        s = t - self.t_start
        return self.x0 + self.v0 * s + 0.5 * self.u0 * s * s + self.du * s ** 3 / 6.0

    def end_state(self) -> tuple[float, float]:
        return self.position(self.t_end), self.speed(self.t_end)

    def energy(self) -> float:
        """Exact integral of u^2/2 over the arc."""
        d = self.duration
        return 0.5 * (self.u0 ** 2 * d + self.u0 * self.du * d ** 2 + self.du ** 2 * d ** 3 / 3.0)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-affine-control trajectory over [t0, tf].

    Arcs tile [t0, tf] with x and v continuous across boundaries; the cached
    energy equals the exact integral of u^2/2.
    """

    t0: float
    tf: float
    arcs: tuple[Arc, ...]
    energy: float = field(default=0.0)

    @staticmethod
    def from_controls(t0: float, x0: float, v0: float,
                      pieces: list[tuple[float, float, float]]) -> "Trajectory":
        """Build a trajectory from (duration, u0, du) pieces starting at (x0, v0)."""
        arcs = []
        t, x, v = t0, x0, v0
        for duration, u0, du in pieces:
            if duration < 0.0:
                raise ValueError(f"negative arc duration {duration}")
            if duration == 0.0:
                continue
            arc = Arc(t_start=t, t_end=t + duration, u0=u0, du=du, x0=x, v0=v)
            arcs.append(arc)
            x, v = arc.end_state()
            t = arc.t_end
        if not arcs:
            # zero-length trajectory: a degenerate point at (x0, v0)
            arcs = [Arc(t_start=t0, t_end=t0, u0=0.0, du=0.0, x0=x0, v0=v0)]
        energy = sum(a.energy() for a in arcs)
        return Trajectory(t0=t0, tf=arcs[-1].t_end, arcs=tuple(arcs), energy=energy)

    @staticmethod
    def at_rest_point(t0: float, state: VehicleState) -> "Trajectory":
        """Degenerate zero-duration trajectory (no longitudinal phase)."""
        return Trajectory.from_controls(t0, state.x, state.v, [])

    def _arc_at(self, t: float) -> Arc:
        if t <= self.arcs[0].t_start:
            return self.arcs[0]
        for arc in self.arcs:
            if t <= arc.t_end:
                return arc
        return self.arcs[-1]

    def control(self, t: float) -> float:
        t = min(max(t, self.t0), self.tf)
        return self._arc_at(t).control(t)

    def speed(self, t: float) -> float:
        t = min(max(t, self.t0), self.tf)
        return self._arc_at(t).speed(t)

    def position(self, t: float) -> float:
        t = min(max(t, self.t0), self.tf)
        return self._arc_at(t).position(t)

    def end_state(self) -> VehicleState:
        x, v = self.arcs[-1].end_state()
        return VehicleState(x=x, v=v)

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    def sample_times(self, dt: float) -> list[float]:
        """Sample grid including both endpoints and all arc boundaries."""
        if self.duration <= 0.0:
            return [self.t0]
        n = max(1, int(math.ceil(self.duration / dt)))
        times = {self.t0 + k * self.duration / n for k in range(n + 1)}
        for arc in self.arcs:
            times.add(arc.t_start)
            times.add(arc.t_end)
        return sorted(times)
