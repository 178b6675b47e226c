"""Cooperative lane-change maneuver planning and two-lane highway simulation."""

from .core import (
    Arc,
    ControlBounds,
    ManeuverParams,
    SafetyParams,
    SpeedBounds,
    Trajectory,
    VehicleState,
    derive_beta,
    project_constant_speed,
    safe_distance,
)

__version__ = "0.1.0"

__all__ = [
    "Arc",
    "ControlBounds",
    "ManeuverParams",
    "SafetyParams",
    "SpeedBounds",
    "Trajectory",
    "VehicleState",
    "derive_beta",
    "project_constant_speed",
    "safe_distance",
    "__version__",
]
