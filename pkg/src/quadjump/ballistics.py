"""Closed-form projectile flight: landing prediction, apex, and the a-priori
feasibility filter applied to a lift-off state before a jump is executed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

G = 9.81


class UnreachableError(ValueError):
    """The target height is never crossed by the ballistic trajectory."""


@dataclass(frozen=True)
class BallisticState:
    """Lift-off COM position and velocity in the world frame."""

    c_lo: np.ndarray
    cdot_lo: np.ndarray

    def __post_init__(self):
        c = np.array(self.c_lo, dtype=float).reshape(3)
        v = np.array(self.cdot_lo, dtype=float).reshape(3)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(v))):
            raise ValueError("ballistic state must be finite")
        object.__setattr__(self, "c_lo", c)
        object.__setattr__(self, "cdot_lo", v)


@dataclass(frozen=True)
class LandingPrediction:
    c_td: np.ndarray
    T_fl: float
    apex_z: float
    T_fup: float


@dataclass(frozen=True)
class Accept:
    prediction: LandingPrediction
    accepted: bool = field(default=True, init=False)


@dataclass(frozen=True)
class Reject:
    reason: str
    accepted: bool = field(default=False, init=False)


def flight_time(z_lo: float, vz: float, z_tg: float, g: float = G) -> float:
    """Time at which the COM height reaches ``z_tg``, taking the later crossing.

    Raises
    ------
    UnreachableError
        If ``z_lo + vz*T - g*T**2/2 = z_tg`` has no non-negative root.
    """
    disc = vz * vz - 2.0 * g * (z_tg - z_lo)
    if -1e-12 * (1.0 + vz * vz) < disc < 0.0:
        disc = 0.0  # target at the apex up to rounding
    if disc < 0.0:
        raise UnreachableError(f"target height {z_tg:.6g} above apex")
    T = (vz + math.sqrt(disc)) / g
    if T < 0.0:
        raise UnreachableError("target height only crossed before lift-off")
    return T


def apex(state: BallisticState, g: float = G) -> tuple[float, float]:
    """Apex elevation and time-to-apex; a descending lift-off peaks immediately."""
    vz = max(float(state.cdot_lo[2]), 0.0)
    T_fup = vz / g
    return float(state.c_lo[2]) + 0.5 * vz * vz / g, T_fup


def predict_landing(state: BallisticState, z_tg: float, g: float = G) -> LandingPrediction:
    T_fl = flight_time(state.c_lo[2], state.cdot_lo[2], z_tg, g)
    c_td = np.array([
        state.c_lo[0] + state.cdot_lo[0] * T_fl,
        state.c_lo[1] + state.cdot_lo[1] * T_fl,
        z_tg,
    ])
    apex_z, T_fup = apex(state, g)
    return LandingPrediction(c_td=c_td, T_fl=T_fl, apex_z=apex_z, T_fup=T_fup)


def ballistic_position(state: BallisticState, t, g: float = G) -> np.ndarray:
    """COM position after ``t`` seconds of flight (t scalar or array)."""
    t = np.asarray(t, dtype=float)[..., None]
    return state.c_lo + state.cdot_lo * t - 0.5 * g * t**2 * np.array([0.0, 0.0, 1.0])


def vz_of_vx(c_lo, c_tg, vx: float, g: float = G) -> float:
    """Vertical lift-off speed that lands on ``c_tg`` given horizontal speed ``vx``.

    Works in the side view of the jump plane: ``x`` is the horizontal coordinate
    along the plane and ``vx`` the in-plane horizontal speed.
    """
    dx = float(c_tg[0]) - float(c_lo[0])
    if vx == 0.0:
        raise ValueError("horizontal lift-off speed must be nonzero")
    if dx == 0.0:
        raise ValueError("horizontal gap between lift-off and target must be nonzero")
    # height gain over the gap; the sign follows from z_tg = z_lo + vz*T - g*T**2/2 with T = dx/vx
    dz = float(c_tg[2]) - float(c_lo[2])
    return dz / dx * vx + 0.5 * dx * g / vx


def safety_filter(state: BallisticState, c_tg, g: float = G) -> Accept | Reject:
    """Reject lift-off states whose apex stays below the target height."""
    z_tg = float(np.asarray(c_tg, dtype=float)[2])
    apex_z, _ = apex(state, g)
    if z_tg > apex_z:
        return Reject("apex-below-target")
    try:
        return Accept(predict_landing(state, z_tg, g))
    except UnreachableError:
        return Reject("unreachable")
