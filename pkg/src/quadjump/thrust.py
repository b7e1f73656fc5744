"""Thrust-phase planning.

A 13-dimensional action is decoded into lift-off boundary conditions and turned
into a piecewise COM reference: a cubic Bézier from standstill to the Bézier
lift-off state, followed by a straight uniformly accelerated segment that
stretches the lift-off speed by ``k`` over a distance ``d``. Orientation follows
its own cubic Bézier over the whole thrust.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np

from .bezier import ControlPolygon, derivative, evaluate

FLOOR_CLEARANCE = 0.15

ACTION_NAMES = (
    "T_th_b", "r_p", "theta_p", "r_v", "theta_v", "k", "d",
    "roll_lo", "pitch_lo", "yaw_lo", "roll_rate_lo", "pitch_rate_lo", "yaw_rate_lo",
)

ACTION_LOW = np.array([
    0.4, 0.2, math.pi / 4, 0.5, -math.pi / 6, 1.0, 0.0,
    -math.pi / 6, -math.pi / 6, -math.pi / 4, -1.0, -1.0, -4.0,
])
ACTION_HIGH = np.array([
    1.0, 0.4, math.pi / 2, 5.0, math.pi / 2, 3.0, 0.3,
    math.pi / 6, math.pi / 6, math.pi / 4, 1.0, 1.0, 4.0,
])


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = math.pi - np.mod(math.pi - a, 2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class JumpCommand:
    """Desired landing displacement of the COM and of the trunk orientation."""

    delta_c: np.ndarray
    delta_phi: np.ndarray

    def __post_init__(self):
        dc = np.array(self.delta_c, dtype=float).reshape(3)
        dphi = np.array(self.delta_phi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(dphi))):
            raise ValueError("jump command must be finite")
        object.__setattr__(self, "delta_c", dc)
        object.__setattr__(self, "delta_phi", wrap_angle(dphi))

    def target(self, c0, phi0):
        c0 = np.asarray(c0, dtype=float)
        return c0 + self.delta_c, np.asarray(phi0, dtype=float) + self.delta_phi


@dataclass(frozen=True)
class JumpAction:
    T_th_b: float
    r_p: float
    theta_p: float
    r_v: float
    theta_v: float
    k: float
    d: float
    phi_lo: tuple
    phidot_lo: tuple

    @classmethod
    def from_array(cls, a) -> "JumpAction":
        a = np.asarray(a, dtype=float).reshape(13)
        return cls(*map(float, a[:7]), tuple(map(float, a[7:10])), tuple(map(float, a[10:13])))

    def as_array(self) -> np.ndarray:
        head = astuple(self)[:7]
        return np.array([*head, *self.phi_lo, *self.phidot_lo], dtype=float)


def clip_action(raw) -> tuple[JumpAction, np.ndarray]:
    """Clamp each of the 13 raw values to its legal range.

    Returns the clipped action and the per-field distance that was clipped off.
    """
    raw = np.asarray(raw, dtype=float).reshape(13)
    clipped = np.clip(raw, ACTION_LOW, ACTION_HIGH)
    return JumpAction.from_array(clipped), np.abs(raw - clipped)


def normalized_to_raw(a_norm) -> np.ndarray:
    """Affine map from [-1, 1] per dimension to the action ranges (no clipping)."""
    mid = 0.5 * (ACTION_HIGH + ACTION_LOW)
    half = 0.5 * (ACTION_HIGH - ACTION_LOW)
    return mid + half * np.asarray(a_norm, dtype=float)


def raw_to_normalized(raw) -> np.ndarray:
    mid = 0.5 * (ACTION_HIGH + ACTION_LOW)
    half = 0.5 * (ACTION_HIGH - ACTION_LOW)
    return (np.asarray(raw, dtype=float) - mid) / half


@dataclass(frozen=True)
class LiftoffBoundary:
    c_lo_b: np.ndarray
    cdot_lo_b: np.ndarray
    c_lo_e: np.ndarray
    cdot_lo_e: np.ndarray
    phi_lo: np.ndarray
    phidot_lo: np.ndarray
    T_th_b: float
    T_th_e: float
    T_th: float
    a_uarm: float


def jump_plane_yaw(c0, c_tg) -> float:
    """Heading of the vertical plane containing start and target (0 for in-place)."""
    dx = float(c_tg[0]) - float(c0[0])
    dy = float(c_tg[1]) - float(c0[1])
    if dx == 0.0 and dy == 0.0:
        return 0.0
    return math.atan2(dy, dx)


def decode(action: JumpAction, c0, phi0, c_tg, ground_z: float = 0.0) -> LiftoffBoundary:
    """Lift-off boundary conditions for ``action``.

    The spherical coordinates of the Bézier lift-off position are measured from
    the ground point below the initial COM; both position and velocity share the
    jump-plane heading.
    """
    c0 = np.asarray(c0, dtype=float)
    yaw = jump_plane_yaw(c0, c_tg)
    cy, sy = math.cos(yaw), math.sin(yaw)
    origin = np.array([c0[0], c0[1], ground_z])
    cp, sp = math.cos(action.theta_p), math.sin(action.theta_p)
    c_lo_b = origin + action.r_p * np.array([cp * cy, cp * sy, sp])
    cv, sv = math.cos(action.theta_v), math.sin(action.theta_v)
    cdot_lo_b = action.r_v * np.array([cv * cy, cv * sy, sv])
    cdot_lo_e = action.k * cdot_lo_b

    v_b = float(np.linalg.norm(cdot_lo_b))
    d = float(action.d)
    if d > 0.0:
        if v_b == 0.0:
            raise ValueError("explosive segment needs a nonzero Bézier lift-off velocity")
        unit = cdot_lo_b / v_b
        c_lo_e = c_lo_b + d * unit
        v_e = action.k * v_b
        if action.k == 1.0:
            a_uarm = 0.0
            T_th_e = d / v_b
        else:
            a_uarm = (v_e**2 - v_b**2) / (2.0 * d)
            T_th_e = (v_e - v_b) / a_uarm
    else:
        # a zero-length segment cannot change the speed
        c_lo_e = c_lo_b.copy()
        cdot_lo_e = cdot_lo_b.copy()
        a_uarm = 0.0
        T_th_e = 0.0

    return LiftoffBoundary(
        c_lo_b=c_lo_b, cdot_lo_b=cdot_lo_b, c_lo_e=c_lo_e, cdot_lo_e=cdot_lo_e,
        phi_lo=np.array(action.phi_lo, dtype=float), phidot_lo=np.array(action.phidot_lo, dtype=float),
        T_th_b=float(action.T_th_b), T_th_e=float(T_th_e), T_th=float(action.T_th_b) + float(T_th_e),
        a_uarm=float(a_uarm),
    )


def _hermite_polygon(x0, xdot0, x1, xdot1, T) -> ControlPolygon:
    x0, xdot0, x1, xdot1 = (np.asarray(v, dtype=float) for v in (x0, xdot0, x1, xdot1))
    return ControlPolygon([x0, x0 + (T / 3.0) * xdot0, x1 - (T / 3.0) * xdot1, x1], T)


def solve_position_bezier(c0, cdot0, boundary: LiftoffBoundary) -> ControlPolygon:
    return _hermite_polygon(c0, cdot0, boundary.c_lo_b, boundary.cdot_lo_b, boundary.T_th_b)


def solve_orientation_bezier(phi0, phidot0, phi_lo, phidot_lo, T_th: float) -> ControlPolygon:
    return _hermite_polygon(phi0, phidot0, phi_lo, phidot_lo, T_th)


@dataclass(frozen=True)
class ThrustTrajectory:
    pos_bezier: ControlPolygon
    ori_bezier: ControlPolygon
    c_lo_b: np.ndarray
    cdot_lo_b: np.ndarray
    c_lo_e: np.ndarray
    cdot_lo_e: np.ndarray
    a_uarm: float
    direction: np.ndarray
    T_th_e: float
    literal_lerp: bool = False

    @property
    def T_th_b(self) -> float:
        return self.pos_bezier.duration

    @property
    def T_th(self) -> float:
        return self.ori_bezier.duration

    def sample(self, t):
        return sample(self, t)


def build_trajectory(c0, cdot0, phi0, phidot0, boundary: LiftoffBoundary,
                     literal_lerp: bool = False) -> ThrustTrajectory:
    pos = solve_position_bezier(c0, cdot0, boundary)
    ori = solve_orientation_bezier(phi0, phidot0, boundary.phi_lo, boundary.phidot_lo, boundary.T_th)
    v_b = float(np.linalg.norm(boundary.cdot_lo_b))
    direction = boundary.cdot_lo_b / v_b if v_b > 0.0 else np.zeros(3)
    return ThrustTrajectory(
        pos_bezier=pos, ori_bezier=ori,
        c_lo_b=boundary.c_lo_b, cdot_lo_b=boundary.cdot_lo_b,
        c_lo_e=boundary.c_lo_e, cdot_lo_e=boundary.cdot_lo_e,
        a_uarm=boundary.a_uarm, direction=direction, T_th_e=boundary.T_th_e,
        literal_lerp=literal_lerp,
    )


def sample(traj: ThrustTrajectory, t):
    """Reference ``(c, cdot, phi, phidot)`` at thrust time ``t``.

    Scalar ``t`` gives 3-vectors, an array of N times gives (N, 3) arrays.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    T_b, T = traj.T_th_b, traj.T_th
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > T):
        raise ValueError(f"t outside [0, {T}]")

    vel_bez = derivative(traj.pos_bezier)
    c = np.empty((t.size, 3))
    cdot = np.empty((t.size, 3))
    on_bez = t <= T_b
    if np.any(on_bez):
        c[on_bez] = evaluate(traj.pos_bezier, t[on_bez])
        cdot[on_bez] = evaluate(vel_bez, t[on_bez])
    tail = ~on_bez
    if np.any(tail):
        tau = (t[tail] - T_b)[:, None]
        if traj.literal_lerp:
            s = np.clip(tau / traj.T_th_e, 0.0, 1.0)
            c[tail] = traj.c_lo_b + s * (traj.c_lo_e - traj.c_lo_b)
            cdot[tail] = traj.cdot_lo_b + s * (traj.cdot_lo_e - traj.cdot_lo_b)
        else:
            v_b = float(np.linalg.norm(traj.cdot_lo_b))
            dist = v_b * tau + 0.5 * traj.a_uarm * tau**2
            c[tail] = traj.c_lo_b + dist * traj.direction
            cdot[tail] = (v_b + traj.a_uarm * tau) * traj.direction
        at_end = t[tail] == T
        if np.any(at_end):
            idx = np.flatnonzero(tail)[at_end]
            c[idx] = traj.c_lo_e
            cdot[idx] = traj.cdot_lo_e

    phi = evaluate(traj.ori_bezier, t)
    phidot = evaluate(derivative(traj.ori_bezier), t)
    if scalar:
        return c[0], cdot[0], phi[0], phidot[0]
    return c, cdot, phi, phidot


def min_height(traj: ThrustTrajectory, dt: float = 0.001) -> float:
    """Lowest sampled COM height along the thrust reference."""
    ts = np.append(np.arange(0.0, traj.T_th, dt), traj.T_th)
    c, _, _, _ = sample(traj, ts)
    return float(c[:, 2].min())


def encode_state(c0, phi0, c_tg, phi_tg) -> np.ndarray:
    """Policy observation: COM and orientation displacement, yaw wrapped to (-pi, pi]."""
    dc = np.asarray(c_tg, dtype=float) - np.asarray(c0, dtype=float)
    dphi = np.asarray(phi_tg, dtype=float) - np.asarray(phi0, dtype=float)
    dphi = dphi.copy()
    dphi[2] = wrap_angle(dphi[2])
    return np.concatenate([dc, dphi])


def plan(action: JumpAction, c0, phi0, c_tg, ground_z: float = 0.0,
         literal_lerp: bool = False) -> tuple[LiftoffBoundary, ThrustTrajectory]:
    """Decode ``action`` from standstill at ``(c0, phi0)`` and build the reference."""
    boundary = decode(action, c0, phi0, c_tg, ground_z)
    traj = build_trajectory(c0, np.zeros(3), phi0, np.zeros(3), boundary, literal_lerp)
    return boundary, traj


TRAJECTORY_COLUMNS = ("t", "cx", "cy", "cz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wr", "wp", "wy")


def export_csv(traj: ThrustTrajectory, path, period: float = 0.01) -> Path:
    """Write the sampled reference; the last row is always at ``T_th``."""
    if period <= 0.0:
        raise ValueError("sampling period must be positive")
    n = int(math.floor(traj.T_th / period + 1e-9))
    ts = np.arange(n + 1) * period
    ts = ts[ts < traj.T_th - 1e-12]
    ts = np.append(ts, traj.T_th)
    c, cdot, phi, phidot = sample(traj, ts)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in zip(ts, c, cdot, phi, phidot):
            w.writerow([repr(float(row[0]))] + [repr(float(v)) for arr in row[1:] for v in arr])
    return path


