"""Reduced quadruped: rigid trunk with four massless three-joint legs.

Leg frames are attached at the hip with x forward, y left, z up. Each leg has
an abduction joint about x followed by hip and knee flexion joints; with this
convention the nominal configuration (0, -0.75, 1.5) puts the foot straight
below the hip with the knee pointing backwards.

Orientation is ZYX Euler angles ordered (roll, pitch, yaw).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

G = 9.81
LEG_NAMES = ("FL", "FR", "RL", "RR")
LEG_SIDES = np.array([1.0, -1.0, 1.0, -1.0])

SINGULAR_COND = 1e4
PINV_TOL = 1e-10


class OutOfWorkspaceError(ValueError):
    """A foot target lies outside the reachable set of its leg."""

    def __init__(self, message, distance=0.0, leg=None):
        super().__init__(message)
        self.distance = distance
        self.leg = leg


class SingularStanceError(ValueError):
    pass


class SingularityError(ValueError):
    pass


def _vec(v, n=3):
    a = np.array(v, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"expected {n} values, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class QuadrupedModel:
    """Robot description with Go1-like defaults.

    Mass, gains, nominal configuration and joint limits on velocity/torque are
    the published Go1 values. Link lengths, hip placement, trunk box, position
    limits and the flight retraction pose are placeholders that live here so
    they can be replaced from a config file.
    """

    mass: float = 13.0
    trunk_dims: np.ndarray = field(default_factory=lambda: np.array([0.3762, 0.0935, 0.114]))
    hip_offsets: np.ndarray = field(default_factory=lambda: np.array([
        [0.1881, 0.04675, 0.0],
        [0.1881, -0.04675, 0.0],
        [-0.1881, 0.04675, 0.0],
        [-0.1881, -0.04675, 0.0],
    ]))
    link_lengths: np.ndarray = field(default_factory=lambda: np.array([0.08, 0.213, 0.213]))
    q_default: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.75, 1.5]))
    q_limits: np.ndarray = field(default_factory=lambda: np.array([
        [-0.863, 0.863],
        [-4.501, 0.686],
        [0.888, 2.818],
    ]))
    qdot_max: np.ndarray = field(default_factory=lambda: np.array([20.0, 20.0, 30.0]))
    tau_max: np.ndarray = field(default_factory=lambda: np.array([23.7, 23.7, 35.5]))
    kp: float = 50.0
    kd: float = 0.8
    q_retract: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.2, 2.4]))
    # plant-only joint viscous damping (N m s/rad)
    joint_damping: float = 0.0
    # mass assumed by the gravity compensation; None means the true mass
    controller_mass: float | None = None

    def __post_init__(self):
        conv = {
            "trunk_dims": (3,), "hip_offsets": (4, 3), "link_lengths": (3,), "q_default": (3,),
            "q_limits": (3, 2), "qdot_max": (3,), "tau_max": (3,), "q_retract": (3,),
        }
        for name, shape in conv.items():
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")
        if np.any(self.link_lengths <= 0.0) or np.any(self.trunk_dims <= 0.0):
            raise ValueError("link lengths and trunk dimensions must be positive")
        if np.any(self.q_limits[:, 0] > self.q_limits[:, 1]):
            raise ValueError("joint limits must be ordered [min, max]")
        if self.joint_damping < 0.0:
            raise ValueError("joint damping must be non-negative")

    @property
    def inertia(self) -> np.ndarray:
        """Diagonal inertia of a homogeneous box with the trunk dimensions."""
        a, b, c = self.trunk_dims
        return self.mass / 12.0 * np.array([b * b + c * c, a * a + c * c, a * a + b * b])

    @property
    def ff_mass(self) -> float:
        return self.mass if self.controller_mass is None else self.controller_mass

    @property
    def stand_height(self) -> float:
        """COM height above flat ground with all legs in the nominal configuration."""
        return float(-leg_fk(self.q_default, 0, self)[2] - self.hip_offsets[0, 2])

    def nominal_feet(self, c0=None, yaw: float = 0.0) -> np.ndarray:
        """World foot positions of the nominal stance under a level trunk at ``c0``."""
        if c0 is None:
            c0 = np.array([0.0, 0.0, self.stand_height])
        R = rpy_to_matrix([0.0, 0.0, yaw])
        local = np.stack([self.hip_offsets[i] + leg_fk(self.q_default, i, self) for i in range(4)])
        return np.asarray(c0, dtype=float) + local @ R.T


ROBOT_KEYS = ("mass", "inertia_box_dims", "hip_offsets", "link_lengths", "q_default", "q_limits",
              "qdot_max", "tau_max", "kp", "kd")


def _floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()])


def load_model(path) -> QuadrupedModel:
    """Read a robot description (INI file, section ``[robot]``)."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    sec = cp["robot"]
    missing = [k for k in ROBOT_KEYS if k not in sec]
    if missing:
        raise KeyError(f"robot config missing keys: {', '.join(missing)}")
    kw = dict(
        mass=float(sec["mass"]),
        trunk_dims=_floats(sec["inertia_box_dims"]),
        hip_offsets=_floats(sec["hip_offsets"]).reshape(4, 3),
        link_lengths=_floats(sec["link_lengths"]),
        q_default=_floats(sec["q_default"]),
        q_limits=_floats(sec["q_limits"]).reshape(3, 2),
        qdot_max=_floats(sec["qdot_max"]),
        tau_max=_floats(sec["tau_max"]),
        kp=float(sec["kp"]),
        kd=float(sec["kd"]),
    )
    if "q_retract" in sec:
        kw["q_retract"] = _floats(sec["q_retract"])
    return QuadrupedModel(**kw)


def _fmt(a) -> str:
    return ", ".join(repr(float(v)) for v in np.ravel(a))


def save_model(model: QuadrupedModel, path) -> Path:
    cp = configparser.ConfigParser()
    cp["robot"] = {
        "mass": repr(float(model.mass)),
        "inertia_box_dims": _fmt(model.trunk_dims),
        "hip_offsets": _fmt(model.hip_offsets),
        "link_lengths": _fmt(model.link_lengths),
        "q_default": _fmt(model.q_default),
        "q_limits": _fmt(model.q_limits),
        "qdot_max": _fmt(model.qdot_max),
        "tau_max": _fmt(model.tau_max),
        "kp": repr(float(model.kp)),
        "kd": repr(float(model.kd)),
        "q_retract": _fmt(model.q_retract),
    }
    path = Path(path)
    with path.open("w") as fh:
        cp.write(fh)
    return path


# ---------------------------------------------------------------------------
# rotations

def rpy_to_matrix(rpy) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll); accepts (..., 3)."""
    rpy = np.asarray(rpy, dtype=float)
    r, p, y = rpy[..., 0], rpy[..., 1], rpy[..., 2]
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    R = np.empty(rpy.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def matrix_to_rpy(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    pitch = np.arcsin(np.clip(-R[..., 2, 0], -1.0, 1.0))
    roll = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


def euler_rate_matrix(rpy) -> np.ndarray:
    """Maps ZYX Euler rates (roll, pitch, yaw) to the world angular velocity."""
    rpy = np.asarray(rpy, dtype=float)
    p, y = rpy[..., 1], rpy[..., 2]
    cp, sp, cy, sy = np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    E = np.zeros(rpy.shape[:-1] + (3, 3))
    E[..., 0, 0] = cp * cy
    E[..., 0, 1] = -sy
    E[..., 1, 0] = cp * sy
    E[..., 1, 1] = cy
    E[..., 2, 0] = -sp
    E[..., 2, 2] = 1.0
    return E


def cross3(a, b) -> np.ndarray:
    """Cross product over the last axis; cheaper than ``np.cross`` for small arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


def so3_exp(w) -> np.ndarray:
    """Rotation matrix of the rotation vector ``w`` (Rodrigues)."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    K = skew(w)
    if th < 1e-9:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th**2 * K @ K


# ---------------------------------------------------------------------------
# leg kinematics (vectorised over leading dimensions)

def _side(leg):
    return LEG_SIDES[np.asarray(leg)]


def _fk(q, side, lengths):
    l0, l1, l2 = lengths
    q = np.asarray(q, dtype=float)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    x = l1 * np.sin(q2) + l2 * np.sin(q2 + q3)
    zp = -l1 * np.cos(q2) - l2 * np.cos(q2 + q3)
    c1, s1 = np.cos(q1), np.sin(q1)
    y = side * l0 * c1 - zp * s1
    z = side * l0 * s1 + zp * c1
    return np.stack([x, y, z], axis=-1)


def _jac(q, side, lengths):
    l0, l1, l2 = lengths
    q = np.asarray(q, dtype=float)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    c1, s1 = np.cos(q1), np.sin(q1)
    c2, s2 = np.cos(q2), np.sin(q2)
    c23, s23 = np.cos(q2 + q3), np.sin(q2 + q3)
    zp = -l1 * c2 - l2 * c23
    dzp2 = l1 * s2 + l2 * s23
    dzp3 = l2 * s23
    J = np.zeros(q.shape[:-1] + (3, 3))
    J[..., 1, 0] = -side * l0 * s1 - zp * c1
    J[..., 2, 0] = side * l0 * c1 - zp * s1
    J[..., 0, 1] = l1 * c2 + l2 * c23
    J[..., 1, 1] = -dzp2 * s1
    J[..., 2, 1] = dzp2 * c1
    J[..., 0, 2] = l2 * c23
    J[..., 1, 2] = -dzp3 * s1
    J[..., 2, 2] = dzp3 * c1
    return J


def _ik(foot, side, lengths):
    """Closed-form IK; returns (q, reach_excess) with unreachable targets clamped."""
    l0, l1, l2 = lengths
    foot = np.asarray(foot, dtype=float)
    x, y, z = foot[..., 0], foot[..., 1], foot[..., 2]
    r2 = y * y + z * z - l0 * l0
    excess = np.maximum(-r2, 0.0)
    zp = -np.sqrt(np.maximum(r2, 0.0))
    q1 = np.arctan2(z, y) - np.arctan2(zp, side * l0)
    q1 = np.pi - np.mod(np.pi - q1, 2.0 * np.pi)
    D2 = x * x + zp * zp
    D = np.sqrt(D2)
    excess = np.maximum(excess, D - (l1 + l2))
    excess = np.maximum(excess, abs(l1 - l2) - D)
    c3 = np.clip((D2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0)
    q3 = np.arccos(c3)
    q2 = np.arctan2(x, -zp) - np.arctan2(l2 * np.sin(q3), l1 + l2 * np.cos(q3))
    return np.stack([q1, q2, q3], axis=-1), np.maximum(excess, 0.0)


def leg_fk(q_leg, leg: int, model: QuadrupedModel) -> np.ndarray:
    """Foot position in the hip frame."""
    return _fk(q_leg, _side(leg), model.link_lengths)


def leg_ik(foot, leg: int, model: QuadrupedModel) -> np.ndarray:
    """Joint angles placing the foot at ``foot`` (hip frame), knee angle positive.

    Raises
    ------
    OutOfWorkspaceError
        With ``distance`` set to how far the target lies outside the workspace.
    """
    q, excess = _ik(foot, _side(leg), model.link_lengths)
    worst = float(np.max(excess))
    if worst > 1e-12:
        raise OutOfWorkspaceError(f"foot target out of reach of leg {LEG_NAMES[leg]} by {worst:.4g} m",
                                  distance=worst, leg=leg)
    return q


def leg_jacobian(q_leg, leg: int, model: QuadrupedModel) -> np.ndarray:
    """d(foot in hip frame)/dq."""
    return _jac(q_leg, _side(leg), model.link_lengths)


# ---------------------------------------------------------------------------
# whole body

@dataclass
class StanceState:
    base_pos: np.ndarray
    base_rpy: np.ndarray
    base_vel: np.ndarray
    base_omega: np.ndarray  # world frame
    q: np.ndarray            # (12,)
    qdot: np.ndarray         # (12,)
    foot_world: np.ndarray   # (4, 3)


def feet_in_legs(base_pos, base_rpy, foot_world, model: QuadrupedModel):
    """Foot positions in each hip frame; base pose may carry leading batch dims (..., 3)."""
    R = rpy_to_matrix(base_rpy)
    rel = np.asarray(foot_world, dtype=float) - np.asarray(base_pos, dtype=float)[..., None, :]
    rel_b = rel @ R
    return rel_b - model.hip_offsets, R, rel_b


def whole_body_ik(base_pos, base_rpy, foot_world, model: QuadrupedModel,
                  base_vel=None, base_omega=None):
    """Joint angles (12,) for the given base pose with feet fixed in the world.

    If ``base_vel`` and ``base_omega`` (world frame) are given, joint velocities
    are returned as well.
    """
    p_leg, R, rel_b = feet_in_legs(base_pos, base_rpy, foot_world, model)
    q, excess = _ik(p_leg, LEG_SIDES, model.link_lengths)
    bad = np.flatnonzero(excess > 1e-12)
    if bad.size:
        leg = int(bad[0])
        raise OutOfWorkspaceError(f"leg {LEG_NAMES[leg]} cannot reach its foot", distance=float(excess[leg]),
                                  leg=leg)
    if base_vel is None:
        return q.reshape(12)
    v_leg = _foot_velocity(R, rel_b, base_vel, base_omega)
    J = _jac(q, LEG_SIDES, model.link_lengths)
    qdot = np.linalg.solve(J, v_leg[..., None])[..., 0]
    return q.reshape(12), qdot.reshape(12)


def _foot_velocity(R, rel_b, base_vel, base_omega):
    # feet are fixed in the world, so their hip-frame velocity comes from base motion only
    w_b = np.asarray(base_omega, dtype=float)[..., None, :] @ R
    v_b = np.asarray(base_vel, dtype=float)[..., None, :] @ R
    return -cross3(w_b, rel_b) - v_b


def inv3(A):
    """Batched 3x3 inverse via the adjugate; returns (inverse, determinant)."""
    A = np.asarray(A, dtype=float)
    c0 = cross3(A[..., 1, :], A[..., 2, :])
    c1 = cross3(A[..., 2, :], A[..., 0, :])
    c2 = cross3(A[..., 0, :], A[..., 1, :])
    det = np.einsum("...i,...i->...", A[..., 0, :], c0)
    adj = np.stack([c0, c1, c2], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = adj / det[..., None, None]
    return inv, det


def reference_joint_states(c, rpy, cdot, phidot, foot_world, model: QuadrupedModel):
    """IK along base poses with leading batch dims (...); feet broadcast as (..., 4, 3).

    Returns ``(q, qdot, reach_excess, cond)`` with shapes (...,4,3), (...,4,3),
    (...,4), (...,4). ``cond`` is the Frobenius-norm condition number of each
    leg Jacobian (an upper bound on the 2-norm one, infinite when singular).
    """
    p_leg, R, rel_b = feet_in_legs(c, rpy, foot_world, model)
    q, excess = _ik(p_leg, LEG_SIDES, model.link_lengths)
    omega = (euler_rate_matrix(rpy) @ np.asarray(phidot, dtype=float)[..., None])[..., 0]
    v_leg = _foot_velocity(R, rel_b, cdot, omega)
    J = _jac(q, LEG_SIDES, model.link_lengths)
    Jinv, det = inv3(J)
    singular = np.abs(det) <= 1e-300
    Jinv = np.where(singular[..., None, None], 0.0, Jinv)
    qdot = (Jinv @ v_leg[..., None])[..., 0]
    qdot = np.where(excess[..., None] > 0.0, 0.0, qdot)
    cond = np.linalg.norm(J, axis=(-2, -1)) * np.linalg.norm(Jinv, axis=(-2, -1))
    cond = np.where(singular, np.inf, cond)
    return q, qdot, excess, cond


def contact_map(base_pos, foot_world) -> np.ndarray:
    """6x12 map from stacked foot forces to the net force and moment about the COM."""
    G = np.zeros((6, 12))
    for i, p in enumerate(np.asarray(foot_world, dtype=float)):
        G[:3, 3 * i:3 * i + 3] = np.eye(3)
        G[3:, 3 * i:3 * i + 3] = skew(p - np.asarray(base_pos, dtype=float))
    return G


def world_leg_jacobians(q, base_rpy, model: QuadrupedModel) -> np.ndarray:
    R = rpy_to_matrix(base_rpy)
    return R @ _jac(np.asarray(q, float).reshape(4, 3), LEG_SIDES, model.link_lengths)


def _pinv(A, tol=PINV_TOL):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T, int(keep.sum())


def stance_forces(base_pos, foot_world, mass: float, g: float = G) -> np.ndarray:
    """Minimum-norm foot forces (4, 3) that balance gravity on the trunk."""
    Gm = contact_map(base_pos, foot_world)
    Gp, rank = _pinv(Gm)
    if rank < 6:
        raise SingularStanceError(f"contact map has rank {rank} < 6")
    w = np.array([0.0, 0.0, mass * g, 0.0, 0.0, 0.0])
    return (Gp @ w).reshape(4, 3)


def gravity_ff(stance: StanceState, model: QuadrupedModel, g: float = G) -> np.ndarray:
    """Feed-forward joint torques (12,) mapping the gravity wrench onto the feet."""
    f = stance_forces(stance.base_pos, stance.foot_world, model.ff_mass, g)
    J = world_leg_jacobians(stance.q, stance.base_rpy, model)
    return -np.einsum("kji,kj->ki", J, f).reshape(12)


def pd_control(q_d, qdot_d, q, qdot, tau_ff, model: QuadrupedModel) -> np.ndarray:
    tau = (model.kp * (np.asarray(q_d) - np.asarray(q)) + model.kd * (np.asarray(qdot_d) - np.asarray(qdot))
           + np.asarray(tau_ff))
    lim = np.tile(model.tau_max, np.size(tau) // 3)
    return np.clip(tau, -lim, lim)


def contact_force(q_leg, tau_leg, leg: int, model: QuadrupedModel, base_rpy=None,
                  cond_max: float = SINGULAR_COND) -> np.ndarray:
    """Foot force balancing ``tau_leg`` through a massless leg: f = -J^{-T} tau.

    The force is expressed in the world frame when ``base_rpy`` is given,
    otherwise in the hip frame.
    """
    J = leg_jacobian(q_leg, leg, model)
    if base_rpy is not None:
        J = rpy_to_matrix(base_rpy) @ J
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= 0.0 or s[0] / s[-1] > cond_max:
        raise SingularityError(f"leg {LEG_NAMES[leg]} Jacobian near singular")
    return -np.linalg.solve(J.T, np.asarray(tau_leg, dtype=float))


def perturbed(model: QuadrupedModel, **changes) -> QuadrupedModel:
    return replace(model, **changes)
