"""Episode engine for a single jump.

An episode runs clip -> decode -> safety filter -> thrust -> flight ->
touchdown -> settle until the timeout. Two fidelities are available:

``ideal``
    The commanded lift-off state is achieved exactly and the flight is the
    closed-form projectile, so landing is analytic. Kinematic limits and the
    net ground-force requirements are still checked along the thrust reference.
    Episodes are evaluated in batches with array code, which is what makes
    training affordable.
``tracked``
    The trunk is integrated at ``dt`` under the foot forces produced by the
    joint PD law with gravity compensation through massless legs, so tracking
    error, torque saturation and contact limits show up in the outcome.

Penalties are time integrals of constraint activations. Forces are measured
in units of body weight; angles, rates and torques in SI units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ballistics, thrust
from .ballistics import BallisticState, G
from .reward import activation
from .quadruped import (
    LEG_SIDES,
    OutOfWorkspaceError,
    QuadrupedModel,
    _fk,
    _ik,
    _jac,
    cross3,
    euler_rate_matrix,
    inv3,
    matrix_to_rpy,
    reference_joint_states,
    rpy_to_matrix,
    skew,
)

PENALTY_NAMES = (
    "joint_pos", "joint_vel", "torque", "friction", "unilaterality", "singularity",
    "C_lo", "C_phi_tg", "C_dx", "C_phidot_td", "C_ppo",
)
PATH_PENALTIES = PENALTY_NAMES[:6]
FAILURES = ("none", "non-foot-contact", "filter-rejected", "ik-unreachable")

SINGULAR_COND = 1e4
# near a singularity joint rates blow up; count at most this multiple of the limit
QDOT_EXCESS_CAP = 10.0


@dataclass(frozen=True)
class EpisodeConfig:
    mode: str = "ideal"
    dt: float = 0.001
    timeout: float = 1.5
    friction_mu: float = 0.8
    # evenly spaced samples of the kinematic checks along each thrust reference (ideal mode)
    check_samples: int = 50
    literal_lerp: bool = False
    ground_z: float = 0.0
    # terrain height at landing; None puts it one stand height below the target COM
    landing_z: float | None = None
    seed: int = 0
    g: float = G
    record_trace: bool = False

    def __post_init__(self):
        if self.mode not in ("ideal", "tracked"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (self.dt > 0.0 and self.timeout > 0.0):
            raise ValueError("dt and timeout must be positive")
        if self.check_samples < 1:
            raise ValueError("at least one check sample is needed")
        if self.friction_mu < 0.0:
            raise ValueError("friction coefficient must be non-negative")


@dataclass
class Touchdown:
    time: float
    c: np.ndarray
    phi: np.ndarray
    cdot: np.ndarray
    phidot: np.ndarray


@dataclass
class EpisodeOutcome:
    c0: np.ndarray
    phi0: np.ndarray
    c_tg: np.ndarray
    phi_tg: np.ndarray
    action: np.ndarray
    clip_excess: np.ndarray
    commanded_liftoff: tuple | None
    achieved_liftoff: tuple | None
    liftoff_time: float | None
    touchdown: Touchdown | None
    final_c: np.ndarray
    final_phi: np.ndarray
    penalties: dict
    bounce_count: int = 0
    failure: str = "none"
    trace: list | None = field(default=None, repr=False)

    @property
    def final_pose(self):
        return self.final_c, self.final_phi

    @property
    def landing_error(self) -> float:
        return float(np.linalg.norm(self.c_tg - self.final_c))

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else [float(x) for x in np.ravel(v)]

        def lo(t):
            return None if t is None else dict(zip(("c", "cdot", "phi", "phidot"), map(arr, t)))

        td = None
        if self.touchdown is not None:
            td = {"time": float(self.touchdown.time), "c": arr(self.touchdown.c), "phi": arr(self.touchdown.phi),
                  "cdot": arr(self.touchdown.cdot), "phidot": arr(self.touchdown.phidot)}
        return {
            "failure": self.failure,
            "bounce_count": int(self.bounce_count),
            "c0": arr(self.c0), "phi0": arr(self.phi0), "c_tg": arr(self.c_tg), "phi_tg": arr(self.phi_tg),
            "action": arr(self.action), "clip_excess": arr(self.clip_excess),
            "commanded_liftoff": lo(self.commanded_liftoff),
            "achieved_liftoff": lo(self.achieved_liftoff),
            "liftoff_time": None if self.liftoff_time is None else float(self.liftoff_time),
            "touchdown": td,
            "final_c": arr(self.final_c), "final_phi": arr(self.final_phi),
            "landing_error": self.landing_error,
            "penalties": {k: float(v) for k, v in self.penalties.items()},
        }


def start_pose(model: QuadrupedModel, cfg: EpisodeConfig, yaw: float = 0.0):
    """Standing COM position and orientation on the start terrain."""
    return np.array([0.0, 0.0, cfg.ground_z + model.stand_height]), np.array([0.0, 0.0, yaw])


def perturb_model(model: QuadrupedModel, seed: int, p: float, d_max: float) -> QuadrupedModel:
    """Plant with randomised mass and extra joint damping; the controller keeps the nominal mass."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("perturbation fraction must lie in [0, 1]")
    if d_max < 0.0:
        raise ValueError("maximum damping must be non-negative")
    rng = np.random.default_rng(seed)
    u_m = rng.uniform(-1.0, 1.0)
    u_d = rng.uniform(0.0, 1.0)
    m0 = model.mass
    return replace(model, mass=m0 + m0 * p * u_m, joint_damping=model.joint_damping + d_max * u_d,
                   controller_mass=model.ff_mass)


def _orientation_error(phi, phi_tg):
    err = np.asarray(phi, dtype=float) - np.asarray(phi_tg, dtype=float)
    return thrust.wrap_angle(err)


def _landing_terrain(c_tg, model, cfg):
    return cfg.landing_z if cfg.landing_z is not None else float(c_tg[2]) - model.stand_height


# ---------------------------------------------------------------------------
# ideal mode (batched)

def _cubic(P, T, t):
    """Value, first and second derivative of cubic Béziers P (N,4,3) over [0,T] at t (N,J)."""
    u = np.clip(t / T[:, None], 0.0, 1.0)[..., None]
    r = 1.0 - u
    P0, P1, P2, P3 = (P[:, i][:, None, :] for i in range(4))
    Tn = T[:, None, None]
    val = r**3 * P0 + 3.0 * r**2 * u * P1 + 3.0 * r * u**2 * P2 + u**3 * P3
    d1 = (3.0 / Tn) * (r**2 * (P1 - P0) + 2.0 * r * u * (P2 - P1) + u**2 * (P3 - P2))
    d2 = (6.0 / Tn**2) * (r * (P2 - 2.0 * P1 + P0) + u * (P3 - 2.0 * P2 + P1))
    return val, d1, d2


@dataclass
class IdealBatch:
    """Array form of N ideal-mode outcomes."""

    c0: np.ndarray
    phi0: np.ndarray
    c_tg: np.ndarray
    phi_tg: np.ndarray
    action: np.ndarray
    clip_excess: np.ndarray
    c_lo: np.ndarray
    cdot_lo: np.ndarray
    phi_lo: np.ndarray
    phidot_lo: np.ndarray
    T_th: np.ndarray
    has_touchdown: np.ndarray
    T_td: np.ndarray
    final_c: np.ndarray
    final_phi: np.ndarray
    failure: np.ndarray
    penalties: dict

    def __len__(self):
        return self.c0.shape[0]

    def outcome(self, i: int) -> EpisodeOutcome:
        rejected = self.failure[i] == "filter-rejected"
        lo = None if rejected else (self.c_lo[i], self.cdot_lo[i], self.phi_lo[i], self.phidot_lo[i])
        td = None
        if self.has_touchdown[i]:
            T_fl = self.T_td[i] - self.T_th[i]
            td = Touchdown(time=float(self.T_td[i]), c=self.final_c[i].copy(), phi=self.final_phi[i].copy(),
                           cdot=self.cdot_lo[i] - np.array([0.0, 0.0, G * T_fl]), phidot=self.phidot_lo[i].copy())
        return EpisodeOutcome(
            c0=self.c0[i], phi0=self.phi0[i], c_tg=self.c_tg[i], phi_tg=self.phi_tg[i],
            action=self.action[i], clip_excess=self.clip_excess[i],
            commanded_liftoff=lo, achieved_liftoff=lo,
            liftoff_time=None if rejected else float(self.T_th[i]),
            touchdown=td, final_c=self.final_c[i], final_phi=self.final_phi[i],
            penalties={k: float(v[i]) for k, v in self.penalties.items()},
            bounce_count=0, failure=str(self.failure[i]),
        )

    @property
    def landing_error(self) -> np.ndarray:
        return np.linalg.norm(self.c_tg - self.final_c, axis=1)


def run_ideal_batch(model: QuadrupedModel, c0, phi0, c_tg, phi_tg, raw_actions,
                    cfg: EpisodeConfig) -> IdealBatch:
    """Evaluate N ideal-mode episodes at once. Pose arguments broadcast to (N, 3)."""
    raw = np.atleast_2d(np.asarray(raw_actions, dtype=float))
    N = raw.shape[0]
    c0, phi0, c_tg, phi_tg = (np.broadcast_to(np.asarray(v, dtype=float), (N, 3)).copy()
                              for v in (c0, phi0, c_tg, phi_tg))
    g = cfg.g
    A = np.clip(raw, thrust.ACTION_LOW, thrust.ACTION_HIGH)
    excess = np.abs(raw - A)
    T_b, r_p, th_p, r_v, th_v, k, d = A[:, :7].T
    phi_lo, phidot_lo = A[:, 7:10], A[:, 10:13]

    # decode
    dx = c_tg[:, 0] - c0[:, 0]
    dy = c_tg[:, 1] - c0[:, 1]
    yaw = np.where((dx == 0.0) & (dy == 0.0), 0.0, np.arctan2(dy, dx))
    cy, sy = np.cos(yaw), np.sin(yaw)
    origin = np.stack([c0[:, 0], c0[:, 1], np.full(N, cfg.ground_z)], axis=1)
    c_lo_b = origin + r_p[:, None] * np.stack([np.cos(th_p) * cy, np.cos(th_p) * sy, np.sin(th_p)], axis=1)
    cdot_lo_b = r_v[:, None] * np.stack([np.cos(th_v) * cy, np.cos(th_v) * sy, np.sin(th_v)], axis=1)
    v_b = np.linalg.norm(cdot_lo_b, axis=1)
    unit = cdot_lo_b / v_b[:, None]
    moving = d > 0.0
    accel = moving & (k != 1.0)
    v_e = k * v_b
    a = np.where(accel, (v_e**2 - v_b**2) / (2.0 * np.where(moving, d, 1.0)), 0.0)
    T_e = np.where(accel, (v_e - v_b) / np.where(accel, a, 1.0), np.where(moving, d / v_b, 0.0))
    T_th = T_b + T_e
    c_lo_e = c_lo_b + d[:, None] * unit
    cdot_lo_e = np.where(moving[:, None], k[:, None] * cdot_lo_b, cdot_lo_b)

    # safety filter on the lift-off state
    z_tg = c_tg[:, 2]
    vz = cdot_lo_e[:, 2]
    apex_z = c_lo_e[:, 2] + 0.5 * np.maximum(vz, 0.0) ** 2 / g
    accepted = ~(z_tg > apex_z)
    disc = np.maximum(vz**2 - 2.0 * g * (z_tg - c_lo_e[:, 2]), 0.0)
    T_fl = np.where(accepted, (vz + np.sqrt(disc)) / g, 0.0)
    has_td = accepted & (T_th + T_fl <= cfg.timeout)
    c_td = np.column_stack([c_lo_e[:, :2] + cdot_lo_e[:, :2] * T_fl[:, None], z_tg])
    phi_td = phi_lo + phidot_lo * T_fl[:, None]

    # without touchdown the state at the timeout is reported
    t_air = np.clip(cfg.timeout - T_th, 0.0, None)
    c_air = c_lo_e + cdot_lo_e * t_air[:, None] - 0.5 * g * t_air[:, None] ** 2 * np.array([0.0, 0.0, 1.0])
    phi_air = phi_lo + phidot_lo * t_air[:, None]
    final_c = np.where(has_td[:, None], c_td, c_air)
    final_phi = np.where(has_td[:, None], phi_td, phi_air)
    final_c = np.where(accepted[:, None], final_c, c0)
    final_phi = np.where(accepted[:, None], final_phi, phi0)

    pen = {name: np.zeros(N) for name in PENALTY_NAMES}
    pen["C_ppo"] = excess.sum(axis=1)
    idx = np.flatnonzero(accepted)
    if idx.size:
        path = _reference_penalties(model, cfg, c0[idx], phi0[idx], c_lo_b[idx], cdot_lo_b[idx], unit[idx],
                                    v_b[idx], a[idx], T_b[idx], T_e[idx], c_lo_e[idx], cdot_lo_e[idx],
                                    phi_lo[idx], phidot_lo[idx])
        for name, val in path.items():
            pen[name][idx] = val
        pen["C_phi_tg"][idx] = np.linalg.norm(_orientation_error(final_phi[idx], phi_tg[idx]), axis=1)
        pen["C_phidot_td"][idx] = np.where(has_td[idx], np.linalg.norm(phidot_lo[idx], axis=1), 0.0)

    failure = np.where(accepted, "none", "filter-rejected").astype(object)
    return IdealBatch(
        c0=c0, phi0=phi0, c_tg=c_tg, phi_tg=phi_tg, action=A, clip_excess=excess,
        c_lo=c_lo_e, cdot_lo=cdot_lo_e, phi_lo=phi_lo.copy(), phidot_lo=phidot_lo.copy(), T_th=T_th,
        has_touchdown=has_td, T_td=np.where(has_td, T_th + T_fl, np.nan), final_c=final_c, final_phi=final_phi,
        failure=failure, penalties=pen,
    )


def _reference_penalties(model, cfg, c0, phi0, c_lo_b, cdot_lo_b, unit, v_b, a, T_b, T_e, c_lo_e, cdot_lo_e,
                         phi_lo, phidot_lo):
    """Path penalties integrated along the thrust references of M accepted episodes."""
    M = c0.shape[0]
    T_th = T_b + T_e
    n = cfg.check_samples
    # left Riemann sums on a uniform grid over each thrust
    t = T_th[:, None] * (np.arange(n) / n)[None, :]
    w = np.broadcast_to((T_th / n)[:, None], t.shape)

    P = np.stack([c0, c0, c_lo_b - (T_b / 3.0)[:, None] * cdot_lo_b, c_lo_b], axis=1)
    c, v, acc = _cubic(P, T_b, t)
    tail = t > T_b[:, None]
    if np.any(tail):
        tau = np.maximum(t - T_b[:, None], 0.0)[..., None]
        if cfg.literal_lerp:
            s = np.clip(tau / np.where(T_e > 0.0, T_e, 1.0)[:, None, None], 0.0, 1.0)
            c_t = c_lo_b[:, None] + s * (c_lo_e - c_lo_b)[:, None]
            v_t = cdot_lo_b[:, None] + s * (cdot_lo_e - cdot_lo_b)[:, None]
        else:
            c_t = c_lo_b[:, None] + (v_b[:, None, None] * tau + 0.5 * a[:, None, None] * tau**2) * unit[:, None]
            v_t = (v_b[:, None, None] + a[:, None, None] * tau) * unit[:, None]
        a_t = np.broadcast_to(a[:, None, None] * unit[:, None], c_t.shape)
        c = np.where(tail[..., None], c_t, c)
        v = np.where(tail[..., None], v_t, v)
        acc = np.where(tail[..., None], a_t, acc)

    zeros = np.zeros_like(phi0)
    Q = np.stack([phi0, phi0 + (T_th / 3.0)[:, None] * zeros, phi_lo - (T_th / 3.0)[:, None] * phidot_lo, phi_lo],
                 axis=1)
    phi, phidot, _ = _cubic(Q, T_th, t)

    feet = np.stack([model.nominal_feet(c0[i], phi0[i, 2]) for i in range(M)])[:, None]
    q, qdot, excess, cond = reference_joint_states(c, phi, v, phidot, feet, model)

    lim = model.q_limits
    rates = {
        "joint_pos": activation(q, lim[:, 0], lim[:, 1]).sum(axis=(-2, -1)),
        "joint_vel": np.minimum(activation(qdot, -model.qdot_max, model.qdot_max),
                                QDOT_EXCESS_CAP * model.qdot_max).sum(axis=(-2, -1)),
        "singularity": (excess + np.maximum(1.0 - SINGULAR_COND / cond, 0.0)).sum(axis=-1),
    }

    # net ground force the reference demands, shared equally by the four feet
    weight = model.mass * cfg.g
    F = model.mass * (acc + np.array([0.0, 0.0, cfg.g]))
    Fz = F[..., 2]
    Ft = np.linalg.norm(F[..., :2], axis=-1)
    rates["unilaterality"] = np.maximum(-Fz, 0.0) / weight
    rates["friction"] = np.where(Fz > 0.0, np.maximum(Ft - cfg.friction_mu * Fz, 0.0), Ft) / weight
    R = rpy_to_matrix(phi)
    Jw = R[..., None, :, :] @ _jac(q, LEG_SIDES, model.link_lengths)
    tau = -(0.25 * F[..., None, None, :] @ Jw)[..., 0, :]
    rates["torque"] = activation(tau, -model.tau_max, model.tau_max).sum(axis=(-2, -1))
    return {name: (rates[name] * w).sum(axis=1) for name in PATH_PENALTIES}


# ---------------------------------------------------------------------------
# tracked mode (episodes advance in lock-step batches)

THRUST, FLIGHT, STANCE, DONE = 0, 1, 2, 3


@dataclass
class SimState:
    """Trunk state: COM position/velocity, rotation matrix, world angular velocity.

    Fields may carry a leading batch dimension.
    """

    c: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    @property
    def rpy(self) -> np.ndarray:
        return matrix_to_rpy(self.R)

    @property
    def phidot(self) -> np.ndarray:
        return np.linalg.solve(euler_rate_matrix(self.rpy), self.omega[..., None])[..., 0]

    def copy(self) -> "SimState":
        return SimState(self.c.copy(), self.v.copy(), self.R.copy(), self.omega.copy())


@dataclass(frozen=True)
class _Plant:
    """Per-episode physical parameters of a batch sharing one geometry."""

    mass: np.ndarray
    ff_mass: np.ndarray
    damping: np.ndarray
    inertia: np.ndarray

    @classmethod
    def from_models(cls, models):
        ref = models[0]
        for m in models[1:]:
            same = (np.array_equal(m.hip_offsets, ref.hip_offsets) and np.array_equal(m.link_lengths, ref.link_lengths)
                    and m.kp == ref.kp and m.kd == ref.kd and np.array_equal(m.tau_max, ref.tau_max))
            if not same:
                raise ValueError("batched episodes must share geometry and gains")
        return cls(np.array([m.mass for m in models]), np.array([m.ff_mass for m in models]),
                   np.array([m.joint_damping for m in models]), np.array([m.inertia for m in models]))

    def take(self, idx):
        return _Plant(self.mass[idx], self.ff_mass[idx], self.damping[idx], self.inertia[idx])


def _so3_exp_batch(w):
    th = np.linalg.norm(w, axis=-1)[..., None, None]
    K = skew(w)
    small = th < 1e-9
    ths = np.where(small, 1.0, th)
    a = np.where(small, 1.0, np.sin(ths) / ths)
    b = np.where(small, 0.5, (1.0 - np.cos(ths)) / ths**2)
    return np.eye(3) + a * K + b * (K @ K)


def _stance_kinematics(c, v, R, omega, feet, model: QuadrupedModel):
    """Joint angles/rates (B,4,3) for pinned feet and a mask of legs that reach them."""
    rel_b = (feet - c[:, None, :]) @ R
    q, excess = _ik(rel_b - model.hip_offsets, LEG_SIDES, model.link_lengths)
    J = _jac(q, LEG_SIDES, model.link_lengths)
    w_b = omega[:, None, :] @ R
    v_b = v[:, None, :] @ R
    v_leg = -cross3(w_b, rel_b) - v_b
    Jinv, det = inv3(J)
    ok = (excess <= 1e-12) & (np.abs(det) > 1e-12)
    Jinv = np.where(ok[..., None, None], Jinv, 0.0)
    qdot = (Jinv @ v_leg[..., None])[..., 0]
    return q, qdot, ok


def _control_step(c, v, R, omega, feet, q_d, qdot_d, model: QuadrupedModel, plant: _Plant, cfg: EpisodeConfig):
    """Joint PD with gravity compensation, contact forces through massless legs, and one
    semi-implicit Euler step of each trunk in the batch."""
    B = c.shape[0]
    g, dt = cfg.g, cfg.dt
    q, qdot, ok = _stance_kinematics(c, v, R, omega, feet, model)
    Jw = R[:, None] @ _jac(q, LEG_SIDES, model.link_lengths)
    rel = feet - c[:, None, :]

    # minimum-norm foot forces balancing the nominal weight over the legs in reach
    G_map = np.zeros((B, 6, 12))
    for i in range(4):
        G_map[:, :3, 3 * i:3 * i + 3] = np.eye(3) * ok[:, i, None, None]
        G_map[:, 3:, 3 * i:3 * i + 3] = skew(rel[:, i]) * ok[:, i, None, None]
    usable = ok.sum(axis=1) >= 3
    fc = np.zeros((B, 12))
    if np.any(usable):
        Gu = G_map[usable]
        wg = np.zeros((Gu.shape[0], 6, 1))
        wg[:, 2, 0] = plant.ff_mass[usable] * g
        y = np.linalg.solve(Gu @ np.transpose(Gu, (0, 2, 1)), wg)
        fc[usable] = (np.transpose(Gu, (0, 2, 1)) @ y)[..., 0]
    tau_ff = -(fc.reshape(B, 4, 1, 3) @ Jw)[..., 0, :]

    tau_raw = model.kp * (q_d - q) + model.kd * (qdot_d - qdot) + tau_ff
    tau = np.clip(tau_raw, -model.tau_max, model.tau_max)
    tau_plant = tau - plant.damping[:, None, None] * qdot

    # f = -J^{-T} tau per leg; legs out of reach or near a singularity carry nothing
    Jinv, det = inv3(Jw)
    with np.errstate(invalid="ignore", over="ignore"):
        cond = np.linalg.norm(Jw, axis=(-2, -1)) * np.linalg.norm(Jinv, axis=(-2, -1))
    regular = ok & (np.abs(det) > 0.0) & (cond <= SINGULAR_COND)
    Jinv = np.where(regular[..., None, None], Jinv, 0.0)
    f = -(tau_plant[..., None, :] @ Jinv)[..., 0, :]
    weight = plant.mass * g
    pull = f[..., 2] < 0.0
    rates = {"unilaterality": np.where(pull, -f[..., 2], 0.0).sum(axis=1) / weight}
    f = np.where(pull[..., None], 0.0, f)
    ft = np.linalg.norm(f[..., :2], axis=-1)
    cap = cfg.friction_mu * f[..., 2]
    slip = ft > cap
    rates["friction"] = np.where(slip, ft - cap, 0.0).sum(axis=1) / weight
    f[..., :2] *= np.where(slip, cap / np.where(slip, ft, 1.0), 1.0)[..., None]

    lim = model.q_limits
    okj = ok[..., None]
    rates["joint_pos"] = (activation(q, lim[:, 0], lim[:, 1]) * okj).sum(axis=(1, 2))
    rates["joint_vel"] = (np.minimum(activation(qdot, -model.qdot_max, model.qdot_max),
                                     QDOT_EXCESS_CAP * model.qdot_max) * okj).sum(axis=(1, 2))
    rates["torque"] = (activation(tau_raw, -model.tau_max, model.tau_max) * okj).sum(axis=(1, 2))
    rates["singularity"] = (ok & ~regular).sum(axis=1).astype(float)

    F = f.sum(axis=1)
    F[:, 2] -= plant.mass * g
    M = cross3(rel, f).sum(axis=1)
    v_n = v + dt * F / plant.mass[:, None]
    c_n = c + dt * v_n
    I = plant.inertia
    w_b = (omega[:, None, :] @ R)[:, 0]
    M_b = (M[:, None, :] @ R)[:, 0]
    w_b = w_b + dt * (M_b - cross3(w_b, I * w_b)) / I
    R_n = R @ _so3_exp_batch(w_b * dt)
    omega_n = (R_n @ w_b[..., None])[..., 0]
    info = {"q": q, "qdot": qdot, "tau": np.where(okj, tau, 0.0), "f": f, "ok": ok}
    return (c_n, v_n, R_n, omega_n), rates, info


def reference_joints(ref, feet, model: QuadrupedModel):
    """Desired joint angles and rates (N,4,3) for reference samples ``(c, cdot, phi, phidot)`` of shape (N,3).

    Raises :class:`OutOfWorkspaceError` at the first sample a leg cannot reach.
    """
    c_r, v_r, phi_r, phid_r = (np.atleast_2d(np.asarray(x, dtype=float)) for x in ref)
    q_d, qdot_d, excess, _ = reference_joint_states(c_r, phi_r, v_r, phid_r, feet, model)
    bad = np.argwhere(excess > 1e-12)
    if bad.size:
        raise OutOfWorkspaceError("reference pose out of reach", distance=float(excess[tuple(bad[0])]),
                                  leg=int(bad[0][1]))
    return q_d, qdot_d


def thrust_step(state: SimState, ref, feet, model: QuadrupedModel, cfg: EpisodeConfig, joint_ref=None):
    """Advance one stance trunk by ``dt`` while tracking ``ref = (c, cdot, phi, phidot)``.

    ``joint_ref`` may carry precomputed ``(q_d, qdot_d)``. Returns
    ``(next_state, step_penalty_rates, info)``. Raises :class:`OutOfWorkspaceError`
    if a leg cannot reach its pinned foot.
    """
    if joint_ref is None:
        q_d, qdot_d = reference_joints(ref, feet, model)
    else:
        q_d, qdot_d = (np.asarray(x, dtype=float).reshape(1, 4, 3) for x in joint_ref)
    feet = np.asarray(feet, dtype=float)[None]
    nxt, rates, info = _control_step(state.c[None], state.v[None], state.R[None], state.omega[None], feet,
                                     q_d.reshape(1, 4, 3), qdot_d.reshape(1, 4, 3), model,
                                     _Plant.from_models([model]), cfg)
    if not np.all(info["ok"]):
        raise OutOfWorkspaceError("a stance leg cannot reach its foot", leg=int(np.flatnonzero(~info["ok"][0])[0]))
    return (SimState(*(x[0] for x in nxt)), {k: float(v[0]) for k, v in rates.items()},
            {k: v[0] for k, v in info.items()})


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _schedule(tau, q_start, q_retract, q_land, t_apex, t_ext):
    """Cubic Hermite (zero end velocity) joint targets during flight, batched over (B,)."""
    up = t_apex > 0.0
    s1 = _smoothstep(tau / np.where(up, t_apex, 1.0))[:, None, None]
    span = t_ext - t_apex
    s2 = np.where(span > 0.0, _smoothstep((tau - t_apex) / np.where(span > 0.0, span, 1.0)), 1.0)[:, None, None]
    q0 = np.where(up[:, None, None], q_retract, q_start)
    first = (up & (tau <= t_apex))[:, None, None]
    return np.where(first, q_start + s1 * (q_retract - q_start), q0 + s2 * (q_land - q0))


@dataclass
class LegSchedule:
    """Flight joint schedule: retract until ``t_apex``, extend to the landing pose by ``t_extended``."""

    q_start: np.ndarray
    q_retract: np.ndarray
    q_land: np.ndarray
    t_apex: float
    t_extended: float

    def __call__(self, tau: float) -> np.ndarray:
        q = _schedule(np.array([tau]), self.q_start[None], self.q_retract[None], self.q_land[None],
                      np.array([self.t_apex]), np.array([self.t_extended]))
        return q[0]


def _schedule_times(c_lo, cdot_lo, z_land_com, g):
    vz = cdot_lo[..., 2]
    t_apex = np.maximum(vz, 0.0) / g
    disc = vz**2 - 2.0 * g * (z_land_com - c_lo[..., 2])
    t_td = np.where(disc >= 0.0, (vz + np.sqrt(np.maximum(disc, 0.0))) / g, t_apex)
    return t_apex, t_apex + 0.8 * np.maximum(t_td - t_apex, 0.0)


def flight_schedule(q_lo, c_lo, cdot_lo, z_land_com, model: QuadrupedModel, g: float = G) -> LegSchedule:
    """Retract until the apex, then extend to the nominal pose ahead of the expected touchdown."""
    t_apex, t_ext = _schedule_times(np.asarray(c_lo, float), np.asarray(cdot_lo, float), z_land_com, g)
    return LegSchedule(np.asarray(q_lo, dtype=float).reshape(4, 3), np.tile(model.q_retract, (4, 1)),
                       np.tile(model.q_default, (4, 1)), float(t_apex), float(t_ext))


def _ballistic(c_lo, v_lo, rpy_lo, phidot_lo, tau, g):
    t = np.asarray(tau, dtype=float)[..., None]
    c = c_lo + v_lo * t
    c[..., 2] -= 0.5 * g * t[..., 0] ** 2
    v = v_lo.copy()
    v[..., 2] -= g * t[..., 0]
    rpy = rpy_lo + phidot_lo * t
    omega = (euler_rate_matrix(rpy) @ phidot_lo[..., None])[..., 0]
    return c, v, rpy_to_matrix(rpy), omega


def flight_step(state: SimState, tau: float, lo: SimState, phidot_lo, cfg: EpisodeConfig) -> SimState:
    """Exact projectile COM motion and constant Euler rates, ``tau`` seconds after lift-off."""
    return SimState(*_ballistic(lo.c, lo.v, lo.rpy, np.asarray(phidot_lo, dtype=float), tau, cfg.g))


def feet_world(state: SimState, q, model: QuadrupedModel) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(np.shape(state.c)[:-1] + (4, 3))
    local = model.hip_offsets + _fk(q, LEG_SIDES, model.link_lengths)
    return state.c[..., None, :] + local @ np.swapaxes(state.R, -1, -2)


_BOX_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)


def trunk_corners(state: SimState, model: QuadrupedModel) -> np.ndarray:
    return state.c[..., None, :] + (0.5 * _BOX_SIGNS * model.trunk_dims) @ np.swapaxes(state.R, -1, -2)


def _contact_kind(state: SimState, q, terrain_z, model):
    trunk_low = trunk_corners(state, model)[..., 2].min(axis=-1)
    foot_low = feet_world(state, q, model)[..., 2].min(axis=-1)
    trunk_hit = (trunk_low <= terrain_z) & (trunk_low < foot_low)
    foot_hit = ~trunk_hit & (foot_low <= terrain_z)
    return trunk_hit, foot_hit


def detect_touchdown(state: SimState, q, terrain_z: float, model: QuadrupedModel):
    """``"foot"`` when the lowest foot reaches the terrain, ``"trunk"`` when the trunk box
    gets there first, otherwise ``None``."""
    trunk_hit, foot_hit = _contact_kind(state, q, terrain_z, model)
    return "trunk" if trunk_hit else ("foot" if foot_hit else None)


TRACE_COLUMNS = (
    ("t", "phase", "cx", "cy", "cz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz")
    + tuple(f"q{i}" for i in range(12)) + tuple(f"qd{i}" for i in range(12))
    + tuple(f"tau{i}" for i in range(12)) + tuple(f"f{i}{a}" for i in range(4) for a in "xyz")
)


def _trace_row(t, phase, state, q, qdot, tau, f):
    return [t, phase, *state.c, *state.rpy, *state.v, *state.omega,
            *np.ravel(q), *np.ravel(qdot), *np.ravel(tau), *np.ravel(f)]


def export_trace(outcome: EpisodeOutcome, path) -> Path:
    if outcome.trace is None:
        raise ValueError("episode was run without trace recording")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in outcome.trace:
            w.writerow([row[1] if i == 1 else repr(float(x)) for i, x in enumerate(row)])
    return path


def run_tracked_batch(models, c0, phi0, c_tg, phi_tg, raw_actions, cfg: EpisodeConfig) -> list:
    """Simulate B tracked episodes in lock-step.

    ``models`` is one model or a list of B models that differ only in mass and
    damping (e.g. from :func:`perturb_model`). Returns B :class:`EpisodeOutcome`.
    """
    raw = np.atleast_2d(np.asarray(raw_actions, dtype=float))
    B = raw.shape[0]
    models = [models] * B if isinstance(models, QuadrupedModel) else list(models)
    if len(models) != B:
        raise ValueError("need one model per episode")
    model = models[0]
    plant = _Plant.from_models(models)
    c0, phi0, c_tg, phi_tg = (np.broadcast_to(np.asarray(v, dtype=float), (B, 3)).copy()
                              for v in (c0, phi0, c_tg, phi_tg))
    dt, g = cfg.dt, cfg.g
    A = np.clip(raw, thrust.ACTION_LOW, thrust.ACTION_HIGH)
    excess = np.abs(raw - A)
    pen = {name: np.zeros(B) for name in PENALTY_NAMES}
    pen["C_ppo"] = excess.sum(axis=1)
    failure = np.array(["none"] * B, dtype=object)
    phase = np.full(B, THRUST)
    n_total = int(round(cfg.timeout / dt))

    feet = np.stack([model.nominal_feet(c0[i], float(phi0[i, 2])) for i in range(B)])
    terrain = np.array([_landing_terrain(c_tg[i], model, cfg) for i in range(B)])
    commanded = [None] * B
    n_thrust = np.zeros(B, dtype=int)
    refs = []
    for i in range(B):
        boundary, traj = thrust.plan(thrust.JumpAction.from_array(A[i]), c0[i], phi0[i], c_tg[i], cfg.ground_z,
                                     cfg.literal_lerp)
        verdict = ballistics.safety_filter(BallisticState(boundary.c_lo_e, boundary.cdot_lo_e), c_tg[i], g)
        if not verdict.accepted:
            failure[i], phase[i] = "filter-rejected", DONE
            refs.append(None)
            continue
        commanded[i] = (boundary.c_lo_e, boundary.cdot_lo_e, boundary.phi_lo, boundary.phidot_lo)
        n_thrust[i] = int(math.ceil(traj.T_th / dt - 1e-9))
        ts = np.minimum(np.arange(n_thrust[i]) * dt, traj.T_th)
        try:
            refs.append(reference_joints(thrust.sample(traj, ts), feet[i], model))
        except OutOfWorkspaceError:
            failure[i], phase[i] = "ik-unreachable", DONE
            refs.append(None)
    n_max = max([int(n) for n in n_thrust] + [1])
    q_ref = np.zeros((B, n_max, 4, 3))
    qdot_ref = np.zeros((B, n_max, 4, 3))
    for i, r in enumerate(refs):
        if r is not None:
            q_ref[i, :n_thrust[i]], qdot_ref[i, :n_thrust[i]] = r

    c = c0.copy()
    v = np.zeros((B, 3))
    R = rpy_to_matrix(phi0)
    omega = np.zeros((B, 3))
    q_cur = np.tile(model.q_default, (B, 4, 1))
    lo_c, lo_v, lo_rpy, lo_phidot = (np.zeros((B, 3)) for _ in range(4))
    achieved = [None] * B
    t_lo = np.full(B, np.nan)
    tau_air = np.zeros(B)
    sched_start, sched_retract = q_cur.copy(), np.tile(model.q_retract, (B, 4, 1))
    q_land = np.tile(model.q_default, (B, 4, 1))
    t_apex, t_ext = np.zeros(B), np.zeros(B)
    touchdown = [None] * B
    bounces = np.zeros(B, dtype=int)
    traces = [[] for _ in range(B)] if cfg.record_trace else None
    zeros43 = np.zeros((4, 3))

    for step in range(n_total):
        if np.all(phase == DONE):
            break
        t = step * dt
        now = phase.copy()
        ctl = np.flatnonzero((now == THRUST) | (now == STANCE))
        if ctl.size:
            in_thrust = now[ctl] == THRUST
            k = np.minimum(step, n_max - 1)
            q_d = np.where(in_thrust[:, None, None], q_ref[ctl, k], model.q_default)
            qdot_d = np.where(in_thrust[:, None, None], qdot_ref[ctl, k], 0.0)
            nxt, rates, info = _control_step(c[ctl], v[ctl], R[ctl], omega[ctl], feet[ctl], q_d, qdot_d,
                                             model, plant.take(ctl), cfg)
            lost = in_thrust & ~np.all(info["ok"], axis=1)
            keep = ~lost
            if np.any(lost):
                failure[ctl[lost]] = "ik-unreachable"
                phase[ctl[lost]] = DONE
            idx = ctl[keep]
            if traces is not None:
                for j in np.flatnonzero(keep):
                    i = ctl[j]
                    st = SimState(c[i], v[i], R[i], omega[i])
                    traces[i].append(_trace_row(t, "thrust" if in_thrust[j] else "stance", st, info["q"][j],
                                                info["qdot"][j], info["tau"][j], info["f"][j]))
            for name, val in rates.items():
                pen[name][idx] += val[keep] * dt
            c[idx], v[idx], R[idx], omega[idx] = (x[keep] for x in nxt)
            q_cur[idx] = np.where(info["ok"][keep][..., None], info["q"][keep], q_cur[idx])

            # lift-off at the end of the thrust reference
            thr = idx[in_thrust[keep]]
            if thr.size:
                low = trunk_corners(SimState(c[thr], v[thr], R[thr], omega[thr]), model)[..., 2].min(axis=1)
                hit = thr[low <= cfg.ground_z]
                failure[hit], phase[hit] = "non-foot-contact", DONE
                done_thrust = thr[(step + 1 >= n_thrust[thr]) & (phase[thr] == THRUST)]
                if done_thrust.size:
                    st = SimState(c[done_thrust], v[done_thrust], R[done_thrust], omega[done_thrust])
                    lo_c[done_thrust], lo_v[done_thrust] = st.c, st.v
                    lo_rpy[done_thrust], lo_phidot[done_thrust] = st.rpy, st.phidot
                    for i in done_thrust:
                        achieved[i] = (lo_c[i].copy(), lo_v[i].copy(), lo_rpy[i].copy(), lo_phidot[i].copy())
                        cmd = commanded[i]
                        pen["C_lo"][i] = float(np.linalg.norm(np.concatenate([lo_v[i] - cmd[1],
                                                                              lo_phidot[i] - cmd[3]])))
                    t_lo[done_thrust] = (step + 1) * dt
                    sched_start[done_thrust] = q_cur[done_thrust]
                    sched_retract[done_thrust] = model.q_retract
                    t_apex[done_thrust], t_ext[done_thrust] = _schedule_times(
                        lo_c[done_thrust], lo_v[done_thrust], terrain[done_thrust] + model.stand_height, g)
                    tau_air[done_thrust] = 0.0
                    phase[done_thrust] = FLIGHT

            # settling legs: unloaded while rising means the robot bounced off
            stn = idx[~in_thrust[keep]]
            if stn.size:
                f_st = info["f"][keep][~in_thrust[keep]]
                up = stn[~np.any(f_st != 0.0, axis=(1, 2)) & (v[stn, 2] > 0.0)]
                if up.size:
                    bounces[up] += 1
                    st = SimState(c[up], v[up], R[up], omega[up])
                    lo_c[up], lo_v[up], lo_rpy[up], lo_phidot[up] = st.c, st.v, st.rpy, st.phidot
                    sched_start[up] = sched_retract[up] = q_cur[up]
                    t_apex[up], t_ext[up] = 0.0, 0.05
                    tau_air[up] = 0.0
                    phase[up] = FLIGHT
                rest = stn[phase[stn] == STANCE]
                if rest.size:
                    low = trunk_corners(SimState(c[rest], v[rest], R[rest], omega[rest]), model)[..., 2].min(axis=1)
                    hit = rest[low <= terrain[rest]]
                    failure[hit], phase[hit] = "non-foot-contact", DONE

        fl = np.flatnonzero(now == FLIGHT)
        if fl.size:
            tau_air[fl] += dt
            c[fl], v[fl], R[fl], omega[fl] = _ballistic(lo_c[fl], lo_v[fl], lo_rpy[fl], lo_phidot[fl], tau_air[fl], g)
            q_cur[fl] = _schedule(tau_air[fl], sched_start[fl], sched_retract[fl], q_land[fl], t_apex[fl], t_ext[fl])
            if traces is not None:
                for i in fl:
                    traces[i].append(_trace_row(t + dt, "flight", SimState(c[i], v[i], R[i], omega[i]), q_cur[i],
                                                zeros43, zeros43, zeros43))
            down = fl[v[fl, 2] < 0.0]
            if down.size:
                st = SimState(c[down], v[down], R[down], omega[down])
                trunk_hit, foot_hit = _contact_kind(st, q_cur[down], terrain[down], model)
                failure[down[trunk_hit]], phase[down[trunk_hit]] = "non-foot-contact", DONE
                land = down[foot_hit]
                if land.size:
                    fw = feet_world(SimState(c[land], v[land], R[land], omega[land]), q_cur[land], model)
                    fw[..., 2] = terrain[land][:, None]
                    feet[land] = fw
                    phase[land] = STANCE
                    for i in land:
                        if touchdown[i] is None:
                            touchdown[i] = Touchdown(t + dt, c[i].copy(), matrix_to_rpy(R[i]), v[i].copy(),
                                                     lo_phidot[i].copy())

    outcomes = []
    rpy_end = matrix_to_rpy(R)
    for i in range(B):
        p = {name: float(pen[name][i]) for name in PENALTY_NAMES}
        if touchdown[i] is not None:
            p["C_phidot_td"] = float(np.linalg.norm(touchdown[i].phidot))
            p["C_dx"] = float(np.linalg.norm(c[i, :2] - touchdown[i].c[:2]))
        if failure[i] != "filter-rejected":
            p["C_phi_tg"] = float(np.linalg.norm(_orientation_error(rpy_end[i], phi_tg[i])))
        outcomes.append(EpisodeOutcome(
            c0=c0[i], phi0=phi0[i], c_tg=c_tg[i], phi_tg=phi_tg[i], action=A[i], clip_excess=excess[i],
            commanded_liftoff=commanded[i], achieved_liftoff=achieved[i],
            liftoff_time=None if np.isnan(t_lo[i]) else float(t_lo[i]), touchdown=touchdown[i],
            final_c=c[i].copy(), final_phi=rpy_end[i].copy(), penalties=p, bounce_count=int(bounces[i]),
            failure=str(failure[i]), trace=None if traces is None else traces[i]))
    return outcomes


def _ideal_trace(outcome: EpisodeOutcome, traj, cfg: EpisodeConfig):
    rows = []
    z12 = np.zeros(12)
    ts = np.arange(0.0, traj.T_th, cfg.dt)
    c, v, phi, phid = thrust.sample(traj, ts) if ts.size else (np.zeros((0, 3)),) * 4
    for k, tk in enumerate(ts):
        st = SimState(c[k], v[k], rpy_to_matrix(phi[k]), euler_rate_matrix(phi[k]) @ phid[k])
        rows.append(_trace_row(tk, "thrust", st, z12, z12, z12, z12))
    c_lo, v_lo, phi_lo, phid_lo = outcome.achieved_liftoff
    lo = SimState(c_lo, v_lo, rpy_to_matrix(phi_lo), euler_rate_matrix(phi_lo) @ phid_lo)
    t_end = outcome.touchdown.time if outcome.touchdown is not None else cfg.timeout
    for tk in np.arange(traj.T_th, t_end, cfg.dt):
        rows.append(_trace_row(tk, "flight", flight_step(lo, tk - traj.T_th, lo, phid_lo, cfg), z12, z12, z12, z12))
    return rows


def run_episode(model: QuadrupedModel, command: thrust.JumpCommand, raw_action, cfg: EpisodeConfig,
                c0=None, phi0=None) -> EpisodeOutcome:
    """Run one jump from standstill; failures are reported in the outcome, never raised."""
    if c0 is None or phi0 is None:
        c_start, phi_start = start_pose(model, cfg)
        c0 = c_start if c0 is None else c0
        phi0 = phi_start if phi0 is None else phi0
    c0 = np.asarray(c0, dtype=float)
    phi0 = np.asarray(phi0, dtype=float)
    c_tg, phi_tg = command.target(c0, phi0)
    raw = np.asarray(raw_action, dtype=float).reshape(13)
    if cfg.mode == "ideal":
        out = run_ideal_batch(model, c0, phi0, c_tg, phi_tg, raw[None], cfg).outcome(0)
        if cfg.record_trace and out.failure != "filter-rejected":
            _, traj = thrust.plan(thrust.JumpAction.from_array(out.action), c0, phi0, c_tg, cfg.ground_z,
                                  cfg.literal_lerp)
            out.trace = _ideal_trace(out, traj, cfg)
        return out
    return run_tracked_batch(model, c0, phi0, c_tg, phi_tg, raw[None], cfg)[0]
