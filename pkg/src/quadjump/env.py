"""Vectorised one-step jump environments for training and evaluation.

An environment owns ``n_envs`` slots. ``reset`` draws one jump command per
slot and returns the 6-D observations, ``step`` runs every slot's jump with
the given raw actions and returns rewards plus per-slot diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import thrust
from .quadruped import QuadrupedModel
from .reward import PENALTY_KEYS, RewardParams, batch_reward, episode_reward, weighted_sum
from .simulator import EpisodeConfig, run_ideal_batch, run_tracked_batch, start_pose


@dataclass(frozen=True)
class TargetRegion:
    """Box of commanded displacements; angles in radians."""

    x: tuple = (0.0, 1.2)
    y: tuple = (-0.3, 0.3)
    z: tuple = (0.0, 0.0)
    roll: tuple = (0.0, 0.0)
    pitch: tuple = (0.0, 0.0)
    yaw: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("x", "y", "z", "roll", "pitch", "yaw"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise ValueError(f"region bound {name} is not ordered")
            object.__setattr__(self, name, (lo, hi))

    @property
    def low(self) -> np.ndarray:
        return np.array([self.x[0], self.y[0], self.z[0], self.roll[0], self.pitch[0], self.yaw[0]])

    @property
    def high(self) -> np.ndarray:
        return np.array([self.x[1], self.y[1], self.z[1], self.roll[1], self.pitch[1], self.yaw[1]])

    def sample(self, rng, n: int) -> np.ndarray:
        """Uniform draws of (dx, dy, dz, droll, dpitch, dyaw), shape (n, 6)."""
        return rng.uniform(self.low, self.high, size=(n, 6))


FLAT_REGION = TargetRegion()
OMNI_REGION = TargetRegion(x=(-0.6, 1.2), y=(-0.6, 0.6), z=(-0.4, 0.4),
                           roll=(-math.radians(15), math.radians(15)),
                           pitch=(-math.radians(15), math.radians(15)),
                           yaw=(-math.radians(90), math.radians(90)))
REGIONS = {"flat": FLAT_REGION, "omni": OMNI_REGION}


class JumpEnv:
    """Jump episodes from the standing pose towards sampled targets."""

    metric_names = (*PENALTY_KEYS, "landing_error", "failure_rate")

    def __init__(self, model: QuadrupedModel = QuadrupedModel(), params: RewardParams = RewardParams(),
                 cfg: EpisodeConfig = EpisodeConfig(), region: TargetRegion = FLAT_REGION, n_envs: int = 256,
                 models=None):
        if n_envs < 1:
            raise ValueError("need at least one environment")
        self.model, self.params, self.cfg, self.region, self.n_envs = model, params, cfg, region, n_envs
        # optional per-slot plants for tracked mode
        self.models = models
        self.c0, self.phi0 = start_pose(model, cfg)
        self.states = np.zeros((n_envs, 6))

    def to_raw(self, a_norm) -> np.ndarray:
        return thrust.normalized_to_raw(a_norm)

    def set_states(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape != (self.n_envs, 6):
            raise ValueError(f"expected states of shape ({self.n_envs}, 6)")
        self.states = states.copy()
        return self.states

    def reset(self, rng) -> np.ndarray:
        return self.set_states(self.region.sample(rng, self.n_envs))

    def targets(self):
        c_tg = self.c0 + self.states[:, :3]
        phi_tg = self.phi0 + self.states[:, 3:]
        return c_tg, phi_tg

    def step(self, raw_actions):
        c_tg, phi_tg = self.targets()
        raw = np.asarray(raw_actions, dtype=float).reshape(self.n_envs, 13)
        if self.cfg.mode == "ideal":
            batch = run_ideal_batch(self.model, self.c0, self.phi0, c_tg, phi_tg, raw, self.cfg)
            R, pen = batch_reward(batch, self.params)
            final_c, final_phi, failure = batch.final_c, batch.final_phi, batch.failure
            outcomes = batch
        else:
            models = self.models if self.models is not None else self.model
            outcomes = run_tracked_batch(models, self.c0, self.phi0, c_tg, phi_tg, raw, self.cfg)
            scored = [episode_reward(o, self.params) for o in outcomes]
            R = np.array([s[0] for s in scored])
            pen = {k: np.array([s[1][k] for s in scored]) for k in PENALTY_KEYS}
            final_c = np.array([o.final_c for o in outcomes])
            final_phi = np.array([o.final_phi for o in outcomes])
            failure = np.array([o.failure for o in outcomes], dtype=object)
        info = dict(pen)
        info["total_penalty"] = weighted_sum(pen, self.params.weights)
        info["landing_error"] = np.linalg.norm(c_tg - final_c, axis=1)
        info["failure_rate"] = (failure != "none").astype(float)
        info["final_c"] = final_c
        info["final_phi"] = final_phi
        info["failure"] = failure
        info["c_tg"] = c_tg
        info["phi_tg"] = phi_tg
        info["outcomes"] = outcomes
        return np.asarray(R, dtype=float), info


class BanditEnv:
    """Stateless quadratic bandit: reward -||a - a*||^2 in normalised action units."""

    metric_names = ("distance",)

    def __init__(self, optimum=None, n_envs: int = 64, state_dim: int = 6):
        self.optimum = np.full(13, 0.3) if optimum is None else np.asarray(optimum, dtype=float).reshape(-1)
        self.n_envs = n_envs
        self.state_dim = state_dim

    def to_raw(self, a_norm) -> np.ndarray:
        return np.asarray(a_norm, dtype=float)

    def reset(self, rng) -> np.ndarray:
        return np.zeros((self.n_envs, self.state_dim))

    def step(self, raw_actions):
        diff = np.asarray(raw_actions, dtype=float) - self.optimum
        dist = np.linalg.norm(diff, axis=1)
        return -dist**2, {"distance": dist}
