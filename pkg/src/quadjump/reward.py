"""Jump reward: a landing term scaled down by the weighted constraint penalties."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PENALTY_KEYS = (
    "joint_pos", "joint_vel", "torque", "friction", "unilaterality", "singularity",
    "C_lo", "C_phi_tg", "C_dx", "C_phidot_td", "C_ppo",
)


def activation(x, lo, hi):
    """Linear activation |min(x - lo, 0) + max(x - hi, 0)|: zero inside [lo, hi]."""
    x = np.asarray(x, dtype=float)
    out = np.abs(np.minimum(x - lo, 0.0) + np.maximum(x - hi, 0.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RewardParams:
    """Reward shaping constants.

    ``sigma_e``, ``sigma_d`` and ``c_dx_default`` are tuning choices rather
    than published values.
    """

    sigma_e: float = 0.1
    sigma_d: float = 1.0
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in PENALTY_KEYS})
    c_dx_default: float = 10.0

    def __post_init__(self):
        if not (self.sigma_e > 0.0 and self.sigma_d > 0.0):
            raise ValueError("reward scales must be positive")
        w = {k: 1.0 for k in PENALTY_KEYS}
        for key, val in dict(self.weights).items():
            if key not in w:
                raise KeyError(f"unknown penalty weight {key!r}")
            if not float(val) >= 0.0:
                raise ValueError(f"weight {key} must be non-negative")
            w[key] = float(val)
        object.__setattr__(self, "weights", w)


def load_params(path) -> RewardParams:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    sec = cp["reward"]
    weights = {k: float(v) for k, v in cp["weights"].items()} if cp.has_section("weights") else {}
    return RewardParams(sigma_e=float(sec["sigma_e"]), sigma_d=float(sec["sigma_d"]),
                        c_dx_default=float(sec["c_dx_default"]), weights=weights)


def save_params(params: RewardParams, path) -> Path:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["reward"] = {"sigma_e": repr(params.sigma_e), "sigma_d": repr(params.sigma_d),
                    "c_dx_default": repr(params.c_dx_default)}
    cp["weights"] = {k: repr(v) for k, v in params.weights.items()}
    path = Path(path)
    with path.open("w") as fh:
        cp.write(fh)
    return path


def landing_reward(c_final, c0, c_tg, params: RewardParams):
    """exp(-e_tg / sigma_e) * exp(dc / sigma_d); longer commanded jumps earn more.

    Positions may carry leading batch dimensions.
    """
    c_tg = np.asarray(c_tg, dtype=float)
    e_tg = np.linalg.norm(c_tg - np.asarray(c_final, dtype=float), axis=-1)
    dc = np.linalg.norm(c_tg - np.asarray(c0, dtype=float), axis=-1)
    out = np.exp(-e_tg / params.sigma_e) * np.exp(dc / params.sigma_d)
    return float(out) if np.ndim(out) == 0 else out


def weighted_sum(penalties: dict, weights: dict):
    return sum(weights.get(k, 1.0) * np.asarray(v, dtype=float) for k, v in penalties.items())


def total_reward(R_lt, penalties: dict, weights: dict):
    """R = R_lt * exp(-(sum_i w_i C_i)^2)."""
    s = weighted_sum(penalties, weights)
    out = np.asarray(R_lt, dtype=float) * np.exp(-np.square(s))
    return float(out) if np.ndim(out) == 0 else out


def assemble_penalties(outcome, params: RewardParams) -> dict:
    """Penalty map of an episode, with the drift term replaced by its default
    when there was no clean touchdown."""
    pen = {k: float(outcome.penalties.get(k, 0.0)) for k in PENALTY_KEYS}
    if outcome.touchdown is None or outcome.failure == "non-foot-contact":
        pen["C_dx"] = params.c_dx_default
    return pen


def episode_reward(outcome, params: RewardParams) -> tuple[float, dict]:
    """Total reward of one episode and its penalty map; invalid episodes score zero."""
    pen = assemble_penalties(outcome, params)
    R_lt = 0.0 if outcome.failure != "none" else landing_reward(outcome.final_c, outcome.c0, outcome.c_tg, params)
    return total_reward(R_lt, pen, params.weights), pen


def batch_reward(batch, params: RewardParams):
    """Vectorised reward for an ideal-mode batch: ``(R, penalties)``."""
    pen = {k: np.asarray(batch.penalties[k], dtype=float).copy() for k in PENALTY_KEYS}
    pen["C_dx"] = np.where(batch.has_touchdown & (batch.failure == "none"), pen["C_dx"], params.c_dx_default)
    valid = batch.failure == "none"
    R_lt = np.where(valid, landing_reward(batch.final_c, batch.c0, batch.c_tg, params), 0.0)
    return total_reward(R_lt, pen, params.weights), pen
