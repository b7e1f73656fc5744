"""Experiment configuration files.

One INI file per concern: the robot (``[robot]``), the reward (``[reward]`` and
``[weights]``) and the run (``[policy]``, ``[train]``, ``[env]``, ``[eval]``).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .env import REGIONS, BanditEnv, JumpEnv, TargetRegion
from .learner import PolicyConfig, TrainConfig
from .quadruped import QuadrupedModel
from .reward import RewardParams
from .simulator import EpisodeConfig


class ConfigError(ValueError):
    """Missing or malformed configuration."""


@dataclass(frozen=True)
class EnvSettings:
    kind: str = "jump"
    region: str = "flat"
    mode: str = "ideal"
    dt: float = 0.001
    timeout: float = 1.5
    friction_mu: float = 0.8
    check_samples: int = 50
    literal_lerp: bool = False

    def __post_init__(self):
        if self.kind not in ("jump", "bandit"):
            raise ConfigError(f"unknown env kind {self.kind!r}")
        if self.region not in REGIONS:
            raise ConfigError(f"unknown region {self.region!r}")

    def episode_config(self, seed: int = 0, mode: str | None = None) -> EpisodeConfig:
        return EpisodeConfig(mode=mode or self.mode, dt=self.dt, timeout=self.timeout, friction_mu=self.friction_mu,
                             check_samples=self.check_samples, literal_lerp=self.literal_lerp, seed=seed)

    @property
    def target_region(self) -> TargetRegion:
        return REGIONS[self.region]


@dataclass(frozen=True)
class EvalSettings:
    samples: int = 2048
    threshold: float = 0.2
    yaw_step_deg: float = 5.0
    grid: int = 13
    z_levels: int = 9
    robust_runs: int = 100
    robust_p: float = 0.5
    robust_d_max: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    policy: PolicyConfig
    train: TrainConfig
    env: EnvSettings
    eval: EvalSettings

    def to_dict(self) -> dict:
        return {k: asdict(getattr(self, k)) for k in ("policy", "train", "env", "eval")}


def _convert(cls, section, overrides=None) -> dict:
    out = {}
    types = {f.name: f.type for f in fields(cls)}
    for key, raw in section.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        default = getattr(cls(), key) if key != "hidden" else (0,)
        try:
            if isinstance(default, bool):
                val = section.getboolean(key)
            elif isinstance(default, int):
                val = int(raw)
            elif isinstance(default, float):
                val = float(raw)
            elif isinstance(default, tuple):
                val = tuple(int(x) for x in raw.replace(",", " ").split())
            else:
                val = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        out[key] = val
    out.update(overrides or {})
    return out


def load_run_config(path, seed: int | None = None, n_envs: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    train_over = {}
    if seed is not None:
        train_over["seed"] = seed
    if n_envs is not None:
        train_over["n_envs"] = n_envs
    try:
        policy = PolicyConfig(**_convert(PolicyConfig, cp["policy"] if cp.has_section("policy") else {}))
        train = TrainConfig(**_convert(TrainConfig, cp["train"] if cp.has_section("train") else {}, train_over))
        env = EnvSettings(**_convert(EnvSettings, cp["env"] if cp.has_section("env") else {}))
        ev = EvalSettings(**_convert(EvalSettings, cp["eval"] if cp.has_section("eval") else {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(policy=policy, train=train, env=env, eval=ev)


def save_run_config(cfg: RunConfig, path) -> Path:
    cp = configparser.ConfigParser()
    for name, section in cfg.to_dict().items():
        cp[name] = {k: ", ".join(map(str, v)) if isinstance(v, (tuple, list)) else str(v) for k, v in section.items()}
    path = Path(path)
    with path.open("w") as fh:
        cp.write(fh)
    return path


def make_env(run: RunConfig, model: QuadrupedModel, params: RewardParams, n_envs: int | None = None):
    n = run.train.n_envs if n_envs is None else n_envs
    if run.env.kind == "bandit":
        return BanditEnv(n_envs=n, state_dim=run.policy.state_dim)
    return JumpEnv(model=model, params=params, cfg=run.env.episode_config(run.train.seed), region=run.env.target_region,
                   n_envs=n)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(*parts) -> str:
    """Stable digest of dataclasses or plain dicts."""
    data = [asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts]
    text = json.dumps(_jsonable(data), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
