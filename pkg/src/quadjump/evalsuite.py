"""Evaluation sweeps of a trained jump policy, written as CSV tables.

Every sweep acts with the deterministic policy mean and draws its targets
from a seeded generator, so its output is a pure function of the checkpoint,
the configuration and the seed. Each CSV gets a JSON sidecar with that
provenance.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import thrust
from .env import OMNI_REGION, JumpEnv, TargetRegion
from .quadruped import QuadrupedModel
from .reward import RewardParams
from .simulator import EpisodeConfig, perturb_model, run_tracked_batch, start_pose

REGION_COLUMNS = ("x", "y", "landing_error", "pass")
AVT_COLUMNS = ("target_dist", "actual_dist", "failed")
HEIGHT_UP_COLUMNS = ("x", "y", "max_up_z")
HEIGHT_DOWN_COLUMNS = ("x", "y", "min_down_z")
YAW_COLUMNS = ("yaw_cmd_deg", "yaw_err_deg")
ROBUST_COLUMNS = ("jump_type", "test", "e_x_mean", "e_x_std", "e_y_mean", "e_y_std", "e_psi_mean", "e_psi_std")

# commanded displacement (dx, dy, dz, droll, dpitch, dyaw) of the robustness jumps
JUMP_TYPES = {
    "FWD": np.array([0.4, 0.0, 0.0, 0.0, 0.0, 0.0]),
    "DIAG": np.array([0.3, 0.2, 0.0, 0.0, 0.0, math.radians(45.0)]),
}
TESTS = ("NOM", "DV", "MV")


@dataclass(frozen=True)
class SweepSpec:
    region: TargetRegion = OMNI_REGION
    samples: int = 2048
    threshold: float = 0.2
    seed: int = 0
    grid: int = 13
    z_levels: int = 9
    yaw_step_deg: float = 5.0

    def __post_init__(self):
        if not self.threshold >= 0.0:
            raise ValueError("threshold must be non-negative")
        if self.samples < 1 or self.grid < 2 or self.z_levels < 2:
            raise ValueError("sweep sizes too small")


@dataclass
class EvalContext:
    """Everything besides the policy that determines an episode."""

    model: QuadrupedModel = field(default_factory=QuadrupedModel)
    params: RewardParams = field(default_factory=RewardParams)
    cfg: EpisodeConfig = field(default_factory=EpisodeConfig)


def policy_hash(policy) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(policy.named_params().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def policy_actions(policy, states) -> np.ndarray:
    """Raw actions from the deterministic policy mean."""
    mean, _, _ = policy.forward(np.atleast_2d(states))
    return thrust.normalized_to_raw(mean)


def rollout(policy, states, ctx: EvalContext) -> dict:
    """Run one episode per state row and return the environment diagnostics."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    env = JumpEnv(model=ctx.model, params=ctx.params, cfg=ctx.cfg, n_envs=states.shape[0])
    env.set_states(states)
    R, info = env.step(policy_actions(policy, states))
    info["reward"] = R
    info["c0"], info["phi0"] = env.c0, env.phi0
    return info


def _states(xy=None, z=None, yaw=None, n=None):
    n = n if n is not None else len(next(v for v in (xy, z, yaw) if v is not None))
    s = np.zeros((n, 6))
    if xy is not None:
        s[:, :2] = xy
    if z is not None:
        s[:, 2] = z
    if yaw is not None:
        s[:, 5] = yaw
    return s


def feasible_region(policy, spec: SweepSpec, ctx: EvalContext) -> list:
    """Landing error over uniformly sampled flat-ground targets."""
    rng = np.random.default_rng(spec.seed)
    r = spec.region
    xy = rng.uniform([r.x[0], r.y[0]], [r.x[1], r.y[1]], size=(spec.samples, 2))
    info = rollout(policy, _states(xy=xy), ctx)
    err = info["landing_error"]
    ok = (err <= spec.threshold) & (info["failure"] == "none")
    return [(float(x), float(y), float(e), int(p)) for (x, y), e, p in zip(xy, err, ok)]


def actual_vs_target(policy, direction: str, spec: SweepSpec, ctx: EvalContext) -> list:
    """Achieved against commanded distance along the forward or backward axis."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    sign = 1.0 if direction == "forward" else -1.0
    reach = spec.region.x[1] if sign > 0 else -spec.region.x[0]
    rng = np.random.default_rng(spec.seed)
    # the region may not extend in this direction at all (reach may also be -0.0)
    dist = rng.uniform(0.0, reach if reach > 0.0 else 0.0, size=spec.samples)
    states = _states(xy=np.column_stack([sign * dist, np.zeros_like(dist)]))
    info = rollout(policy, states, ctx)
    actual = sign * (info["final_c"][:, 0] - info["c0"][0])
    failed = info["failure"] != "none"
    return [(float(t), float(a), int(f)) for t, a, f in zip(dist, actual, failed)]


def height_map(policy, spec: SweepSpec, ctx: EvalContext) -> tuple[list, list]:
    """Highest and lowest passing landing height over an (x, y) grid.

    Heights with no passing jump are reported as NaN.
    """
    r = spec.region
    xs = np.linspace(r.x[0], r.x[1], spec.grid)
    ys = np.linspace(r.y[0], r.y[1], spec.grid)
    zs_up = np.linspace(0.0, max(r.z[1], 0.0), spec.z_levels)
    zs_down = np.linspace(0.0, min(r.z[0], 0.0), spec.z_levels)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    up, down = [], []
    for zs, out, best in ((zs_up, up, np.max), (zs_down, down, np.min)):
        n = len(xy)
        states = np.concatenate([_states(xy=xy, z=np.full(n, z)) for z in zs])
        info = rollout(policy, states, ctx)
        ok = ((info["landing_error"] <= spec.threshold) & (info["failure"] == "none")).reshape(len(zs), n)
        for j, (x, y) in enumerate(xy):
            passing = zs[ok[:, j]]
            out.append((float(x), float(y), float(best(passing)) if passing.size else math.nan))
    return up, down


def yaw_sweep(policy, spec: SweepSpec, ctx: EvalContext) -> list:
    """Absolute landing yaw error of in-place turns over the commanded yaw range."""
    lo, hi = (math.degrees(v) for v in spec.region.yaw)
    n = int(round((hi - lo) / spec.yaw_step_deg)) + 1
    cmds = np.linspace(lo, hi, n)
    info = rollout(policy, _states(yaw=np.radians(cmds)), ctx)
    err = thrust.wrap_angle(info["final_phi"][:, 2] - info["phi_tg"][:, 2])
    return [(float(c), float(abs(math.degrees(e)))) for c, e in zip(cmds, np.atleast_1d(err))]


def _run_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def robustness_study(policy, jump_type: str, test: str, ctx: EvalContext, n: int = 100, p: float = 0.5,
                     d_max: float = 0.2, seed: int = 0) -> dict:
    """Landing errors of ``n`` repetitions of one jump under plant uncertainty.

    ``NOM`` keeps the nominal plant, ``DV`` adds random joint damping up to
    ``d_max`` and ``MV`` scales the mass by up to ``p``. Errors are target
    minus achieved; the yaw error is in degrees. Runs in tracked mode.
    """
    if jump_type not in JUMP_TYPES:
        raise ValueError(f"unknown jump type {jump_type!r}")
    if test not in TESTS:
        raise ValueError(f"unknown test {test!r}")
    if n < 1:
        raise ValueError("need at least one run")
    if test == "NOM":
        models = [ctx.model] * n
    else:
        pp, dd = (0.0, d_max) if test == "DV" else (p, 0.0)
        models = [perturb_model(ctx.model, _run_seed(seed, k), pp, dd) for k in range(n)]
    cfg = ctx.cfg if ctx.cfg.mode == "tracked" else EpisodeConfig(**{**asdict(ctx.cfg), "mode": "tracked"})
    state = JUMP_TYPES[jump_type]
    c0, phi0 = start_pose(ctx.model, cfg)
    c_tg, phi_tg = c0 + state[:3], phi0 + state[3:]
    raw = np.repeat(policy_actions(policy, state), n, axis=0)
    outcomes = run_tracked_batch(models, c0, phi0, c_tg, phi_tg, raw, cfg)
    final_c = np.array([o.final_c for o in outcomes])
    final_yaw = np.array([o.final_phi[2] for o in outcomes])
    e_x = c_tg[0] - final_c[:, 0]
    e_y = c_tg[1] - final_c[:, 1]
    e_psi = np.degrees(thrust.wrap_angle(phi_tg[2] - final_yaw))
    stats = {"jump_type": jump_type, "test": test}
    for name, e in (("e_x", e_x), ("e_y", e_y), ("e_psi", np.atleast_1d(e_psi))):
        stats[f"{name}_mean"] = float(np.mean(e))
        stats[f"{name}_std"] = float(np.std(e))
    stats["failures"] = int(sum(o.failure != "none" for o in outcomes))
    return stats


def robustness_table(policy, ctx: EvalContext, n: int = 100, p: float = 0.5, d_max: float = 0.2,
                     seed: int = 0) -> list:
    rows = []
    for jt in JUMP_TYPES:
        for test in TESTS:
            s = robustness_study(policy, jt, test, ctx, n=n, p=p, d_max=d_max, seed=seed)
            rows.append(tuple(s[c] for c in ROBUST_COLUMNS))
    return rows


# ---------------------------------------------------------------------------
# output

def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, columns, rows, meta: dict | None = None) -> Path:
    """Write a CSV with ``columns`` as header plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError("row width does not match the header")
            w.writerow([_cell(v) for v in row])
    if meta is not None:
        write_sidecar(path, meta)
    return path


def write_sidecar(path, meta: dict) -> Path:
    side = Path(str(path) + ".meta.json")
    side.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return side


def read_table(path) -> tuple[list, list]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


SUITES = ("region", "avt", "height", "yaw", "robust")


def run_suite(name: str, policy, spec: SweepSpec, ctx: EvalContext, out_dir, meta: dict | None = None,
              robust_runs: int = 100, robust_p: float = 0.5, robust_d_max: float = 0.2) -> list:
    """Run one named suite and write its tables into ``out_dir``; returns the written paths."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = {"suite": name, "seed": spec.seed, "mode": ctx.cfg.mode, "checkpoint": policy_hash(policy)}
    base.update(meta or {})
    if name == "region":
        return [write_table(out / "region.csv", REGION_COLUMNS, feasible_region(policy, spec, ctx), base)]
    if name == "avt":
        return [write_table(out / f"avt_{d}.csv", AVT_COLUMNS, actual_vs_target(policy, d, spec, ctx),
                            {**base, "direction": d}) for d in ("forward", "backward")]
    if name == "height":
        up, down = height_map(policy, spec, ctx)
        return [write_table(out / "height_up.csv", HEIGHT_UP_COLUMNS, up, base),
                write_table(out / "height_down.csv", HEIGHT_DOWN_COLUMNS, down, base)]
    if name == "yaw":
        return [write_table(out / "yaw.csv", YAW_COLUMNS, yaw_sweep(policy, spec, ctx), base)]
    rows = robustness_table(policy, ctx, n=robust_runs, p=robust_p, d_max=robust_d_max, seed=spec.seed)
    meta_r = {**base, "mode": "tracked", "runs": robust_runs, "p": robust_p, "d_max": robust_d_max}
    return [write_table(out / "robust.csv", ROBUST_COLUMNS, rows, meta_r)]
