"""Command-line front end: ``python -m quadjump {plan,check,simulate,train,eval}``.

Jump targets are given as ``dx,dy,dz[,droll,dpitch,dyaw]`` relative to the
standing pose, lengths in metres and angles in degrees. Action files hold the
13 raw action values separated by commas or whitespace; ``#`` starts a
comment.

Exit codes: 0 success, 1 usage or configuration error, 2 planner rejection,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ballistics, evalsuite, thrust
from .config import ConfigError, RunConfig, config_hash, load_run_config, make_env
from .learner import load_checkpoint, train
from .quadruped import QuadrupedModel, load_model
from .reward import RewardParams, load_params
from .simulator import EpisodeConfig, export_trace, run_episode, start_pose

EXIT_OK, EXIT_USAGE, EXIT_REJECT, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_target(text: str) -> np.ndarray:
    """``dx,dy,dz[,droll,dpitch,dyaw]`` (m, deg) to a 6-D command in SI units."""
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad target {text!r}") from exc
    if len(vals) not in (3, 6):
        raise UsageError("target needs 3 or 6 numbers")
    vals += [0.0] * (6 - len(vals))
    out = np.array(vals)
    out[3:] = np.radians(out[3:])
    if not np.all(np.isfinite(out)):
        raise UsageError("target must be finite")
    return out


def read_action(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"action file not found: {path}")
    tokens = []
    for line in path.read_text().splitlines():
        tokens += line.split("#", 1)[0].replace(",", " ").split()
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise UsageError(f"non-numeric entry in {path}") from exc
    if vals.size != 13:
        raise UsageError(f"action file must hold 13 values, found {vals.size}")
    return vals


def _model(args) -> QuadrupedModel:
    if getattr(args, "robot", None):
        if not Path(args.robot).is_file():
            raise UsageError(f"robot config not found: {args.robot}")
        try:
            return load_model(args.robot)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad robot config: {exc}") from exc
    return QuadrupedModel()


def _params(args) -> RewardParams:
    if getattr(args, "reward", None):
        if not Path(args.reward).is_file():
            raise UsageError(f"reward config not found: {args.reward}")
        try:
            return load_params(args.reward)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"bad reward config: {exc}") from exc
    return RewardParams()


def _run_config(args) -> RunConfig:
    if getattr(args, "train", None):
        return load_run_config(args.train, seed=args.seed, n_envs=getattr(args, "envs", None))
    from .config import EnvSettings, EvalSettings
    from .learner import PolicyConfig, TrainConfig
    kw = {"seed": args.seed} if args.seed is not None else {}
    if getattr(args, "envs", None) is not None:
        kw["n_envs"] = args.envs
    return RunConfig(PolicyConfig(), TrainConfig(**kw), EnvSettings(), EvalSettings())


def _action(args, state) -> tuple[np.ndarray, str]:
    """Raw action from ``--action`` or from the mean of ``--checkpoint``."""
    if args.action and args.checkpoint:
        raise UsageError("give either --action or --checkpoint, not both")
    if args.action:
        return read_action(args.action), f"file:{args.action}"
    if args.checkpoint:
        policy = _policy(args.checkpoint)
        return evalsuite.policy_actions(policy, state)[0], f"policy:{evalsuite.policy_hash(policy)}"
    raise UsageError("an action source is required (--action or --checkpoint)")


def _policy(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)[0]
    except (ValueError, KeyError, OSError) as exc:
        raise UsageError(f"unreadable checkpoint {path}: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


def _vec(v):
    return [float(x) for x in np.ravel(v)]


def _start(model, state):
    c0, phi0 = start_pose(model, EpisodeConfig())
    return c0, phi0, c0 + state[:3], phi0 + state[3:]


def _filter(boundary, c_tg):
    return ballistics.safety_filter(ballistics.BallisticState(boundary.c_lo_e, boundary.cdot_lo_e), c_tg)


def _decision(decision) -> dict:
    if not decision.accepted:
        return {"accepted": False, "reason": decision.reason}
    p = decision.prediction
    return {"accepted": True, "c_td": _vec(p.c_td), "T_fl": p.T_fl, "apex_z": p.apex_z, "T_fup": p.T_fup}


def cmd_plan(args) -> int:
    model = _model(args)
    state = parse_target(args.target)
    raw, source = _action(args, state)
    c0, phi0, c_tg, _ = _start(model, state)
    action, excess = thrust.clip_action(raw)
    boundary, traj = thrust.plan(action, c0, phi0, c_tg)
    decision = _filter(boundary, c_tg)
    out = _out_dir(args)
    thrust.export_csv(traj, out / "trajectory.csv", args.period)
    summary = {
        "action_source": source, "action": _vec(action.as_array()), "clip_excess": _vec(excess),
        "c0": _vec(c0), "c_tg": _vec(c_tg), "T_th": boundary.T_th, "T_th_b": boundary.T_th_b,
        "c_lo": _vec(boundary.c_lo_e), "cdot_lo": _vec(boundary.cdot_lo_e), "min_height": thrust.min_height(traj),
        "filter": _decision(decision),
    }
    _write_json(out / "plan.json", summary)
    evalsuite.write_sidecar(out / "trajectory.csv", {"command": "plan", "config": config_hash(model), "source": source})
    if not decision.accepted:
        print(f"rejected: {decision.reason}", file=sys.stderr)
        return EXIT_REJECT
    p = decision.prediction
    print(f"landing at ({p.c_td[0]:.4f}, {p.c_td[1]:.4f}, {p.c_td[2]:.4f}) after {p.T_fl:.4f} s of flight")
    return EXIT_OK


def cmd_check(args) -> int:
    model = _model(args)
    state = parse_target(args.target)
    raw = read_action(args.action)
    c0, phi0, c_tg, _ = _start(model, state)
    boundary = thrust.decode(thrust.clip_action(raw)[0], c0, phi0, c_tg)
    decision = _filter(boundary, c_tg)
    report = _decision(decision)
    if args.out:
        _write_json(_out_dir(args) / "check.json", report)
    if decision.accepted:
        print(f"accept: predicted touchdown {np.round(decision.prediction.c_td, 4).tolist()}")
        return EXIT_OK
    print(f"reject: {decision.reason}")
    return EXIT_REJECT


def cmd_simulate(args) -> int:
    model = _model(args)
    params = _params(args)
    state = parse_target(args.target)
    raw, source = _action(args, state)
    cfg = EpisodeConfig(mode=args.mode, seed=args.seed or 0, record_trace=True)
    command = thrust.JumpCommand(state[:3], state[3:])
    outcome = run_episode(model, command, raw, cfg)
    from .reward import episode_reward
    R, pen = episode_reward(outcome, params)
    out = _out_dir(args)
    data = outcome.to_dict()
    data["reward"] = R
    data["assembled_penalties"] = pen
    _write_json(out / "outcome.json", data)
    meta = {"command": "simulate", "mode": args.mode, "seed": cfg.seed, "source": source,
            "config": config_hash(model, params, cfg)}
    if outcome.trace is not None:
        export_trace(outcome, out / "trace.csv")
        evalsuite.write_sidecar(out / "trace.csv", meta)
    print(f"failure={outcome.failure} landing_error={outcome.landing_error:.4f} reward={R:.6g}")
    return EXIT_REJECT if outcome.failure == "filter-rejected" else EXIT_OK


def cmd_train(args) -> int:
    model, params = _model(args), _params(args)
    run = _run_config(args)
    env = make_env(run, model, params)
    out = _out_dir(args)
    meta = {"command": "train", "seed": run.train.seed, "mode": run.env.mode, "n_envs": run.train.n_envs,
            "config": config_hash(run.to_dict(), model, params)}
    _write_json(out / "run.json", {**meta, "run": run.to_dict(), "robot": {k: np.asarray(v).tolist() for k, v in
                                                                          asdict(model).items() if v is not None},
                                    "reward": asdict(params)})
    result = train(run.policy, run.train, env, out, resume=args.resume)
    evalsuite.write_sidecar(result.metrics, meta)
    if result.status == "diverged":
        print(f"training diverged after {result.iterations} iterations; kept {result.checkpoint}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {result.iterations} iterations -> {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, params = _model(args), _params(args)
    run = _run_config(args)
    policy = _policy(args.checkpoint)
    ev = run.eval
    seed = run.train.seed
    spec = evalsuite.SweepSpec(region=run.env.target_region, samples=ev.samples, threshold=ev.threshold, seed=seed,
                               grid=ev.grid, z_levels=ev.z_levels, yaw_step_deg=ev.yaw_step_deg)
    ctx = evalsuite.EvalContext(model, params, run.env.episode_config(seed, args.mode))
    meta = {"config": config_hash(run.to_dict(), model, params, ctx.cfg)}
    paths = evalsuite.run_suite(args.suite, policy, spec, ctx, _out_dir(args), meta, robust_runs=ev.robust_runs,
                                robust_p=ev.robust_p, robust_d_max=ev.robust_d_max)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quadjump", description="Guided-RL quadruped jump planning toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, out_required=True):
        p.add_argument("--robot", help="robot INI file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("plan", help="build a thrust reference and predict the landing")
    common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--action")
    p.add_argument("--checkpoint")
    p.add_argument("--period", type=float, default=0.01)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("check", help="run the lift-off safety filter on an action")
    common(p, out_required=False)
    p.add_argument("--target", required=True)
    p.add_argument("--action", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="simulate one jump")
    common(p)
    p.add_argument("--reward", help="reward INI file")
    p.add_argument("--target", required=True)
    p.add_argument("--action")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("ideal", "tracked"), default="ideal")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a jump policy")
    common(p)
    p.add_argument("--reward", help="reward INI file")
    p.add_argument("--train", help="run INI file")
    p.add_argument("--envs", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation suite")
    common(p)
    p.add_argument("--reward", help="reward INI file")
    p.add_argument("--train", help="run INI file (eval settings and region)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True, choices=evalsuite.SUITES)
    p.add_argument("--mode", choices=("ideal", "tracked"), default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "envs", None) is not None and args.envs < 1:
            parser.error("--envs must be positive")
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"quadjump: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
