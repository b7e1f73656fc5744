"""Gaussian actor-critic trained with clipped-surrogate policy optimisation.

Every episode is a single decision: the policy sees the 6-D jump command and
emits one 13-D action, so returns equal immediate rewards and the advantage
reduces to ``r - V(s)``. Networks are plain numpy MLPs with hand-written
backpropagation; updates use full-batch epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


class DivergenceError(RuntimeError):
    """The policy update produced a non-finite loss."""


@dataclass(frozen=True)
class PolicyConfig:
    hidden: tuple = (512, 256, 128)
    activation: str = "elu"
    init_std: float = 1.0
    state_dim: int = 6
    action_dim: int = 13

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation != "elu":
            raise ValueError("only ELU activations are implemented")
        if self.state_dim < 1 or self.action_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("network dimensions must be positive")
        if not self.init_std > 0.0:
            raise ValueError("initial std must be positive")


@dataclass(frozen=True)
class TrainConfig:
    clip: float = 0.2
    entropy_coef: float = 0.01
    epochs: int = 10
    lr: float = 1e-3
    # kept for completeness; with one-step episodes they have no effect
    gamma: float = 0.99
    lam: float = 0.95
    desired_kl: float = 0.01
    iterations: int = 2000
    n_envs: int = 256
    seed: int = 0
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    lr_min: float = 1e-5
    lr_max: float = 1e-2
    checkpoint_every: int = 50

    def __post_init__(self):
        if not 0.0 < self.clip:
            raise ValueError("clip must be positive")
        if self.epochs < 1 or self.iterations < 0 or self.n_envs < 1:
            raise ValueError("epochs and env count must be positive")
        if not (self.lr > 0.0 and self.desired_kl > 0.0):
            raise ValueError("learning rate and desired KL must be positive")


# ---------------------------------------------------------------------------
# networks

def _elu(x):
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """Fully connected ELU network with a linear output layer."""

    def __init__(self, sizes, rng=None, out_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.params = {}
        rng = np.random.default_rng(0) if rng is None else rng
        n = len(self.sizes) - 1
        for i in range(n):
            gain = out_gain if i == n - 1 else math.sqrt(2.0)
            self.params[f"W{i}"] = _orthogonal(rng, self.sizes[i], self.sizes[i + 1], gain)
            self.params[f"b{i}"] = np.zeros(self.sizes[i + 1])
        self._cache = None

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def forward(self, x, keep: bool = False):
        h = np.asarray(x, dtype=float)
        cache = [h]
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = _elu(z)
                cache.append(z)
                cache.append(h)
            else:
                h = z
        if keep:
            self._cache = cache
        return h

    def backward(self, grad_out) -> dict:
        """Gradients of a scalar loss given d(loss)/d(output) for the last kept forward pass."""
        cache = self._cache
        grads = {}
        g = np.asarray(grad_out, dtype=float)
        for i in reversed(range(self.n_layers)):
            h_in = cache[2 * i]
            grads[f"W{i}"] = h_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i > 0:
                g = g @ self.params[f"W{i}"].T
                z = cache[2 * i - 1]
                g = g * np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
        return grads


class ActorCritic:
    """Separate actor and critic MLPs plus a state-independent log standard deviation."""

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
        self.actor = MLP((cfg.state_dim, *cfg.hidden, cfg.action_dim), rng, out_gain=0.01)
        self.critic = MLP((cfg.state_dim, *cfg.hidden, 1), rng, out_gain=1.0)
        self.log_std = np.full(cfg.action_dim, math.log(cfg.init_std))

    def named_params(self) -> dict:
        out = {f"actor/{k}": v for k, v in self.actor.params.items()}
        out.update({f"critic/{k}": v for k, v in self.critic.params.items()})
        out["log_std"] = self.log_std
        return out

    def set_params(self, params: dict):
        for k, v in params.items():
            arr = np.array(v, dtype=float)
            if k == "log_std":
                self.log_std = arr
            else:
                net, name = k.split("/", 1)
                getattr(self, net).params[name] = arr

    def forward(self, states, keep: bool = False):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        mean = self.actor.forward(states, keep)
        value = self.critic.forward(states, keep)[:, 0]
        std = np.broadcast_to(np.exp(self.log_std), mean.shape)
        return mean, std, value


def policy_forward(policy: ActorCritic, state):
    """Action mean and std (normalised units) and the value estimate for one state."""
    mean, std, value = policy.forward(np.asarray(state, dtype=float)[None])
    return mean[0], std[0].copy(), float(value[0])


def log_prob(actions, mean, log_std):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * mean.shape[-1] * LOG_2PI


def sample_action(mean, std, rng):
    """Gaussian sample and its log-probability."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    a = mean + std * rng.standard_normal(mean.shape)
    # a zero std gives a degenerate density; its log-probability is not used
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = log_prob(a, mean, np.log(std))
    return a, logp


# ---------------------------------------------------------------------------
# optimisation

class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1.0 - b1**self.t)
            vhat = v / (1.0 - b2**self.t)
            out[k] = params[k] - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out

    def state(self) -> dict:
        out = {"adam/t": np.array(self.t)}
        out.update({f"adam/m/{k}": v for k, v in self.m.items()})
        out.update({f"adam/v/{k}": v for k, v in self.v.items()})
        return out

    def load(self, arrays: dict):
        self.t = int(arrays.get("adam/t", 0))
        self.m = {k[len("adam/m/"):]: np.array(v) for k, v in arrays.items() if k.startswith("adam/m/")}
        self.v = {k[len("adam/v/"):]: np.array(v) for k, v in arrays.items() if k.startswith("adam/v/")}


@dataclass
class RolloutBatch:
    states: np.ndarray
    actions: np.ndarray       # normalised Gaussian samples
    raw_actions: np.ndarray   # physical units, before clipping
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    old_mean: np.ndarray
    old_log_std: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.states.shape[0]
        for name in ("actions", "raw_actions", "log_probs", "rewards", "values", "advantages"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has inconsistent length")


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    if adv.size < 2:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def iteration_rngs(seed: int, iteration: int):
    """Independent generators for target sampling and action noise of one iteration."""
    env_ss, act_ss = np.random.SeedSequence([int(seed), int(iteration)]).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(act_ss)


def collect_rollouts(policy: ActorCritic, env, seed: int, iteration: int = 0) -> RolloutBatch:
    """One single-step episode per environment slot of ``env``."""
    rng_env, rng_act = iteration_rngs(seed, iteration)
    states = env.reset(rng_env)
    mean, std, values = policy.forward(states)
    actions, logp = sample_action(mean, std, rng_act)
    raw = env.to_raw(actions)
    rewards, info = env.step(raw)
    rewards = np.asarray(rewards, dtype=float)
    return RolloutBatch(states=states, actions=actions, raw_actions=raw, log_probs=logp, rewards=rewards,
                        values=values, advantages=normalize_advantages(rewards - values),
                        old_mean=mean, old_log_std=policy.log_std.copy(), info=info)


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new):
    """Mean KL(old || new) over the batch for diagonal Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    kl = (log_std_new - log_std_old) + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5
    return float(np.mean(np.sum(kl, axis=-1)))


def ppo_loss_and_grads(policy: ActorCritic, batch: RolloutBatch, cfg: TrainConfig):
    """Loss terms and their gradients with respect to every named parameter."""
    n = batch.states.shape[0]
    mean, std, value = policy.forward(batch.states, keep=True)
    log_std = policy.log_std
    logp = log_prob(batch.actions, mean, log_std)
    ratio = np.exp(logp - batch.log_probs)
    A = batch.advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surrogate = -np.mean(np.minimum(ratio * A, clipped * A))
    entropy = float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))
    value_loss = float(np.mean((value - batch.rewards) ** 2))
    loss = surrogate - cfg.entropy_coef * entropy + cfg.value_coef * value_loss

    active = ratio * A <= clipped * A
    dlogp = np.where(active, -ratio * A / n, 0.0)
    inv_var = np.exp(-2.0 * log_std)
    diff = batch.actions - mean
    g_mean = dlogp[:, None] * diff * inv_var
    g_log_std = (dlogp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    g_value = cfg.value_coef * 2.0 * (value - batch.rewards) / n

    grads = {f"actor/{k}": v for k, v in policy.actor.backward(g_mean).items()}
    grads.update({f"critic/{k}": v for k, v in policy.critic.backward(g_value[:, None]).items()})
    grads["log_std"] = g_log_std
    terms = {"loss": float(loss), "surrogate": float(surrogate), "value_loss": value_loss, "entropy": entropy}
    return terms, grads


def ppo_update(policy: ActorCritic, opt: Adam, batch: RolloutBatch, cfg: TrainConfig, lr: float):
    """Full-batch clipped-surrogate epochs with KL-adaptive learning rate.

    Returns the metrics of the update; raises :class:`DivergenceError` on a
    non-finite loss, in which case ``policy`` is left unchanged.
    """
    backup = {k: v.copy() for k, v in policy.named_params().items()}
    metrics = {}
    for _ in range(cfg.epochs):
        terms, grads = ppo_loss_and_grads(policy, batch, cfg)
        if not np.isfinite(terms["loss"]):
            policy.set_params(backup)
            raise DivergenceError("non-finite loss in policy update")
        # adapt the step size before every optimiser step from the KL to the rollout policy
        mean_now = policy.actor.forward(batch.states)
        kl = gaussian_kl(batch.old_mean, batch.old_log_std, mean_now, policy.log_std)
        if kl > 2.0 * cfg.desired_kl:
            lr = max(cfg.lr_min, lr / 2.0)
        elif 0.0 < kl < 0.5 * cfg.desired_kl:
            lr = min(cfg.lr_max, lr * 2.0)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if cfg.max_grad_norm and norm > cfg.max_grad_norm:
            grads = {k: g * (cfg.max_grad_norm / norm) for k, g in grads.items()}
        policy.set_params(opt.step(policy.named_params(), grads, lr))
        metrics = terms
    mean_new = policy.actor.forward(batch.states)
    metrics["approx_kl"] = gaussian_kl(batch.old_mean, batch.old_log_std, mean_new, policy.log_std)
    if not np.isfinite(metrics["approx_kl"]) or not all(np.all(np.isfinite(v)) for v in policy.named_params().values()):
        policy.set_params(backup)
        raise DivergenceError("non-finite parameters after policy update")
    metrics["lr"] = lr
    return metrics


# ---------------------------------------------------------------------------
# checkpoints and training loop

def save_checkpoint(path, policy: ActorCritic, opt: Adam | None = None, iteration: int = 0,
                    lr: float | None = None, extra: dict | None = None) -> Path:
    arrays = {"format_version": np.array(FORMAT_VERSION)}
    arrays.update(policy.named_params())
    cfg = policy.cfg
    arrays["meta/hidden"] = np.array(cfg.hidden, dtype=np.int64)
    arrays["meta/dims"] = np.array([cfg.state_dim, cfg.action_dim], dtype=np.int64)
    arrays["meta/init_std"] = np.array(cfg.init_std)
    arrays["meta/iteration"] = np.array(iteration, dtype=np.int64)
    if lr is not None:
        arrays["meta/lr"] = np.array(lr)
    if opt is not None:
        arrays.update(opt.state())
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Returns ``(policy, arrays)``; ``arrays`` holds every stored entry."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    version = int(arrays.get("format_version", -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version}")
    state_dim, action_dim = (int(x) for x in arrays["meta/dims"])
    cfg = PolicyConfig(hidden=tuple(int(h) for h in arrays["meta/hidden"]), state_dim=state_dim,
                       action_dim=action_dim, init_std=float(arrays["meta/init_std"]))
    policy = ActorCritic(cfg)
    policy.set_params({k: v for k, v in arrays.items() if k.startswith(("actor/", "critic/")) or k == "log_std"})
    return policy, arrays


@dataclass
class TrainResult:
    status: str
    iterations: int
    checkpoint: Path
    metrics: Path
    rows: list


def metric_columns(env) -> list:
    return ["iteration", "mean_reward", "mean_total_penalty", *env.metric_names, "approx_kl", "lr"]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def train(pcfg: PolicyConfig, tcfg: TrainConfig, env, out_dir, resume: bool = False, callback=None) -> TrainResult:
    """Run ``tcfg.iterations`` collect/update rounds, writing ``checkpoint.npz`` and ``metrics.csv``.

    With ``resume`` the run continues from an existing checkpoint in ``out_dir``;
    because every iteration draws from its own seed the result equals an
    uninterrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    metrics_path = out / "metrics.csv"
    cols = metric_columns(env)
    policy = ActorCritic(pcfg, seed=tcfg.seed)
    opt = Adam()
    lr = tcfg.lr
    start = 0
    rows = []
    if resume and ckpt.exists():
        policy, arrays = load_checkpoint(ckpt)
        opt.load(arrays)
        start = int(arrays["meta/iteration"])
        lr = float(arrays.get("meta/lr", lr))
        if metrics_path.exists():
            with metrics_path.open() as fh:
                rows = [r for r in csv.reader(fh)][1:start + 1]
    with metrics_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)

    status = "ok"
    done = start
    for it in range(start, tcfg.iterations):
        batch = collect_rollouts(policy, env, tcfg.seed, it)
        try:
            m = ppo_update(policy, opt, batch, tcfg, lr)
        except DivergenceError:
            status = "diverged"
            break
        lr = m["lr"]
        info = batch.info
        row = [it, float(np.mean(batch.rewards)), float(np.mean(info.get("total_penalty", 0.0)))]
        row += [float(np.mean(info[name])) for name in env.metric_names]
        row += [m["approx_kl"], lr]
        row = [_fmt(x) for x in row]
        rows.append(row)
        with metrics_path.open("a", newline="") as fh:
            csv.writer(fh).writerow(row)
        done = it + 1
        if callback is not None:
            callback(it, m, batch)
        if done % tcfg.checkpoint_every == 0 or done == tcfg.iterations:
            save_checkpoint(ckpt, policy, opt, done, lr)
    if not ckpt.exists():
        save_checkpoint(ckpt, policy, opt, done, lr)
    return TrainResult(status=status, iterations=done, checkpoint=ckpt, metrics=metrics_path, rows=rows)


def config_dict(pcfg: PolicyConfig, tcfg: TrainConfig) -> dict:
    return {"policy": asdict(pcfg), "train": asdict(tcfg)}
