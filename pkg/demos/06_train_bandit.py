"""The policy-gradient learner on a quadratic bandit with a known optimum."""

import tempfile

import numpy as np

from quadjump.env import BanditEnv
from quadjump.learner import PolicyConfig, TrainConfig, load_checkpoint, train

env = BanditEnv(n_envs=64)
with tempfile.TemporaryDirectory() as out:
    result = train(PolicyConfig(hidden=(64, 64)), TrainConfig(iterations=200, n_envs=64), env, out)
    policy, _ = load_checkpoint(result.checkpoint)
mean, std, _ = policy.forward(np.zeros((1, 6)))
print("distance to the optimum", np.linalg.norm(mean[0] - env.optimum).round(4))
print("policy std", std[0].round(3))
