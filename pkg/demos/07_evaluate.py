"""Evaluation sweeps with a fixed-action policy, written as CSV tables."""

import tempfile
from pathlib import Path

import numpy as np

from quadjump import evalsuite, thrust
from quadjump.env import FLAT_REGION
from quadjump.learner import ActorCritic, PolicyConfig

# a policy that outputs the same forward jump for every target
policy = ActorCritic(PolicyConfig(hidden=(4,)))
policy.actor.params["W1"][:] = 0.0
policy.actor.params["b1"][:] = thrust.raw_to_normalized([0.6, 0.33, 1.2, 1.8, 1.1, 1.0, 0.0, 0, 0, 0, 0, 0, 0.0])

spec = evalsuite.SweepSpec(region=FLAT_REGION, samples=256)
rows = evalsuite.feasible_region(policy, spec, evalsuite.EvalContext())
err = np.array([r[2] for r in rows])
print("pass rate", np.mean([r[3] for r in rows]), "median error", np.median(err).round(3))

with tempfile.TemporaryDirectory() as out:
    for path in evalsuite.run_suite("region", policy, spec, evalsuite.EvalContext(), out):
        print(Path(path).name, open(path).readline().strip())
        print(open(str(path) + ".meta.json").read())
