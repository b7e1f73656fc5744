"""One jump in both simulator modes and its reward."""

import numpy as np

from quadjump.quadruped import QuadrupedModel
from quadjump.reward import RewardParams, episode_reward
from quadjump.simulator import EpisodeConfig, run_episode
from quadjump.thrust import JumpCommand

model = QuadrupedModel()
raw = np.array([0.6, 0.33, 1.2, 1.8, 1.1, 1.0, 0.0, 0, 0, 0, 0, 0, 0.0])
command = JumpCommand([0.4, 0.0, 0.0], [0.0, 0.0, 0.0])

for mode in ("ideal", "tracked"):
    out = run_episode(model, command, raw, EpisodeConfig(mode=mode))
    R, pen = episode_reward(out, RewardParams())
    print(f"{mode:8s} failure={out.failure} landing={out.final_c.round(3)} error={out.landing_error:.3f} R={R:.3f}")
    print("         nonzero penalties", {k: round(v, 4) for k, v in pen.items() if v})
