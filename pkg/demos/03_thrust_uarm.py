"""Thrust references: a cubic Bézier followed by a uniformly accelerated segment.

Asking a single cubic for a 3 m/s lift-off from standstill makes it dip
towards the floor; stretching the speed in a short straight segment keeps the
COM above 0.15 m.
"""

import math

import numpy as np

from quadjump.bezier import evaluate
from quadjump.quadruped import QuadrupedModel
from quadjump.simulator import EpisodeConfig, start_pose
from quadjump.thrust import JumpAction, _hermite_polygon, min_height, plan, sample

c0, phi0 = start_pose(QuadrupedModel(), EpisodeConfig())
# Bézier part ends at 1 m/s, then k = 3 over d = 0.2 m
act = JumpAction(T_th_b=0.7, r_p=0.3, theta_p=math.pi / 2, r_v=1.0, theta_v=1.2, k=3.0, d=0.2,
                 phi_lo=(0, 0, 0), phidot_lo=(0, 0, 0))
b, traj = plan(act, c0, phi0, c0 + [0.3, 0, 0])
print("lift-off speed", np.linalg.norm(b.cdot_lo_e), "thrust time", b.T_th)
print("lowest COM with the straight segment", round(min_height(traj), 3))

# the same lift-off state reached by one cubic over the same time
pure = _hermite_polygon(c0, np.zeros(3), b.c_lo_e, b.cdot_lo_e, b.T_th)
print("lowest COM with a single cubic       ", round(evaluate(pure, np.linspace(0, b.T_th, 2001))[:, 2].min(), 3))

# reference samples across the junction
for t in (0.0, traj.T_th_b, traj.T_th):
    c, cdot, _, _ = sample(traj, t)
    print(f"t={t:.3f}  c={c.round(3)}  |v|={np.linalg.norm(cdot):.3f}")
