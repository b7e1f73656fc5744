"""Flight after lift-off: landing prediction and the lift-off safety filter."""

import numpy as np

from quadjump.ballistics import BallisticState, apex, predict_landing, safety_filter, vz_of_vx

lo = BallisticState(c_lo=[0.1, 0.0, 0.35], cdot_lo=[1.5, 0.0, 2.0])
p = predict_landing(lo, z_tg=0.3)
print("touchdown", p.c_td.round(4), "after", round(p.T_fl, 4), "s; apex", round(p.apex_z, 4), "m")
print("apex height and time", apex(lo))

# a raised target above the apex can never be reached, so the jump is aborted
print(safety_filter(lo, [0.8, 0.0, 0.6]))
print(safety_filter(lo, [0.8, 0.0, 0.3]).accepted)

# vertical lift-off speed that lands on a target for a chosen forward speed
c_lo, c_tg = np.array([0.0, 0.0, 0.3]), np.array([0.8, 0.0, 0.3])
vz = vz_of_vx(c_lo, c_tg, vx=2.0)
print("vz =", round(vz, 4), "->", predict_landing(BallisticState(c_lo, [2.0, 0.0, vz]), 0.3).c_td.round(6))
