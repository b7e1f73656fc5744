"""Leg kinematics and static stance forces of the quadruped model."""

import numpy as np

from quadjump.quadruped import (QuadrupedModel, contact_map, leg_fk, leg_ik, leg_jacobian, stance_forces,
                                whole_body_ik)

model = QuadrupedModel()
q = model.q_default
foot = leg_fk(q, 0, model)
print("front-left foot in the hip frame", foot.round(4))
print("IK recovers the joints", leg_ik(foot, 0, model).round(6))
print("Jacobian\n", leg_jacobian(q, 0, model).round(4))

# standing: the contact forces carry the weight with no net moment
c = np.array([0.0, 0.0, model.stand_height])
feet = model.nominal_feet(c)
f = stance_forces(c, feet, model.mass)
print("vertical forces", f[:, 2].round(3), "sum", f[:, 2].sum().round(3), "m g", round(model.mass * 9.81, 3))
print("net wrench", (contact_map(c, feet) @ f.reshape(12)).round(9))
print("joint angles for a lowered base\n", whole_body_ik(c - [0, 0, 0.05], np.zeros(3), feet, model).reshape(4, 3).round(3))
