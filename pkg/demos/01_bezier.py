"""Cubic Bézier curves: evaluation, time scaling and derivatives."""

import numpy as np

from quadjump.bezier import ControlPolygon, derivative, eval_cubic_explicit, evaluate

# four control points in 3-D, traversed in 0.5 s
poly = ControlPolygon([[0, 0, 0.3], [0, 0, 0.3], [0.1, 0, 0.2], [0.2, 0, 0.4]], 0.5)
ts = np.linspace(0.0, poly.duration, 6)
print("positions\n", evaluate(poly, ts).round(4))

# the derivative is again a Bézier curve, one order lower
vel = derivative(poly)
print("velocity at the end", evaluate(vel, poly.duration))
# end velocity of a cubic is 3/T times the last leg of the polygon
print("3/T (P3 - P2)     ", 3 / poly.duration * (poly.points[3] - poly.points[2]))

# closed-form cubic and the generic Bernstein sum agree
v, d = eval_cubic_explicit(poly, ts)
print("max difference", np.abs(v - evaluate(poly, ts)).max())
