"""Bézier curves of arbitrary order and dimension over a time interval [0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def binomial(n: int, i: int) -> float:
    """C(n, i) by the multiplicative recurrence (exact in floats for n <= 30)."""
    if i < 0 or i > n:
        return 0.0
    i = min(i, n - i)
    c = 1
    for j in range(1, i + 1):
        c = c * (n - i + j) // j
    return float(c)


def bernstein(i: int, n: int, u):
    """Bernstein basis polynomial b_i^n(u) = C(n,i) u^i (1-u)^(n-i).

    ``u`` may be a scalar or an array in [0, 1].
    """
    if n < 0 or i < 0 or i > n:
        raise ValueError(f"bernstein index out of range: i={i}, n={n}")
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("bernstein parameter must lie in [0, 1]")
    out = binomial(n, i) * u**i * (1.0 - u) ** (n - i)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ControlPolygon:
    """Control points of a Bézier curve defined over ``[0, duration]``.

    Parameters
    ----------
    points : array_like, shape (n+1, D)
        Control points; a 1-D input is treated as a scalar curve (D = 1).
    duration : float
        Length T of the time interval, strictly positive.
    """

    points: np.ndarray
    duration: float = 1.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("control points must have shape (n+1, D)")
        if pts.shape[1] not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        T = float(self.duration)
        if not (np.isfinite(T) and T > 0.0):
            raise ValueError(f"duration must be positive, got {self.duration}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "duration", T)

    @property
    def order(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __call__(self, t):
        return evaluate(self, t)


def _normalized_time(poly: ControlPolygon, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > poly.duration):
        raise ValueError(f"t outside [0, {poly.duration}]")
    return np.clip(t / poly.duration, 0.0, 1.0)


def evaluate(poly: ControlPolygon, t) -> np.ndarray:
    """Curve value at time ``t`` (scalar -> shape (D,), array -> shape (N, D))."""
    u = _normalized_time(poly, t)
    n = poly.order
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    basis = np.stack([binomial(n, i) * u**i * (1.0 - u) ** (n - i) for i in range(n + 1)], axis=-1)
    out = basis @ poly.points
    # pin the endpoints so that interpolation holds exactly
    out[u == 0.0] = poly.points[0]
    out[u == 1.0] = poly.points[-1]
    return out[0] if scalar else out


def derivative(poly: ControlPolygon) -> ControlPolygon:
    """Derivative curve: order n-1 with points (n/T)(P_{i+1} - P_i).

    A constant (order 0) curve maps to the zero curve of order 0.
    """
    n = poly.order
    if n == 0:
        return ControlPolygon(np.zeros_like(poly.points), poly.duration)
    pts = (n / poly.duration) * np.diff(poly.points, axis=0)
    return ControlPolygon(pts, poly.duration)


def eval_cubic_explicit(poly: ControlPolygon, t):
    """Closed-form cubic value and velocity at ``t``.

    Returns ``(value, velocity)``; both have shape (D,) for scalar ``t``.
    """
    if poly.order != 3:
        raise ValueError(f"explicit form requires a cubic, got order {poly.order}")
    s = _normalized_time(poly, t)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)[:, None]
    P0, P1, P2, P3 = poly.points
    T = poly.duration
    r = 1.0 - s
    value = r**3 * P0 + 3.0 * r**2 * s * P1 + 3.0 * r * s**2 * P2 + s**3 * P3
    velocity = (3.0 / T) * r**2 * (P1 - P0) + (6.0 / T) * r * s * (P2 - P1) + (3.0 / T) * s**2 * (P3 - P2)
    if scalar:
        return value[0], velocity[0]
    return value, velocity
