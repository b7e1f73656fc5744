import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from quadjump.ballistics import (
    G,
    Accept,
    BallisticState,
    Reject,
    UnreachableError,
    apex,
    ballistic_position,
    flight_time,
    predict_landing,
    safety_filter,
    vz_of_vx,
)


def integrate_crossing(z0, vz, z_tg, dt=1e-5):
    """Oracle: step the vertical projectile and interpolate the last downward crossing."""
    t, z, v = 0.0, z0, vz
    while True:
        z_new = z + v * dt - 0.5 * G * dt * dt
        v_new = v - G * dt
        if v_new < 0.0 and z_new <= z_tg < z:
            return t + dt * (z - z_tg) / (z - z_new)
        t, z, v = t + dt, z_new, v_new
        if t > 10.0:
            raise RuntimeError("no crossing")


def rk4_landing(c, v, z_tg, dt=1e-5):
    """Oracle: RK4 on the projectile ODE, stopping at the descending crossing of z_tg."""
    def f(y):
        return np.array([y[3], y[4], y[5], 0.0, 0.0, -G])

    y = np.concatenate([c, v])
    for _ in range(int(20.0 / dt)):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y_new = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if y_new[5] < 0.0 and y_new[2] <= z_tg < y[2]:
            # the state is exact for a quadratic, so solve within the step
            a, b, c0 = -0.5 * G, y[5], y[2] - z_tg
            s = (-b - math.sqrt(b * b - 4 * a * c0)) / (2 * a)
            return y[:3] + y[3:] * s + np.array([0.0, 0.0, -0.5 * G * s * s])
        y = y_new
    raise RuntimeError("no crossing")


# ---------------------------------------------------------------------------
# flight_time

def test_flight_time_symmetric():
    assert flight_time(0.3, 2.0, 0.3) == pytest.approx(2 * 2.0 / 9.81, abs=1e-15)
    assert flight_time(0.3, 2.0, 0.3) == pytest.approx(0.4077, abs=1e-4)


def test_flight_time_degenerate():
    assert flight_time(0.3, 0.0, 0.3) == 0.0


def test_flight_time_matches_integration():
    T = flight_time(0.3, 1.5, 0.0)
    assert T == pytest.approx(integrate_crossing(0.3, 1.5, 0.0), abs=1e-9)


def test_flight_time_unreachable():
    with pytest.raises(UnreachableError):
        flight_time(0.3, 1.0, 0.3 + 1.0 / (2 * G) + 1e-3)


def test_flight_time_picks_descending_root():
    # target below lift-off height: the positive root is the only physical one
    T = flight_time(0.5, 1.0, 0.2)
    z = 0.5 + 1.0 * T - 0.5 * G * T * T
    assert z == pytest.approx(0.2, abs=1e-12)
    assert 1.0 - G * T < 0.0


@given(vz=st.floats(0.0, 10.0), z=st.floats(-1.0, 1.0))
def test_flat_flight_time_exact(vz, z):
    assert flight_time(z, vz, z) == pytest.approx(2 * vz / G, rel=1e-12, abs=1e-15)


# ---------------------------------------------------------------------------
# predict_landing

def test_predict_vz_equal_g():
    p = predict_landing(BallisticState([0.0, 0.0, 0.3], [1.0, 0.0, G]), 0.3)
    assert p.T_fl == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(p.c_td[:2], [2.0, 0.0], atol=1e-12)


def test_predict_vertical_hop():
    s = BallisticState([0.1, -0.2, 0.3], [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(predict_landing(s, 0.0).c_td[:2], [0.1, -0.2])


def test_predict_matches_rk4():
    rng = np.random.default_rng(7)
    for _ in range(20):
        c = rng.uniform([-1, -1, 0.2], [1, 1, 0.5])
        v = rng.uniform([-2, -2, 0.5], [2, 2, 3.0])
        z_tg = rng.uniform(-0.2, c[2])
        p = predict_landing(BallisticState(c, v), z_tg)
        assert np.linalg.norm(p.c_td - rk4_landing(c, v, z_tg)) <= 1e-6


def test_prediction_invariants():
    rng = np.random.default_rng(8)
    for _ in range(200):
        c = rng.uniform([-1, -1, 0.0], [1, 1, 0.6])
        v = rng.uniform([-3, -3, 0.0], [3, 3, 4.0])
        z_tg = rng.uniform(-0.4, c[2])
        p = predict_landing(BallisticState(c, v), z_tg)
        assert p.apex_z >= max(c[2], p.c_td[2]) - 1e-9
        assert p.T_fup <= p.T_fl + 1e-12


@settings(max_examples=80)
@given(angle=st.floats(-math.pi, math.pi), vx=st.floats(0.1, 3.0), vz=st.floats(0.0, 4.0),
       z_tg=st.floats(-0.3, 0.3))
def test_rotation_invariance(angle, vx, vz, z_tg):
    c = np.array([0.0, 0.0, 0.3])
    p0 = predict_landing(BallisticState(c, [vx, 0.0, vz]), z_tg)
    ca, sa = math.cos(angle), math.sin(angle)
    p1 = predict_landing(BallisticState(c, [vx * ca, vx * sa, vz]), z_tg)
    rot = np.array([[ca, -sa], [sa, ca]]) @ p0.c_td[:2]
    np.testing.assert_allclose(p1.c_td[:2], rot, atol=1e-12)
    assert p1.T_fl == p0.T_fl


# ---------------------------------------------------------------------------
# vz_of_vx

def test_vz_of_vx_flat():
    assert vz_of_vx([0, 0, 0.3], [0.6, 0, 0.3], 1.5) == pytest.approx(9.81 * 0.6 / 3.0, abs=1e-15)
    assert vz_of_vx([0, 0, 0.3], [0.6, 0, 0.3], 1.5) == pytest.approx(1.962, abs=1e-12)


def test_vz_of_vx_doubling_halves():
    a = vz_of_vx([0, 0, 0.3], [0.8, 0, 0.3], 1.0)
    b = vz_of_vx([0, 0, 0.3], [0.8, 0, 0.3], 2.0)
    assert b == a / 2


@pytest.mark.parametrize("c_tg,vx", [([0.5, 0, 0], 0.0), ([0.0, 0, 0], 1.0)])
def test_vz_of_vx_domain(c_tg, vx):
    with pytest.raises(ValueError):
        vz_of_vx([0, 0, 0.3], c_tg, vx)


@settings(max_examples=100)
@given(dx=st.floats(0.1, 1.5), dz=st.floats(-0.4, 0.4), vx=st.floats(0.3, 4.0))
def test_vz_of_vx_round_trip(dx, dz, vx):
    c_lo = np.array([0.0, 0.0, 0.3])
    c_tg = np.array([dx, 0.0, 0.3 + dz])
    vz = vz_of_vx(c_lo, c_tg, vx)
    # landing is the descending crossing; raised targets can also be hit on the way up
    assume(vz - G * dx / vx < 0.0)
    p = predict_landing(BallisticState(c_lo, [vx, 0.0, vz]), c_tg[2])
    assert np.linalg.norm(p.c_td - c_tg) <= 1e-9


@settings(max_examples=100)
@given(dx=st.floats(0.1, 1.5), dz=st.floats(-0.4, 0.0), vx=st.floats(0.3, 4.0), vz=st.floats(0.0, 4.0))
def test_landing_round_trip_through_hyperbola(dx, dz, vx, vz):
    c_lo = np.array([0.0, 0.0, 0.3])
    p = predict_landing(BallisticState(c_lo, [vx, 0.0, vz]), 0.3 + dz)
    if p.c_td[0] - c_lo[0] < 1e-6:
        return
    assert vz_of_vx(c_lo, p.c_td, vx) == pytest.approx(vz, abs=1e-9)


# ---------------------------------------------------------------------------
# apex

def test_apex_no_ascent():
    assert apex(BallisticState([0, 0, 0.3], [1, 0, 0])) == (0.3, 0.0)
    assert apex(BallisticState([0, 0, 0.3], [1, 0, -1.0])) == (0.3, 0.0)


def test_apex_vz_equal_g():
    z, T = apex(BallisticState([0, 0, 0.3], [0, 0, G]))
    assert z == pytest.approx(0.3 + G / 2, abs=1e-12)
    assert z == pytest.approx(5.205, abs=1e-12)
    assert T == pytest.approx(1.0, abs=1e-15)


def test_apex_matches_dense_trajectory():
    rng = np.random.default_rng(9)
    for _ in range(50):
        s = BallisticState(rng.uniform(0, 0.5, 3), rng.uniform([-2, -2, 0], [2, 2, 4]))
        z, T = apex(s)
        ts = np.linspace(0.0, 1.0, 200001)
        assert z == pytest.approx(ballistic_position(s, ts)[:, 2].max(), abs=1e-6)


@given(vz1=st.floats(0.0, 10.0), vz2=st.floats(0.0, 10.0))
def test_apex_monotone_in_vz(vz1, vz2):
    lo, hi = sorted((vz1, vz2))
    assert apex(BallisticState([0, 0, 0.3], [0, 0, lo]))[0] <= apex(BallisticState([0, 0, 0.3], [0, 0, hi]))[0]


# ---------------------------------------------------------------------------
# safety_filter

def test_filter_rejects_above_apex():
    s = BallisticState([0, 0, 0.3], [1, 0, 1.5])
    z, _ = apex(s)
    d = safety_filter(s, [0.5, 0, z + 0.01])
    assert isinstance(d, Reject) and d.reason == "apex-below-target" and not d.accepted


def test_filter_accepts_flat_target():
    d = safety_filter(BallisticState([0, 0, 0.3], [1, 0, 0.5]), [0.4, 0, 0.3])
    assert isinstance(d, Accept) and d.accepted
    assert d.prediction.c_td[2] == 0.3


def brute_force_reachable(c, v, z_tg):
    """Oracle: does a densely integrated trajectory ever reach z_tg?"""
    ts = np.linspace(0.0, 3.0, 30001)
    z = c[2] + v[2] * ts - 0.5 * G * ts**2
    return bool(z.max() >= z_tg)


def test_filter_agrees_with_brute_force():
    rng = np.random.default_rng(10)
    disagreements = 0
    for _ in range(1000):
        c = rng.uniform([-1, -1, 0.1], [1, 1, 0.6])
        v = rng.uniform([-2, -2, -1.0], [2, 2, 3.0])
        z_tg = rng.uniform(-0.4, 0.9)
        # keep away from the tangent case that a grid cannot resolve
        if abs(apex(BallisticState(c, v))[0] - z_tg) < 1e-4:
            continue
        accepted = safety_filter(BallisticState(c, v), [0.0, 0.0, z_tg]).accepted
        disagreements += accepted != brute_force_reachable(c, v, z_tg)
    assert disagreements == 0


def test_state_validation():
    with pytest.raises(ValueError):
        BallisticState([0, 0, np.inf], [0, 0, 0])
