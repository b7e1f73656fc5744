import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadjump.ballistics import BallisticState, predict_landing
from quadjump.bezier import derivative, evaluate
from quadjump.thrust import (
    ACTION_HIGH,
    ACTION_LOW,
    JumpAction,
    JumpCommand,
    build_trajectory,
    clip_action,
    decode,
    encode_state,
    export_csv,
    jump_plane_yaw,
    min_height,
    normalized_to_raw,
    plan,
    raw_to_normalized,
    sample,
    solve_orientation_bezier,
    solve_position_bezier,
    wrap_angle,
)

C0 = np.array([0.0, 0.0, 0.31])
PHI0 = np.zeros(3)


def action(**kw):
    base = dict(T_th_b=0.6, r_p=0.35, theta_p=1.2, r_v=1.5, theta_v=0.8, k=1.0, d=0.0,
                phi_lo=(0.0, 0.0, 0.0), phidot_lo=(0.0, 0.0, 0.0))
    base.update(kw)
    return JumpAction(**base)


def random_raw(rng):
    return rng.uniform(ACTION_LOW, ACTION_HIGH)


def uarm_oracle(v_b, v_e, d, n=200000):
    """Oracle: integrate constant acceleration with small explicit steps until the distance d is covered."""
    a = (v_e**2 - v_b**2) / (2 * d)
    dt = (v_e - v_b) / a / n
    s, v, t = 0.0, v_b, 0.0
    for _ in range(n):
        s += v * dt + 0.5 * a * dt * dt
        v += a * dt
        t += dt
    return s, v, t, a


# ---------------------------------------------------------------------------
# commands and state encoding

def test_jump_plane_yaw():
    assert jump_plane_yaw([0, 0, 0], [1, 0, 0]) == 0.0
    assert jump_plane_yaw([0, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    assert jump_plane_yaw([0, 0, 0.3], [0, 0, 0.5]) == 0.0


def test_encode_state_examples():
    assert np.all(encode_state(C0, PHI0, C0, PHI0) == 0.0)
    np.testing.assert_allclose(encode_state(C0, PHI0, C0 + [0.4, 0, 0], PHI0), [0.4, 0, 0, 0, 0, 0], atol=1e-15)
    s = encode_state(C0, PHI0, C0, np.radians([0, 0, 350.0]))
    assert math.degrees(s[5]) == pytest.approx(-10.0, abs=1e-12)


@given(st.floats(-50.0, 50.0))
def test_wrap_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-9)


def test_command_validation_and_wrap():
    with pytest.raises(ValueError):
        JumpCommand([np.nan, 0, 0], [0, 0, 0])
    cmd = JumpCommand([0.1, 0, 0], [0, 0, 3 * math.pi / 2])
    assert cmd.delta_phi[2] == pytest.approx(-math.pi / 2)


# ---------------------------------------------------------------------------
# clip_action

def test_clip_inside_range_no_excess():
    raw = 0.5 * (ACTION_LOW + ACTION_HIGH)
    a, excess = clip_action(raw)
    assert np.all(excess == 0.0)
    np.testing.assert_array_equal(a.as_array(), raw)


def test_clip_k_and_duration():
    raw = 0.5 * (ACTION_LOW + ACTION_HIGH)
    raw[5], raw[0] = 5.0, 0.1
    a, excess = clip_action(raw)
    assert a.k == 3.0 and excess[5] == 2.0
    assert a.T_th_b == 0.4 and excess[0] == pytest.approx(0.3, abs=1e-15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=13, max_size=13))
def test_clip_in_range_and_idempotent(raw):
    a, excess = clip_action(raw)
    arr = a.as_array()
    assert np.all(arr >= ACTION_LOW) and np.all(arr <= ACTION_HIGH)
    assert np.all(excess >= 0.0)
    a2, e2 = clip_action(arr)
    np.testing.assert_array_equal(a2.as_array(), arr)
    assert np.all(e2 == 0.0)


def test_normalized_map_round_trip():
    np.testing.assert_allclose(normalized_to_raw(-np.ones(13)), ACTION_LOW, atol=1e-15)
    np.testing.assert_allclose(normalized_to_raw(np.ones(13)), ACTION_HIGH, atol=1e-15)
    x = np.linspace(-2, 2, 13)
    np.testing.assert_allclose(raw_to_normalized(normalized_to_raw(x)), x, atol=1e-14)


# ---------------------------------------------------------------------------
# decode

def test_decode_no_extension():
    b = decode(action(k=1.0, d=0.0), C0, PHI0, C0 + [0.5, 0, 0])
    np.testing.assert_array_equal(b.c_lo_e, b.c_lo_b)
    assert b.T_th_e == 0.0 and b.T_th == b.T_th_b


def test_decode_uarm_example():
    b = decode(action(r_v=1.0, k=3.0, d=0.3), C0, PHI0, C0 + [0.5, 0, 0])
    assert b.a_uarm == pytest.approx(8.0 / 0.6, rel=1e-14)
    assert b.T_th_e == pytest.approx(0.15, rel=1e-14)
    s, v, t, a = uarm_oracle(1.0, 3.0, 0.3)
    assert s == pytest.approx(0.3, abs=1e-9) and v == pytest.approx(3.0, abs=1e-9)
    assert b.T_th_e == pytest.approx(t, abs=1e-9)


def test_decode_vertical_position():
    b = decode(action(theta_p=math.pi / 2, r_p=0.3), C0, PHI0, C0 + [0.5, 0, 0])
    np.testing.assert_allclose(b.c_lo_b, [0.0, 0.0, 0.3], atol=1e-15)


def test_decode_constant_velocity_extension():
    b = decode(action(r_v=2.0, k=1.0, d=0.2), C0, PHI0, C0 + [0.5, 0, 0])
    assert b.a_uarm == 0.0 and b.T_th_e == pytest.approx(0.1)


def test_decode_degenerate_direction():
    with pytest.raises(ValueError):
        decode(action(r_v=0.0, d=0.1), C0, PHI0, C0 + [0.5, 0, 0])


def test_decode_follows_jump_plane():
    b = decode(action(), C0, PHI0, C0 + [0.0, 0.7, 0.0])
    assert abs(b.c_lo_b[0]) <= 1e-15 and b.c_lo_b[1] > 0.0
    assert abs(b.cdot_lo_b[0]) <= 1e-15 and b.cdot_lo_b[1] > 0.0


@settings(max_examples=200)
@given(seed=st.integers(0, 2**31 - 1))
def test_decode_invariants(seed):
    rng = np.random.default_rng(seed)
    a, _ = clip_action(random_raw(rng))
    c_tg = C0 + rng.uniform([-0.6, -0.6, -0.4], [1.2, 0.6, 0.4])
    b = decode(a, C0, PHI0, c_tg)
    np.testing.assert_allclose(b.cdot_lo_e, a.k * b.cdot_lo_b, rtol=1e-15, atol=1e-15)
    assert np.linalg.norm(b.c_lo_e - b.c_lo_b) == pytest.approx(a.d, abs=1e-12)
    assert b.T_th == b.T_th_b + b.T_th_e
    assert (b.T_th_e == 0.0) == (a.d == 0.0)


# ---------------------------------------------------------------------------
# Bézier boundary conditions

def test_position_polygon_rest_start():
    b = decode(action(), C0, PHI0, C0 + [0.5, 0, 0])
    P = solve_position_bezier(C0, np.zeros(3), b).points
    np.testing.assert_array_equal(P[1], P[0])


def test_position_polygon_boundary_values():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, _ = clip_action(random_raw(rng))
        cdot0 = rng.normal(size=3)
        b = decode(a, C0, PHI0, C0 + [0.5, 0.1, 0.0])
        poly = solve_position_bezier(C0, cdot0, b)
        dpoly = derivative(poly)
        np.testing.assert_allclose(dpoly.points[0], cdot0, atol=1e-12)
        np.testing.assert_allclose(dpoly.points[-1], b.cdot_lo_b, atol=1e-12)
        np.testing.assert_allclose(evaluate(poly, poly.duration), b.c_lo_b, atol=1e-15)


def test_orientation_constant_curve():
    poly = solve_orientation_bezier(PHI0, np.zeros(3), PHI0, np.zeros(3), 0.7)
    for t in np.linspace(0, 0.7, 9):
        assert np.all(evaluate(poly, t) == 0.0)


def test_orientation_yaw_only():
    poly = solve_orientation_bezier(PHI0, np.zeros(3), [0, 0, 0.5], [0, 0, 1.0], 0.8)
    vals = evaluate(poly, np.linspace(0, 0.8, 101))
    assert np.all(vals[:, :2] == 0.0)
    np.testing.assert_allclose(evaluate(derivative(poly), 0.8), [0, 0, 1.0], atol=1e-12)


# ---------------------------------------------------------------------------
# sample

def traj_for(a, c_tg=None, literal=False):
    _, traj = plan(a, C0, PHI0, C0 + [0.5, 0, 0] if c_tg is None else c_tg, literal_lerp=literal)
    return traj


def test_sample_endpoints():
    a = action(k=2.0, d=0.2, phi_lo=(0.1, -0.1, 0.3), phidot_lo=(0.2, 0.0, -1.0))
    traj = traj_for(a)
    c, cd, p, pd = sample(traj, 0.0)
    np.testing.assert_array_equal(c, C0)
    assert np.all(cd == 0.0) and np.all(p == 0.0) and np.all(pd == 0.0)
    c, cd, p, pd = sample(traj, traj.T_th)
    np.testing.assert_array_equal(c, traj.c_lo_e)
    np.testing.assert_array_equal(cd, traj.cdot_lo_e)
    np.testing.assert_allclose(p, a.phi_lo, atol=1e-15)
    np.testing.assert_allclose(pd, a.phidot_lo, atol=1e-12)


def test_sample_junction_continuity():
    traj = traj_for(action(k=2.5, d=0.25))
    eps = 1e-9
    c1, v1, _, _ = sample(traj, traj.T_th_b - eps)
    c2, v2, _, _ = sample(traj, traj.T_th_b + eps)
    speed = max(np.linalg.norm(v1), np.linalg.norm(v2))
    assert np.linalg.norm(c2 - c1) <= speed * 2 * eps + 1e-9
    assert np.linalg.norm(v2 - v1) <= 1e-6


def test_sample_out_of_range():
    traj = traj_for(action())
    for t in (-1e-9, traj.T_th + 1e-9, math.nan):
        with pytest.raises(ValueError):
            sample(traj, t)


def test_uarm_exit_speed_and_arc_length():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, _ = clip_action(random_raw(rng))
        if a.d == 0.0:
            continue
        traj = traj_for(a)
        v_b = np.linalg.norm(traj.cdot_lo_b)
        # equal up to the rounding of the norm itself
        assert np.linalg.norm(sample(traj, traj.T_th)[1]) == pytest.approx(a.k * v_b, rel=4e-16)
        ts = np.linspace(traj.T_th_b, traj.T_th, 20001)
        c = sample(traj, ts)[0]
        # the path is a straight segment, so the polyline length is exact
        assert np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)) == pytest.approx(a.d, abs=1e-9)


def test_literal_lerp_mode_differs_inside_segment():
    a = action(k=3.0, d=0.3)
    exact, lit = traj_for(a), traj_for(a, literal=True)
    t_mid = exact.T_th_b + 0.5 * exact.T_th_e
    assert np.linalg.norm(sample(exact, t_mid)[0] - sample(lit, t_mid)[0]) > 1e-3
    np.testing.assert_array_equal(sample(exact, exact.T_th)[0], sample(lit, lit.T_th)[0])


def test_planar_manifold_without_rotation():
    rng = np.random.default_rng(3)
    for _ in range(50):
        raw = random_raw(rng)
        raw[7:] = 0.0
        a, _ = clip_action(raw)
        c_tg = C0 + rng.uniform([-0.6, -0.6, -0.2], [1.2, 0.6, 0.2])
        traj = traj_for(a, c_tg)
        yaw = jump_plane_yaw(C0, c_tg)
        normal = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        c = sample(traj, np.linspace(0, traj.T_th, 200))[0]
        assert np.max(np.abs((c - C0) @ normal)) <= 1e-9


def test_prediction_bitwise_repeatable():
    b = decode(action(k=2.0, d=0.2), C0, PHI0, C0 + [0.5, 0, 0])
    p1 = predict_landing(BallisticState(b.c_lo_e, b.cdot_lo_e), C0[2])
    p2 = predict_landing(BallisticState(b.c_lo_e, b.cdot_lo_e), C0[2])
    assert p1.c_td.tobytes() == p2.c_td.tobytes() and p1.T_fl == p2.T_fl


def test_min_height_and_export(tmp_path):
    traj = traj_for(action(k=2.0, d=0.2))
    assert min_height(traj) <= C0[2]
    path = export_csv(traj, tmp_path / "traj.csv", period=0.05)
    rows = list(csv.reader(path.open()))
    assert rows[0][:4] == ["t", "cx", "cy", "cz"]
    assert float(rows[-1][0]) == traj.T_th
    assert float(rows[1][0]) == 0.0
    with pytest.raises(ValueError):
        export_csv(traj, tmp_path / "bad.csv", period=0.0)


def test_build_trajectory_direction_zero_when_static():
    b = decode(action(r_v=0.0), C0, PHI0, C0 + [0.5, 0, 0])
    traj = build_trajectory(C0, np.zeros(3), PHI0, np.zeros(3), b)
    assert np.all(traj.direction == 0.0)
