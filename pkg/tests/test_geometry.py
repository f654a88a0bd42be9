import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from jointface.errors import DegeneratePoseError, InvalidInputError
from jointface.geometry import (
    WeakPerspectivePose,
    angles_from_pose,
    angles_from_rotation,
    nearest_rotation,
    pose_from_angles,
    project_weak_perspective,
    rotation_from_angles,
    wrap_angle,
)

LIMIT = math.radians(85)
angle_triples = st.tuples(
    st.floats(-LIMIT, LIMIT), st.floats(-LIMIT, LIMIT), st.floats(-math.pi + 1e-6, math.pi)
)


# ---- projection

def test_projection_drops_depth():
    pose = WeakPerspectivePose(np.eye(2, 3), np.zeros(2))
    np.testing.assert_array_equal(project_weak_perspective(pose, [2.0, 3.0, 5.0]), [[2.0, 3.0]])


def test_projection_scale_and_translation():
    pose = WeakPerspectivePose(2 * np.eye(2, 3), [1.0, 1.0])
    np.testing.assert_array_equal(project_weak_perspective(pose, [1.0, 1.0, 0.0]), [[3.0, 3.0]])


def test_projection_matches_composition_oracle(rng):
    for _ in range(50):
        R = oracles.random_rotation(rng)
        s = rng.uniform(0.1, 10)
        t = rng.normal(size=2) * 50
        pts = rng.normal(size=(15, 3))
        pose = WeakPerspectivePose(s * R[:2], t)
        np.testing.assert_allclose(project_weak_perspective(pose, pts.ravel()),
                                   oracles.project_points(R, s, t, pts), atol=1e-12, rtol=0)


def test_projection_rejects_non_finite():
    pose = WeakPerspectivePose(np.eye(2, 3), np.zeros(2))
    with pytest.raises(InvalidInputError):
        project_weak_perspective(pose, [1.0, np.nan, 0.0])
    with pytest.raises(InvalidInputError):
        WeakPerspectivePose(np.full((2, 3), np.inf), np.zeros(2))
    with pytest.raises(InvalidInputError):
        project_weak_perspective(pose, [1.0, 2.0])


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_projection_is_linear_without_translation(a, b, seed):
    rng = np.random.default_rng(seed)
    pose = WeakPerspectivePose(rng.normal(size=(2, 3)), np.zeros(2))
    s1, s2 = rng.normal(size=(2, 7, 3))
    lhs = project_weak_perspective(pose, a * s1 + b * s2)
    rhs = a * project_weak_perspective(pose, s1) + b * project_weak_perspective(pose, s2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


# ---- angles -> pose

def test_identity_angles_give_identity_projection():
    pose = pose_from_angles([0, 0, 0], 1.0, [0, 0])
    np.testing.assert_array_equal(pose.M, np.eye(2, 3))


def test_roll_quarter_turn_first_row():
    pose = pose_from_angles([0, 0, math.pi / 2], 2.0)
    np.testing.assert_allclose(pose.M[0] / pose.scale, [0, -1, 0], atol=1e-15)


def test_rotation_matches_euler_oracle(rng):
    for _ in range(100):
        a = rng.uniform(-math.pi, math.pi, 3)
        np.testing.assert_allclose(rotation_from_angles(a), oracles.euler_rotation(*a), atol=1e-15)


def test_pose_from_angles_rejects_bad_scale():
    for s in (0.0, -1.0, float("nan")):
        with pytest.raises(InvalidInputError):
            pose_from_angles([0, 0, 0], s)


def test_angle_round_trip_1000(rng):
    worst = 0.0
    for _ in range(1000):
        a = np.array([rng.uniform(-LIMIT, LIMIT), rng.uniform(-LIMIT, LIMIT), rng.uniform(-math.pi, math.pi)])
        s = rng.uniform(0.01, 100)
        dec = angles_from_pose(pose_from_angles(a, s, rng.normal(size=2)).M)
        worst = max(worst, np.abs(wrap_angle(dec.angles - a)).max())
        assert dec.scale == pytest.approx(s, rel=1e-12)
    assert worst <= 1e-9


@given(angle_triples, st.floats(1e-3, 1e3))
def test_round_trip_property(a, s):
    dec = angles_from_pose(pose_from_angles(a, s).M)
    assert np.abs(wrap_angle(dec.angles - np.array(a))).max() <= 1e-9
    assert abs(dec.scale - s) <= 1e-9 * s
    assert not dec.gimbal


# ---- pose -> angles

def test_identity_projection_decomposes_to_zero():
    dec = angles_from_pose(np.eye(2, 3))
    np.testing.assert_array_equal(dec.angles, [0, 0, 0])
    assert dec.scale == 1.0


def test_yaw_30_recovered():
    dec = angles_from_pose(pose_from_angles([0, math.radians(30), 0], 1.0).M)
    assert abs(dec.angles[1] - math.radians(30)) <= 1e-9


def test_noisy_rows_project_to_procrustes_oracle(rng):
    for _ in range(50):
        R = oracles.random_rotation(rng)
        s = rng.uniform(0.5, 5)
        M = s * R[:2] + rng.normal(scale=1e-3, size=(2, 3))
        dec = angles_from_pose(M)
        scale = np.linalg.norm(M, axis=1).mean()
        r1, r2 = M / scale
        expected = oracles.nearest_rotation_polar(np.vstack([r1, r2, np.cross(r1, r2)]))
        np.testing.assert_allclose(rotation_from_angles(dec.angles), expected, atol=1e-9)
        np.testing.assert_allclose(dec.matrix, scale * expected[:2], atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.2))
def test_canonical_rows_orthonormal_up_to_scale(seed, noise):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.5, 3) * oracles.random_rotation(rng)[:2] + noise * rng.normal(size=(2, 3))
    dec = angles_from_pose(M)
    G = dec.matrix @ dec.matrix.T / dec.scale**2
    np.testing.assert_allclose(G, np.eye(2), atol=1e-10)


def test_vanishing_row_is_degenerate():
    with pytest.raises(DegeneratePoseError):
        angles_from_pose(np.array([[1.0, 0, 0], [0, 0, 0]]))


def test_gimbal_lock_is_flagged_and_roll_pinned(caplog):
    R = oracles.euler_rotation(0.3, math.pi / 2, 0.2)
    dec = angles_from_pose(R[:2])
    assert dec.gimbal
    assert dec.angles[2] == 0.0
    assert abs(dec.angles[1] - math.pi / 2) < 1e-6
    # Whatever split was chosen, the rotation itself is reproduced.
    np.testing.assert_allclose(rotation_from_angles(dec.angles), R, atol=1e-6)
    assert "gimbal" in caplog.text


def test_nearest_rotation_fixes_reflection():
    A = np.diag([1.0, 1.0, -1.0])
    R = nearest_rotation(A)
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_wrap_angle_half_open_interval():
    np.testing.assert_allclose(wrap_angle([math.pi, -math.pi, 3 * math.pi, 0.1]), [math.pi, math.pi, math.pi, 0.1])


@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -math.pi < w <= math.pi
    assert abs(math.sin(w) - math.sin(a)) < 1e-9 and abs(math.cos(w) - math.cos(a)) < 1e-9


def test_batched_angles_from_rotation(rng):
    a = rng.uniform(-1, 1, size=(4, 5, 3))
    out, gimbal = angles_from_rotation(rotation_from_angles(a))
    np.testing.assert_allclose(out, a, atol=1e-12)
    assert not gimbal.any()
