import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deskewfuse.errors import DegenerateGeometry, InvalidArgument, MissingPose, OutOfRange
from deskewfuse.geom import (
    AxisAngle,
    EgoTrajectory,
    Pose,
    exp_so3,
    interpolate_pose,
    interpolate_poses,
    is_rotation,
    matrix_to_quaternion,
    pose_velocity,
    quaternion_to_matrix,
    radial_basis,
    rodrigues_exp,
    rodrigues_log,
    skew,
    wrap_angle,
    yaw_rotation,
)

from conftest import random_rotation


def taylor_expm(a, terms=20):
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def test_exp_zero_angle_is_identity():
    assert np.array_equal(rodrigues_exp(AxisAngle(np.array([0, 0, 1.0]), 0.0)), np.eye(3))


def test_exp_quarter_turn_about_z():
    r = rodrigues_exp(AxisAngle(np.array([0, 0, 1.0]), math.pi / 2))
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_exp_matches_taylor_series_oracle():
    axis = np.ones(3) / math.sqrt(3)
    r = rodrigues_exp(AxisAngle(axis, 0.3))
    assert np.allclose(r, taylor_expm(0.3 * skew(axis)), atol=1e-9, rtol=0)


def test_exp_rejects_non_unit_axis():
    with pytest.raises(InvalidArgument):
        rodrigues_exp(AxisAngle(np.array([0, 0, 1.1]), 0.2))


def test_log_identity_convention():
    axis, angle = rodrigues_log(np.eye(3))
    assert angle == 0.0 and np.array_equal(axis, [0, 0, 1])


def test_log_about_x():
    axis, angle = rodrigues_log(rodrigues_exp(AxisAngle(np.array([1.0, 0, 0]), 0.5)))
    assert angle == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(axis, [1, 0, 0], atol=1e-12)


def test_log_exp_round_trip_1000_random_rotations(rng):
    for _ in range(1000):
        r = random_rotation(rng)
        aa = rodrigues_log(r)
        assert 0 <= aa.angle <= math.pi
        assert np.allclose(rodrigues_exp(aa), r, atol=1e-7, rtol=0)


@pytest.mark.parametrize("angle", [math.pi, math.pi - 1e-5, math.pi - 1e-9])
def test_log_near_pi(rng, angle):
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        r = rodrigues_exp(AxisAngle(axis, angle))
        assert np.allclose(rodrigues_exp(rodrigues_log(r)), r, atol=1e-7)


@given(st.floats(0, math.pi - 1e-6), st.integers(0, 2**31))
def test_exp_inverse_pair(theta, seed):
    axis = np.random.default_rng(seed).normal(size=3)
    axis /= np.linalg.norm(axis)
    prod = rodrigues_exp(AxisAngle(axis, theta)) @ rodrigues_exp(AxisAngle(axis, -theta))
    assert np.allclose(prod, np.eye(3), atol=1e-9)


def test_interpolate_endpoints(rng):
    p0 = Pose(random_rotation(rng), rng.normal(size=3), 1.0)
    p1 = Pose(random_rotation(rng), rng.normal(size=3), 2.0)
    assert interpolate_pose(p0, p1, 1.0) is p0
    assert interpolate_pose(p0, p1, 2.0).allclose(p1, atol=1e-9)


def test_interpolate_midpoint_example():
    p0 = Pose.identity(0.0)
    p1 = Pose(yaw_rotation(math.pi / 2), [1, 0, 0], 1.0)
    mid = interpolate_pose(p0, p1, 0.5)
    assert np.allclose(mid.rotation, yaw_rotation(math.pi / 4), atol=1e-12)
    assert np.allclose(mid.translation, [0.5, 0, 0], atol=1e-12)


def test_interpolate_errors():
    p0, p1 = Pose.identity(0.0), Pose.identity(1.0)
    with pytest.raises(OutOfRange):
        interpolate_pose(p0, p1, 1.5)
    with pytest.raises(InvalidArgument):
        interpolate_pose(p1, p0, 0.5)


def test_interpolation_angle_is_monotone(rng):
    p0 = Pose(random_rotation(rng), np.zeros(3), 0.0)
    p1 = Pose(p0.rotation @ exp_so3([0.3, -1.0, 2.0]), np.ones(3), 1.0)
    angles = [rodrigues_log(p0.rotation.T @ interpolate_pose(p0, p1, t).rotation).angle for t in np.linspace(0, 1, 50)]
    assert np.all(np.diff(angles) > 0)


def test_vectorised_interpolation_matches_scalar(rng):
    p0 = Pose(random_rotation(rng), rng.normal(size=3), 0.0)
    p1 = Pose(random_rotation(rng), rng.normal(size=3), 0.1)
    ts = np.linspace(0, 0.1, 17)
    rots, trans = interpolate_poses(p0, p1, ts)
    for r, tr, t in zip(rots, trans, ts):
        p = interpolate_pose(p0, p1, t)
        assert np.allclose(r, p.rotation, atol=1e-12) and np.allclose(tr, p.translation, atol=1e-12)


def test_interpolation_composition_expansion(rng):
    # R_t0 R_{t0,ti} P' + R_t0 T_{t0,ti} + T_t0 equals applying the interpolated pose
    p0 = Pose(random_rotation(rng), rng.normal(size=3), 0.0)
    p1 = Pose(random_rotation(rng), rng.normal(size=3), 1.0)
    pts = rng.normal(size=(20, 3))
    s = 0.37
    axis, angle = rodrigues_log(p0.rotation.T @ p1.rotation)
    r_rel = rodrigues_exp(AxisAngle(axis, angle * s))
    t_rel = s * p0.rotation.T @ (p1.translation - p0.translation)
    expected = (p0.rotation @ r_rel @ pts.T).T + p0.rotation @ t_rel + p0.translation
    assert np.allclose(interpolate_pose(p0, p1, s).apply(pts), expected, atol=1e-9)


def test_pose_inverse_and_compose(rng):
    p = Pose(random_rotation(rng), rng.normal(size=3))
    assert p.compose(p.inverse()).allclose(Pose.identity(), atol=1e-12)


def test_pose_rejects_negative_stamp():
    with pytest.raises(InvalidArgument):
        Pose.identity(-1.0)


def test_radial_basis_axis_aligned():
    b = radial_basis([10, 0, 0], [0, 0, 0])
    assert np.allclose(b.radial, [1, 0, 0])
    assert np.allclose(b.tangential_1, [0, -1, 0])
    assert np.allclose(b.tangential_2, [0, 0, -1])


def test_radial_basis_overhead_fallback():
    b = radial_basis([0, 0, 10], [0, 0, 0])
    m = b.matrix()
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)


def test_radial_basis_degenerate():
    with pytest.raises(DegenerateGeometry):
        radial_basis([1, 1, 1], [1, 1, 1.0005])


def test_radial_basis_orthonormal_right_handed_random(rng):
    for _ in range(1000):
        c = rng.uniform(-50, 50, 3)
        o = rng.uniform(-5, 5, 3)
        if np.linalg.norm(c - o) < 1e-2:
            continue
        b = radial_basis(c, o)
        m = b.matrix()
        assert np.allclose(m.T @ m, np.eye(3), atol=1e-9)
        assert np.allclose(np.cross(b.radial, b.tangential_1), b.tangential_2, atol=1e-9)


def test_ego_trajectory_lookup_and_gap():
    ego = EgoTrajectory([Pose.identity(0.0), Pose(np.eye(3), [1, 0, 0], 1.0)])
    assert np.allclose(ego.pose_at(0.25).translation, [0.25, 0, 0])
    lin, ang = ego.velocity_at(0.5)
    assert np.allclose(lin, [1, 0, 0]) and np.allclose(ang, 0)
    with pytest.raises(MissingPose):
        ego.pose_at(2.0)


def test_pose_velocity_rotation():
    p0 = Pose.identity(0.0)
    p1 = Pose(yaw_rotation(0.3), [0, 0, 0], 0.1)
    _, ang = pose_velocity(p0, p1)
    assert np.allclose(ang, [0, 0, 3.0])


def test_quaternion_round_trip(rng):
    for _ in range(100):
        r = random_rotation(rng)
        q = matrix_to_quaternion(r)
        assert q[0] >= 0
        assert np.allclose(quaternion_to_matrix(q), r, atol=1e-12)
        assert is_rotation(quaternion_to_matrix(q))


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
