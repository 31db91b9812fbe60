import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nerfmcl.poses import (PoseError, SphericalPose, camera_center, check_pose, look_at, optical_axis,
                           perturb_pose, pose_to_spherical, rotate_about_camera_axis, spherical_to_pose)


def test_theta0_phi0_camera_on_x_axis_looking_at_origin():
    T = spherical_to_pose(SphericalPose(0.0, 0.0, 4.0))
    np.testing.assert_allclose(camera_center(T), [4, 0, 0], atol=1e-12)
    np.testing.assert_allclose(optical_axis(T), [-1, 0, 0], atol=1e-12)
    # world +z is image up (camera +y)
    np.testing.assert_allclose(T[:3, 1], [0, 0, 1], atol=1e-12)
    check_pose(T)


@settings(max_examples=100, deadline=None)
@given(st.floats(-np.pi + 1e-6, np.pi - 1e-6), st.floats(-1.5, 1.5), st.floats(0.1, 50.0))
def test_spherical_round_trip(theta, phi, r):
    s = SphericalPose(theta, phi, r)
    T = spherical_to_pose(s)
    back = pose_to_spherical(T)
    np.testing.assert_allclose(back.as_array(), s.as_array(), atol=1e-6)
    np.testing.assert_allclose(spherical_to_pose(back), T, atol=1e-6)


@pytest.mark.parametrize("bad", [dict(r=0.0, phi=0.0), dict(r=-1.0, phi=0.0),
                                 dict(r=1.0, phi=np.pi / 2), dict(r=1.0, phi=-np.pi / 2)])
def test_spherical_rejects_invalid(bad):
    with pytest.raises(PoseError):
        SphericalPose(0.0, bad["phi"], bad["r"])


def test_look_at_straight_down_is_gimbal():
    with pytest.raises(PoseError, match="roll"):
        look_at([0, 0, 3.0])


def test_check_pose_rejects_reflection_and_names_label():
    T = np.diag([1.0, 1.0, -1.0, 1.0])
    with pytest.raises(PoseError, match="frame 3.*determinant"):
        check_pose(T, label="frame 3")


def test_check_pose_rejects_shear():
    T = np.eye(4)
    T[0, 1] = 1e-3
    with pytest.raises(PoseError, match="orthonormal"):
        check_pose(T)


def test_rotate_about_camera_x_tilts_axis_by_angle():
    T = spherical_to_pose(SphericalPose(0.3, 0.2, 4.0))
    R = rotate_about_camera_axis(T, "x", np.radians(10))
    cos = optical_axis(T) @ optical_axis(R)
    assert np.degrees(np.arccos(cos)) == pytest.approx(10.0, abs=1e-9)
    np.testing.assert_array_equal(camera_center(R), camera_center(T))


def test_perturb_pose_stays_in_bounds():
    rng = np.random.default_rng(0)
    T = spherical_to_pose(SphericalPose(1.0, 0.4, 4.0))
    for _ in range(50):
        P = perturb_pose(T, rng, 0.1, 0.2)
        check_pose(P)
        assert np.all(np.abs(camera_center(P) - camera_center(T)) <= 0.2)
        cos = np.clip((np.trace(T[:3, :3].T @ P[:3, :3]) - 1) / 2, -1, 1)
        assert np.arccos(cos) <= 0.1 + 1e-9
