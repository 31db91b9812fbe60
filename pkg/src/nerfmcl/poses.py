"""Rigid camera poses and the spherical look-at parametrisation.

Poses are plain 4x4 float arrays mapping camera coordinates to world
coordinates. Cameras look along their local -z axis with +x right, +y up.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

WORLD_UP = np.array([0.0, 0.0, 1.0])


class PoseError(ValueError):
    pass


def check_pose(pose, tol=1e-6, label="pose"):
    """Validate a camera-to-world matrix and return it as a float array.

    Raises PoseError naming ``label`` and the offending deviation.
    """
    T = np.asarray(pose, dtype=float)
    if T.shape != (4, 4):
        raise PoseError(f"{label}: expected 4x4 matrix, got shape {T.shape}")
    if not np.all(np.isfinite(T)):
        raise PoseError(f"{label}: non-finite entries")
    if np.max(np.abs(T[3] - [0, 0, 0, 1])) > tol:
        raise PoseError(f"{label}: bottom row must be [0, 0, 0, 1]")
    R = T[:3, :3]
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    if ortho > tol:
        raise PoseError(f"{label}: rotation not orthonormal (deviation {ortho:.3g})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise PoseError(f"{label}: rotation determinant {det:.6f}, expected +1")
    return T


def make_pose(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def camera_center(pose):
    return np.asarray(pose)[:3, 3]


def optical_axis(pose):
    """World-frame viewing direction (the camera's -z column)."""
    return -np.asarray(pose)[:3, 2]


def rotate_about_camera_axis(pose, axis, angle):
    """Rotate a pose in place about one of its own axes ('x', 'y' or 'z')."""
    R_delta = Rotation.from_euler(axis, angle).as_matrix()
    out = np.array(pose, dtype=float)
    out[:3, :3] = out[:3, :3] @ R_delta
    return out


def look_at(position, target=(0.0, 0.0, 0.0), up=WORLD_UP):
    position = np.asarray(position, dtype=float)
    back = position - np.asarray(target, dtype=float)
    norm = np.linalg.norm(back)
    if norm == 0:
        raise PoseError("camera position coincides with look-at target")
    z = back / norm
    x = np.cross(up, z)
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        raise PoseError("viewing direction parallel to up vector; camera roll undefined")
    x /= xn
    y = np.cross(z, x)
    return make_pose(np.stack([x, y, z], axis=1), position)


@dataclass(frozen=True)
class SphericalPose:
    theta: float  # azimuth, radians
    phi: float  # elevation, radians
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise PoseError(f"radius must be positive, got {self.r}")
        if not -np.pi / 2 < self.phi < np.pi / 2:
            raise PoseError(f"elevation {self.phi} outside the open interval (-pi/2, pi/2)")

    def as_array(self):
        return np.array([self.theta, self.phi, self.r])


def spherical_to_pose(s):
    """Camera on the sphere of radius ``s.r`` looking at the world origin.

    World +z projects to image up.
    """
    cp = np.cos(s.phi)
    position = s.r * np.array([cp * np.cos(s.theta), cp * np.sin(s.theta), np.sin(s.phi)])
    return look_at(position)


def pose_to_spherical(pose):
    c = camera_center(pose)
    r = float(np.linalg.norm(c))
    if r == 0:
        raise PoseError("camera at the origin has no spherical parametrisation")
    theta = float(np.arctan2(c[1], c[0]))
    phi = float(np.arcsin(np.clip(c[2] / r, -1.0, 1.0)))
    return SphericalPose(theta, phi, r)


def random_rotation(rng, max_angle):
    """Rotation about a uniformly random axis by an angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def perturb_pose(pose, rng, max_angle, max_trans):
    """Rotate in the camera frame and shift the centre by a uniform box offset."""
    out = np.array(pose, dtype=float)
    out[:3, :3] = out[:3, :3] @ random_rotation(rng, max_angle)
    out[:3, 3] = out[:3, 3] + rng.uniform(-max_trans, max_trans, size=3)
    return out
