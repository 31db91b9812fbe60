"""Percentage pose errors for a set of estimates against one ground truth."""
from dataclasses import dataclass, field as dc_field

import numpy as np

from .poses import optical_axis

P_TEST = (1.0, 1.0, 1.0)


def _as_list(estimates):
    est = [np.asarray(T, dtype=float) for T in estimates]
    if not est:
        raise ValueError("need at least one estimate")
    return est


def point_transform_error(t_gt, estimates, p_test=P_TEST, d_max=12.0):
    """Mean distance between p_test mapped by the truth and by each estimate, % of d_max."""
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    p = np.append(np.asarray(p_test, dtype=float), 1.0)
    gt = np.asarray(t_gt, dtype=float)
    # (T_gt - T_i) p rather than T_gt p - T_i p: same value, less cancellation
    dists = [np.linalg.norm(((gt - T) @ p)[:3]) for T in _as_list(estimates)]
    return float(np.mean(dists) * 100.0 / d_max)


def translation_error(t_gt, estimates, d_max=12.0):
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    c = np.asarray(t_gt, dtype=float)[:3, 3]
    dists = [np.linalg.norm(c - T[:3, 3]) for T in _as_list(estimates)]
    return float(np.mean(dists) * 100.0 / d_max)


def _angle_deg(u, v):
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def rotation_error(t_gt, estimates):
    """Mean angle between optical axes, as a percentage of 180 degrees."""
    a = optical_axis(t_gt)
    angles = [_angle_deg(a, optical_axis(T)) for T in _as_list(estimates)]
    return float(np.mean(angles) / 180.0 * 100.0)


def geodesic_rotation_error(t_gt, estimates):
    """Mean SO(3) geodesic angle between full orientations, % of 180 degrees.

    Unlike :func:`rotation_error` this also counts roll about the optical axis.
    """
    R0 = np.asarray(t_gt, dtype=float)[:3, :3]
    angles = []
    for T in _as_list(estimates):
        cos = (np.trace(R0.T @ T[:3, :3]) - 1.0) / 2.0
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return float(np.mean(angles) / 180.0 * 100.0)


@dataclass
class PoseErrorReport:
    point_error_pct: float
    translation_error_pct: float
    rotation_error_pct: float
    per_estimate: list = dc_field(default_factory=list)

    def as_dict(self):
        return {
            "point_error_pct": self.point_error_pct,
            "translation_error_pct": self.translation_error_pct,
            "rotation_error_pct": self.rotation_error_pct,
            "per_estimate": self.per_estimate,
        }


def pose_error_report(t_gt, estimates, d_max=12.0, p_test=P_TEST):
    est = _as_list(estimates)
    per = [
        {
            "point_error_pct": point_transform_error(t_gt, [T], p_test, d_max),
            "translation_error_pct": translation_error(t_gt, [T], d_max),
            "rotation_error_pct": rotation_error(t_gt, [T]),
        }
        for T in est
    ]
    return PoseErrorReport(
        point_transform_error(t_gt, est, p_test, d_max),
        translation_error(t_gt, est, d_max),
        rotation_error(t_gt, est),
        per,
    )
