"""Sampling-based camera pose estimation against radiance fields.

Particles (candidate poses) are scored by rendering a small set of pixels
through a field and comparing them with an observed image; the pixel set is
chosen at random, at corner keypoints, or inside stable regions.
"""
from .features import (FeatureConfig, PixelSet, detect_corners, detect_stable_regions, select_pixels,
                       stable_regions, to_grayscale)
from .harness import GridSpec, likelihood_curve, passes_to_threshold, report, run_grid
from .localizer import LocalizerConfig, Particle, evaluate_error, localize, write_trace
from .metrics import pose_error_report, point_transform_error, rotation_error, translation_error
from .poses import SphericalPose, look_at, pose_to_spherical, spherical_to_pose
from .radiance_field import (AnalyticField, Box, ForwardPassLedger, MlpField, Sphere, encode, load_weights,
                             query_batch, random_mlp_field, save_weights)
from .renderer import generate_ray, render_image, render_pixel, sample_points
from .scene_data import (Dataset, Intrinsics, PoseRange, RandomMlpScene, benchmark_dataset,
                         generate_synthetic_scene, load_field, load_manifest, pose_range_from_dataset,
                         save_field, save_manifest, sphere_and_box_scene)

__version__ = "0.1.0"
