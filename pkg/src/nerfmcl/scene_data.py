"""Datasets: manifest IO, synthetic scene generation and pose search ranges."""
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .poses import PoseError, SphericalPose, check_pose, look_at, pose_to_spherical, spherical_to_pose
from .radiance_field import (AnalyticField, Box, FieldError, MlpField, MlpSpec, Sphere, load_weights,
                             random_mlp_spec, save_weights)
from .renderer import render_image

OBJECT_CENTRIC = "object-centric"
SCENE_CENTRIC = "scene-centric"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DatasetError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DatasetError("principal point outside the image")

    @classmethod
    def centered(cls, width, height, focal):
        return cls(float(focal), float(focal), width / 2.0, height / 2.0, int(width), int(height))

    @property
    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass
class Frame:
    image: np.ndarray  # H x W x 3, values in [0, 1]
    pose: np.ndarray  # 4 x 4 camera-to-world


@dataclass
class Dataset:
    frames: list
    intrinsics: Intrinsics
    kind: str = OBJECT_CENTRIC
    near: float = 2.0
    far: float = 6.0
    max_distance: float = 12.0
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in (OBJECT_CENTRIC, SCENE_CENTRIC):
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if not self.frames:
            raise DatasetError("empty dataset")
        if not self.near < self.far:
            raise DatasetError("near must be < far")
        if not self.max_distance > 0:
            raise DatasetError("max_distance must be positive")
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for i, fr in enumerate(self.frames):
            if fr.image.shape != shape:
                raise DatasetError(f"frame {i}: image shape {fr.image.shape}, expected {shape}")
            check_pose(fr.pose, label=f"frame {i}")

    def __len__(self):
        return len(self.frames)


@dataclass
class PoseRange:
    """Search region for pose particles.

    Object-centric ranges are intervals over (theta, phi, r); scene-centric
    ranges are anchor poses plus perturbation bounds.
    """

    kind: str
    theta: tuple = (0.0, 0.0)
    phi: tuple = (0.0, 0.0)
    r: tuple = (1.0, 1.0)
    anchors: list = dc_field(default_factory=list)
    perturb_rot: float = 0.1
    perturb_trans: float = 0.1

    def __post_init__(self):
        if self.kind == OBJECT_CENTRIC:
            for name in ("theta", "phi", "r"):
                lo, hi = getattr(self, name)
                if lo > hi:
                    raise DatasetError(f"{name} interval lower bound exceeds upper bound")
            if self.r[0] <= 0:
                raise DatasetError("radius interval must be strictly positive")
            if self.phi[0] <= -np.pi / 2 or self.phi[1] >= np.pi / 2:
                raise DatasetError("elevation interval must lie inside (-pi/2, pi/2)")
        elif not self.anchors:
            raise DatasetError("scene-centric range needs at least one anchor pose")

    @property
    def bounds(self):
        return np.array([self.theta, self.phi, self.r], dtype=float)

    @property
    def theta_wraps(self):
        return self.theta[1] - self.theta[0] >= 2 * np.pi


# -- image IO ---------------------------------------------------------------


def read_png(path, background=(1.0, 1.0, 1.0)):
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        arr = np.asarray(im, dtype=float) / 255.0
    if arr.shape[-1] == 4:
        alpha = arr[..., 3:]
        arr = arr[..., :3] * alpha + np.asarray(background, dtype=float) * (1 - alpha)
    return arr


def write_png(image, path):
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# -- manifests --------------------------------------------------------------


def load_manifest(path, background=(1.0, 1.0, 1.0)):
    """Load a JSON manifest and its images. See README for the schema."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc})") from None
    try:
        k = Intrinsics(**{key: meta["intrinsics"][key] for key in ("fx", "fy", "cx", "cy", "width", "height")})
        frames_meta = meta["frames"]
        kind, near, far = meta["kind"], float(meta["near"]), float(meta["far"])
        max_distance = float(meta["max_distance"])
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: missing or invalid field {exc}") from None
    if not frames_meta:
        raise DatasetError("empty dataset")
    frames = []
    for i, fm in enumerate(frames_meta):
        pose = np.asarray(fm["transform_matrix"], dtype=float)
        try:
            check_pose(pose, label=f"frame {i}")
        except PoseError as exc:
            raise DatasetError(str(exc)) from None
        img_path = path.parent / fm["image"]
        if not img_path.is_file():
            raise DatasetError(f"frame {i}: image not found: {img_path}")
        img = read_png(img_path, background)
        if img.shape[:2] != (k.height, k.width):
            raise DatasetError(
                f"frame {i}: image size {img.shape[1]}x{img.shape[0]} does not match "
                f"declared {k.width}x{k.height}"
            )
        frames.append(Frame(img, pose))
    return Dataset(frames, k, kind, near, far, max_distance, tuple(background))


def save_manifest(dataset, directory, name="manifest.json"):
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, fr in enumerate(dataset.frames):
        rel = f"images/frame_{i:03d}.png"
        write_png(fr.image, directory / rel)
        frames.append({"image": rel, "transform_matrix": np.asarray(fr.pose).tolist()})
    meta = {
        "kind": dataset.kind,
        "intrinsics": dataset.intrinsics.to_dict(),
        "near": dataset.near,
        "far": dataset.far,
        "max_distance": dataset.max_distance,
        "frames": frames,
    }
    out = directory / name
    out.write_text(json.dumps(meta, indent=2))
    return out


def save_field(field, directory):
    """Store a field next to a manifest: ``field.json`` or ``field.weights``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(field, AnalyticField):
        out = directory / "field.json"
        out.write_text(json.dumps(field.to_dict(), indent=2))
    elif isinstance(field, MlpField):
        out = directory / "field.weights"
        save_weights(field, out)
    else:
        raise DatasetError(f"cannot store field of type {type(field).__name__}")
    return out


def load_field(directory):
    directory = Path(directory)
    if (directory / "field.json").is_file():
        try:
            d = json.loads((directory / "field.json").read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{directory / 'field.json'}: malformed JSON ({exc})") from None
        if d.get("type") != "analytic":
            raise DatasetError(f"{directory / 'field.json'}: unknown field type {d.get('type')!r}")
        return AnalyticField.from_dict(d)
    if (directory / "field.weights").is_file():
        try:
            return load_weights(directory / "field.weights")
        except FieldError as exc:
            raise DatasetError(str(exc)) from None
    raise DatasetError(f"no field.json or field.weights in {directory}")


# -- synthetic scenes -------------------------------------------------------


@dataclass(frozen=True)
class RandomMlpScene:
    """Ground-truth field is an MLP with seeded random weights."""

    seed: int
    hidden: tuple = (64, 64, 64, 64)
    l_pos: int = 10
    l_dir: int = 0


def sphere_and_box_scene(background=(1.0, 1.0, 1.0), checker=0.08):
    """Small tabletop around the origin: five flat spheres, one flat box and
    two black-and-white checkered boxes (cell size ``checker``).

    The checkered boxes gather nearly all the strong corners in an image while
    the flat primitives give large uniform regions.
    """
    d = 40.0
    spheres = [
        Sphere((0.0, 0.0, 0.0), 0.3, (0.85, 0.15, 0.15), d),
        Sphere((0.8, 0.3, 0.1), 0.25, (0.15, 0.35, 0.85), d),
        Sphere((-0.6, 0.7, -0.1), 0.28, (0.2, 0.7, 0.25), d),
        Sphere((-0.3, -0.85, 0.3), 0.22, (0.95, 0.75, 0.1), d),
        Sphere((0.3, 0.6, -0.5), 0.2, (0.55, 0.2, 0.7), d),
    ]
    white, black = (0.95, 0.95, 0.95), (0.1, 0.1, 0.1)
    boxes = [
        Box((0.35, -0.75, -0.3), (0.75, -0.35, 0.1), white, d, checker, black),
        Box((-0.95, -0.25, -0.3), (-0.55, 0.15, 0.1), white, d, checker, black),
        Box((-0.2, 0.45, 0.45), (0.2, 0.85, 0.75), (0.1, 0.6, 0.65), d),
    ]
    return AnalyticField(spheres, boxes, background)


def benchmark_dataset(n_views=20, image_size=100, seed=0, supersample=3):
    """The 100x100 sphere-and-box dataset used by the benchmarks and demos.

    Observed images are area-averaged over 3x3 sub-pixel rays, so the field
    reproduces flat interiors exactly but not pixels straddling an edge or a
    checker corner. Returns ``(dataset, field)``.
    """
    return generate_synthetic_scene(sphere_and_box_scene(), n_views, image_size, seed,
                                    radius=(3.5, 4.5), focal=1.2 * image_size, supersample=supersample)


def _build_field(spec):
    if isinstance(spec, AnalyticField):
        if not spec.primitives:
            raise DatasetError("degenerate scene: no primitives")
        return spec
    if isinstance(spec, RandomMlpScene):
        return MlpField(random_mlp_spec(spec.seed, spec.hidden, spec.l_pos, spec.l_dir))
    if isinstance(spec, MlpField):
        return spec
    if isinstance(spec, MlpSpec):
        return MlpField(spec)
    raise DatasetError(f"unsupported scene description {type(spec).__name__}")


def generate_synthetic_scene(spec, n_views, image_size, seed, *, radius=4.0, elevation=(0.25, 1.0),
                             focal=None, near=2.0, far=6.0, n_points=64, layout="sphere",
                             max_distance=None, background=None, supersample=1):
    """Render a dataset from a known field.

    ``layout="sphere"`` places cameras on a sphere (radius may be a
    ``(lo, hi)`` interval) looking at the origin, with azimuth uniform over the
    full circle and elevation uniform in ``elevation`` (radians); the result
    is object-centric. ``layout="forward"`` gives a scene-centric set of
    cameras that all look down the world -y axis from a small patch at
    y = ``radius``.

    ``supersample > 1`` averages an s x s grid of sub-pixel rays per pixel,
    mimicking a sensor that integrates over the pixel area; the default of 1
    renders exactly what :func:`render_image` produces.

    Returns ``(dataset, field)``. The output depends only on the arguments.
    """
    field = _build_field(spec)
    if n_views < 1:
        raise DatasetError("n_views must be >= 1")
    w, h = (image_size, image_size) if np.isscalar(image_size) else image_size
    if w < 8 or h < 8:
        raise DatasetError("image_size must be at least 8x8")
    if background is None:
        background = getattr(field, "background", (1.0, 1.0, 1.0))
    k = Intrinsics.centered(w, h, focal if focal is not None else 1.2 * w)
    rng = np.random.default_rng(seed)
    r_lo, r_hi = (radius, radius) if np.isscalar(radius) else radius
    poses = []
    for _ in range(n_views):
        if layout == "sphere":
            s = SphericalPose(rng.uniform(-np.pi, np.pi), rng.uniform(*elevation), rng.uniform(r_lo, r_hi))
            poses.append(spherical_to_pose(s))
        elif layout == "forward":
            offset = rng.uniform(-0.5, 0.5, size=2)
            pos = np.array([offset[0], rng.uniform(r_lo, r_hi), offset[1]])
            poses.append(look_at(pos, target=pos - np.array([0.0, 1.0, 0.0])))
        else:
            raise DatasetError(f"unknown layout {layout!r}")
    kind = OBJECT_CENTRIC if layout == "sphere" else SCENE_CENTRIC
    if max_distance is None:
        max_distance = 12.0 if kind == OBJECT_CENTRIC else 2.0
    if supersample < 1:
        raise DatasetError("supersample must be >= 1")
    frames = [Frame(_render_frame(field, T, k, n_points, background, near, far, supersample), T) for T in poses]
    return Dataset(frames, k, kind, near, far, max_distance, tuple(background)), field


def _render_frame(field, pose, k, n_points, background, near, far, supersample):
    if supersample == 1:
        return render_image(field, pose, k, n_points, background, near=near, far=far)
    s = int(supersample)
    fine = Intrinsics(k.fx * s, k.fy * s, k.cx * s, k.cy * s, k.width * s, k.height * s)
    img = render_image(field, pose, fine, n_points, background, near=near, far=far)
    return img.reshape(k.height, s, k.width, s, 3).mean(axis=(1, 3))


def pose_range_from_dataset(d, margin=0.05, perturb_rot=0.1, perturb_trans=None):
    """Search range hugging the dataset poses, widened by ``margin`` of each span."""
    if not d.frames:
        raise DatasetError("empty dataset")
    if perturb_trans is None:
        perturb_trans = 0.05 * d.max_distance
    if d.kind == SCENE_CENTRIC:
        return PoseRange(SCENE_CENTRIC, anchors=[np.array(f.pose) for f in d.frames],
                         perturb_rot=perturb_rot, perturb_trans=perturb_trans)
    sph = []
    for i, fr in enumerate(d.frames):
        try:
            sph.append(pose_to_spherical(fr.pose).as_array())
        except PoseError as exc:
            raise DatasetError(f"frame {i}: {exc}") from None
    sph = np.array(sph)
    lo, hi = sph.min(axis=0), sph.max(axis=0)
    pad = margin * (hi - lo)
    lo, hi = lo - pad, hi + pad
    lim = np.pi / 2 - 1e-3
    return PoseRange(
        OBJECT_CENTRIC,
        theta=(lo[0], hi[0]),
        phi=(max(lo[1], -lim), min(hi[1], lim)),
        r=(max(lo[2], 1e-6), hi[2]),
        perturb_rot=perturb_rot,
        perturb_trans=perturb_trans,
    )
