"""Ray construction and volume-rendering quadrature.

Pixel centres sit at (col + 0.5, row + 0.5). A pixel's camera-frame ray is
((col + 0.5 - cx) / fx, -(row + 0.5 - cy) / fy, -1), so the ray parameter t
is depth along the optical axis. Samples are placed deterministically at
segment midpoints and compositing runs front to back, one sample at a time.
"""
from dataclasses import dataclass

import numpy as np

from .radiance_field import query_batch

DEFAULT_CHUNK = 30000  # field points per batched query


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    n_points: int

    def __post_init__(self):
        if not self.t_near < self.t_far:
            raise RenderError(f"t_near ({self.t_near}) must be < t_far ({self.t_far})")
        if self.n_points < 2:
            raise RenderError("a ray needs at least 2 sample points")
        if not np.any(np.asarray(self.direction) != 0):
            raise RenderError("ray direction must be non-zero")


@dataclass(frozen=True)
class RenderedPixel:
    row: int
    col: int
    rgb: np.ndarray
    accumulated_alpha: float


def camera_directions(k, coords):
    """Camera-frame (unnormalised) directions for an (N, 2) array of (row, col)."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    x = (coords[:, 1] + 0.5 - k.cx) / k.fx
    y = -(coords[:, 0] + 0.5 - k.cy) / k.fy
    return np.stack([x, y, -np.ones_like(x)], axis=1)


def pixel_rays(pose, k, coords):
    """World-frame origins and directions for pixels seen from ``pose``."""
    pose = np.asarray(pose, dtype=float)
    dirs = camera_directions(k, coords) @ pose[:3, :3].T
    origins = np.broadcast_to(pose[:3, 3], dirs.shape).copy()
    return origins, dirs


def check_pixels(k, coords):
    coords = np.asarray(coords).reshape(-1, 2)
    bad = (coords[:, 0] < 0) | (coords[:, 0] >= k.height) | (coords[:, 1] < 0) | (coords[:, 1] >= k.width)
    if np.any(bad):
        r, c = coords[np.argmax(bad)]
        raise RenderError(f"pixel ({r}, {c}) outside {k.height}x{k.width} image")
    return coords


def generate_ray(pose, k, row, col, near, far, n_points):
    check_pixels(k, [(row, col)])
    origins, dirs = pixel_rays(pose, k, [(row, col)])
    return Ray(origins[0], dirs[0], float(near), float(far), int(n_points))


def sample_ts(t_near, t_far, n_points):
    step = (t_far - t_near) / n_points
    return t_near + (np.arange(n_points) + 0.5) * step


def sample_points(ray):
    """Midpoint samples ``t_i`` and their positions ``o + t_i d``."""
    t = sample_ts(ray.t_near, ray.t_far, ray.n_points)
    return t, ray.origin[None, :] + t[:, None] * ray.direction[None, :]


def segment_lengths(t, t_far):
    """Gap to the next sample; the last segment runs to ``t_far``."""
    return np.append(np.diff(t), t_far - t[-1])


def composite(rgb, sigma, dists, background):
    """Front-to-back alpha compositing.

    ``rgb`` is (R, S, 3), ``sigma`` and ``dists`` are (R, S) with dists in
    scene units. Returns per-ray colour (R, 3) and accumulated alpha (R,).
    """
    n_rays, n_samples = sigma.shape
    trans = np.ones(n_rays)
    out = np.zeros((n_rays, 3))
    for i in range(n_samples):
        alpha = 1.0 - np.exp(-sigma[:, i] * dists[:, i])
        out += (trans * alpha)[:, None] * rgb[:, i]
        trans = trans * (1.0 - alpha)
    out += trans[:, None] * np.asarray(background, dtype=float)
    return np.clip(out, 0.0, 1.0), 1.0 - trans


def render_rays(field, origins, dirs, near, far, n_points, background=(1.0, 1.0, 1.0),
                ledger=None, chunk=DEFAULT_CHUNK):
    """Render R rays; returns colours (R, 3) and accumulated alphas (R,).

    The field is queried in batches of at most ``chunk`` points (whole rays
    per batch). Results do not depend on the chunk size.
    """
    if not near < far:
        raise RenderError(f"near ({near}) must be < far ({far})")
    if n_points < 2:
        raise RenderError("a ray needs at least 2 sample points")
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n_rays = len(origins)
    t = sample_ts(near, far, n_points)
    delta = segment_lengths(t, far)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise RenderError("ray direction must be non-zero")
    unit = dirs / norms[:, None]
    out_rgb = np.zeros((n_rays, 3))
    out_acc = np.zeros(n_rays)
    rays_per_chunk = max(1, chunk // n_points)
    for start in range(0, n_rays, rays_per_chunk):
        sl = slice(start, start + rays_per_chunk)
        o, d, u = origins[sl], dirs[sl], unit[sl]
        pts = o[:, None, :] + t[None, :, None] * d[:, None, :]
        vdirs = np.broadcast_to(u[:, None, :], pts.shape)
        rgb, sigma = query_batch(field, pts.reshape(-1, 3), vdirs.reshape(-1, 3), ledger)
        m = len(o)
        dists = delta[None, :] * norms[sl, None]
        out_rgb[sl], out_acc[sl] = composite(
            rgb.reshape(m, n_points, 3), sigma.reshape(m, n_points), dists, background
        )
    return out_rgb, out_acc


def render_pixel(field, ray, background=(1.0, 1.0, 1.0), ledger=None, row=-1, col=-1):
    rgb, acc = render_rays(field, ray.origin[None], ray.direction[None], ray.t_near, ray.t_far,
                           ray.n_points, background, ledger)
    return RenderedPixel(row, col, rgb[0], float(acc[0]))


def render_pixel_array(field, pose, k, coords, near, far, n_points, background=(1.0, 1.0, 1.0),
                       ledger=None, chunk=DEFAULT_CHUNK):
    """Array form of :func:`render_pixels`: colours (N, 3) and alphas (N,)."""
    coords = check_pixels(k, coords)
    origins, dirs = pixel_rays(pose, k, coords)
    return render_rays(field, origins, dirs, near, far, n_points, background, ledger, chunk)


def render_pixels(field, pose, k, pixels, near, far, n_points, background=(1.0, 1.0, 1.0),
                  ledger=None, chunk=DEFAULT_CHUNK):
    coords = getattr(pixels, "coords", pixels)
    coords = np.asarray(coords, dtype=int).reshape(-1, 2)
    rgb, acc = render_pixel_array(field, pose, k, coords, near, far, n_points, background, ledger, chunk)
    return [RenderedPixel(int(r), int(c), rgb[i], float(acc[i])) for i, (r, c) in enumerate(coords)]


def render_image(field, pose, k, n_points, background=(1.0, 1.0, 1.0), ledger=None,
                 near=2.0, far=6.0, chunk=DEFAULT_CHUNK):
    rows, cols = np.meshgrid(np.arange(k.height), np.arange(k.width), indexing="ij")
    coords = np.stack([rows.ravel(), cols.ravel()], axis=1)
    rgb, _ = render_pixel_array(field, pose, k, coords, near, far, n_points, background, ledger, chunk)
    return rgb.reshape(k.height, k.width, 3)
