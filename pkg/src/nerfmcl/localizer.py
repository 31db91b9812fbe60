"""Sampling-based camera pose estimation against a radiance field.

Each iteration renders the same sparse pixel set at every pose particle,
scores the particles by mean absolute colour error, turns errors into
weights with ``exp(-e / sigma_e)`` and resamples. Object-centric problems
resample with the cross-entropy method over (theta, phi, r); scene-centric
problems keep the best third and perturb copies of it.
"""
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .features import MODES, STRATEGIES, FeatureConfig, select_pixels
from .poses import SphericalPose, perturb_pose, pose_to_spherical, spherical_to_pose
from .radiance_field import ForwardPassLedger
from .renderer import check_pixels, pixel_rays, render_pixel_array, render_rays
from .scene_data import OBJECT_CENTRIC, SCENE_CENTRIC

__all__ = [
    "LocalizerConfig", "LocalizerError", "Particle", "IterationRecord", "SphericalPose",
    "spherical_to_pose", "pose_to_spherical", "init_particles", "evaluate_error",
    "evaluate_errors", "likelihoods", "weights_from_errors", "resample_cem",
    "resample_pick_perturb", "localize", "write_trace",
]

_INIT_TAG, _CEM_TAG, _PP_TAG = 11, 12, 13


class LocalizerError(ValueError):
    pass


@dataclass
class Particle:
    pose: np.ndarray
    spherical: np.ndarray = None  # (theta, phi, r) for object-centric particles
    weight: float = 1.0
    last_error: float = float("nan")


@dataclass
class LocalizerConfig:
    n_poses: int = 45
    n_pixels: int = 100
    n_pts: int = 16
    max_iter: int = 20
    sigma_e: float = 2.0
    n_t: int = 5
    strategy: str = "mserrand"
    mode: str = "pixel"
    resampler: str = "cem"
    cem_elite_frac: float = 0.25
    cem_var_floor: float = 1e-6
    keep_frac: float = 1.0 / 3.0
    perturb_rot: float = None  # None -> take from the pose range
    perturb_trans: float = None
    perturb_decay: float = 0.9
    seed: int = 0
    threads: int = 1
    background: tuple = (1.0, 1.0, 1.0)
    features: FeatureConfig = dc_field(default_factory=FeatureConfig)

    def validate(self):
        if not self.n_poses >= self.n_t >= 1:
            raise LocalizerError("need n_poses >= n_t >= 1")
        if self.max_iter < 1:
            raise LocalizerError("max_iter must be >= 1")
        if not self.sigma_e > 0:
            raise LocalizerError("sigma_e must be positive")
        if not 0 < self.cem_elite_frac <= 1:
            raise LocalizerError("cem_elite_frac must be in (0, 1]")
        if not 0 < self.keep_frac < 1:
            raise LocalizerError("keep_frac must be in (0, 1)")
        if self.strategy not in STRATEGIES:
            raise LocalizerError(f"unknown strategy {self.strategy!r}")
        if self.mode not in MODES:
            raise LocalizerError(f"unknown mode {self.mode!r}")
        if self.resampler not in ("cem", "pick_perturb"):
            raise LocalizerError(f"unknown resampler {self.resampler!r}")
        if self.n_pts < 2 or self.n_pixels < 1:
            raise LocalizerError("n_pts must be >= 2 and n_pixels >= 1")
        return self

    @property
    def effective_pixels(self):
        return self.n_pixels if self.mode == "pixel" else 9 * (self.n_pixels // 9)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "features"}
        d["background"] = list(self.background)
        d["features"] = dict(vars(self.features))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        feats = d.pop("features", None)
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "background" in known:
            known["background"] = tuple(known["background"])
        cfg = cls(**known)
        if feats:
            cfg.features = FeatureConfig(**feats)
        return cfg


@dataclass
class IterationRecord:
    iteration: int
    best_error: float
    mean_error: float
    forward_passes_cum: int
    top_pose: np.ndarray
    wall_time_ms: float
    top_poses: list = dc_field(default_factory=list)

    def to_json(self):
        return {
            "iteration": self.iteration,
            "best_error": self.best_error,
            "mean_error": self.mean_error,
            "forward_passes_cum": self.forward_passes_cum,
            "top_pose": np.asarray(self.top_pose).tolist(),
            "wall_time_ms": self.wall_time_ms,
        }


def _rng(seed, iteration, index, tag):
    return np.random.default_rng([seed, iteration, index, tag])


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _into_range(sph, pose_range):
    theta, phi, r = sph
    lo, hi = pose_range.theta
    if pose_range.theta_wraps:
        theta = _wrap(theta)
    else:
        theta = min(max(theta, lo), hi)
    phi = min(max(phi, pose_range.phi[0]), pose_range.phi[1])
    r = min(max(r, pose_range.r[0]), pose_range.r[1])
    return np.array([theta, phi, r])


def _from_spherical(sph, weight):
    pose = spherical_to_pose(SphericalPose(*sph))
    return Particle(pose, np.asarray(sph, dtype=float), weight)


def init_particles(pose_range, n_poses, seed=0, perturb_rot=None, perturb_trans=None):
    """Uniform draws over the range, all weighted 1 / n_poses."""
    w = 1.0 / n_poses
    out = []
    for i in range(n_poses):
        rng = _rng(seed, 0, i, _INIT_TAG)
        if pose_range.kind == OBJECT_CENTRIC:
            sph = np.array([rng.uniform(*pose_range.theta), rng.uniform(*pose_range.phi),
                            rng.uniform(*pose_range.r)])
            out.append(_from_spherical(sph, w))
        else:
            rot = pose_range.perturb_rot if perturb_rot is None else perturb_rot
            trans = pose_range.perturb_trans if perturb_trans is None else perturb_trans
            anchor = pose_range.anchors[rng.integers(len(pose_range.anchors))]
            out.append(Particle(perturb_pose(anchor, rng, rot, trans), None, w))
    return out


def _pixel_error(rendered, observed_px):
    per_channel = np.mean(np.abs(observed_px - rendered), axis=0)
    return float(np.sum(per_channel) / 3.0)


def evaluate_error(field, particle, observed, pixels, k, near, far, n_pts, ledger=None,
                   background=(1.0, 1.0, 1.0)):
    """Channel-averaged mean absolute error between observed and rendered pixels."""
    coords = np.asarray(getattr(pixels, "coords", pixels), dtype=int).reshape(-1, 2)
    rendered, _ = render_pixel_array(field, particle.pose, k, coords, near, far, n_pts, background, ledger)
    return _pixel_error(rendered, np.asarray(observed)[coords[:, 0], coords[:, 1], :3])


def _render_group(field, particles, observed_px, coords, k, near, far, n_pts, ledger, background):
    """Errors for several particles from one batched render of all their rays."""
    if not particles:
        return []
    rays = [pixel_rays(p.pose, k, coords) for p in particles]
    origins = np.concatenate([o for o, _ in rays])
    dirs = np.concatenate([d for _, d in rays])
    rgb, _ = render_rays(field, origins, dirs, near, far, n_pts, background, ledger)
    m = len(coords)
    return [_pixel_error(rgb[i * m:(i + 1) * m], observed_px) for i in range(len(particles))]


def evaluate_errors(field, particles, observed, pixels, k, near, far, n_pts, ledger=None,
                    background=(1.0, 1.0, 1.0), threads=1):
    """:func:`evaluate_error` for every particle; identical results for any thread count."""
    coords = check_pixels(k, np.asarray(getattr(pixels, "coords", pixels), dtype=int))
    observed_px = np.asarray(observed)[coords[:, 0], coords[:, 1], :3]
    args = (observed_px, coords, k, near, far, n_pts, ledger, background)
    if threads > 1 and len(particles) > 1:
        groups = [list(g) for g in np.array_split(np.arange(len(particles)), min(threads, len(particles)))]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda g: _render_group(field, [particles[i] for i in g], *args), groups))
        errors = [e for part in parts for e in part]
    else:
        errors = _render_group(field, list(particles), *args)
    return np.array(errors)


def likelihoods(errors, sigma_e=2.0):
    """Unnormalised weights exp(-e / sigma_e)."""
    return np.exp(-np.asarray(errors, dtype=float) / sigma_e)


def weights_from_errors(errors, sigma_e=2.0):
    errors = np.asarray(errors, dtype=float)
    if not np.all(np.isfinite(errors)) or np.any(errors < 0):
        raise LocalizerError("errors must be finite and non-negative")
    w = likelihoods(errors, sigma_e)
    return w / w.sum()


def _ranking(weights):
    """Indices by descending weight, ties in index order."""
    return np.argsort(-np.asarray(weights, dtype=float), kind="stable")


def resample_cem(particles, weights, elite_frac, n_poses, pose_range, seed=0, iteration=0, var_floor=1e-6):
    """Refit an independent Gaussian per spherical parameter to the elites.

    Azimuth uses the circular mean and wrapped deviations. The elite count
    is ceil(elite_frac * len(particles)); ``n_poses`` particles are drawn.
    """
    if pose_range.kind != OBJECT_CENTRIC or any(p.spherical is None for p in particles):
        raise LocalizerError("CEM resampling needs object-centric particles with spherical parameters")
    n_elite = max(1, math.ceil(elite_frac * len(particles)))
    elite_idx = _ranking(weights)[:n_elite]
    sph = np.array([particles[i].spherical for i in elite_idx])
    theta_mu = math.atan2(np.mean(np.sin(sph[:, 0])), np.mean(np.cos(sph[:, 0])))
    theta_var = np.mean(_wrap(sph[:, 0] - theta_mu) ** 2)
    mu = np.array([theta_mu, sph[:, 1].mean(), sph[:, 2].mean()])
    var = np.array([theta_var, sph[:, 1].var(), sph[:, 2].var()])
    std = np.sqrt(np.maximum(var, var_floor))
    w = 1.0 / n_poses
    out = []
    for i in range(n_poses):
        draw = _rng(seed, iteration, i, _CEM_TAG).normal(mu, std)
        out.append(_from_spherical(_into_range(draw, pose_range), w))
    return out


def resample_pick_perturb(particles, weights, keep_frac, perturb_rot, perturb_trans, n_poses, seed=0,
                          iteration=0):
    """Keep the top floor(keep_frac * n_poses) poses; fill with perturbed copies."""
    n_keep = math.floor(keep_frac * n_poses)
    if n_keep < 1:
        raise LocalizerError("keep_frac * n_poses must keep at least one particle")
    w = 1.0 / n_poses
    kept = [replace(particles[i], weight=w) for i in _ranking(weights)[:n_keep]]
    out = list(kept)
    for i in range(n_keep, n_poses):
        rng = _rng(seed, iteration, i, _PP_TAG)
        src = kept[rng.integers(n_keep)]
        if perturb_rot == 0 and perturb_trans == 0:
            out.append(replace(src, weight=w))
            continue
        out.append(Particle(perturb_pose(src.pose, rng, perturb_rot, perturb_trans), None, w))
    return out


def localize(field, observed, config, pose_range, k, near, far, ledger=None, pixel_selector=None):
    """Run the estimation loop; returns (best n_t particles, per-iteration trace).

    The last iteration is evaluated and weighted but not resampled, so the
    returned particles are the best of the final evaluated set.
    """
    config.validate()
    if config.resampler == "cem" and pose_range.kind == SCENE_CENTRIC:
        raise LocalizerError("CEM resampling is only defined for object-centric ranges")
    ledger = ledger if ledger is not None else ForwardPassLedger()
    start_count = ledger.count
    rot0 = pose_range.perturb_rot if config.perturb_rot is None else config.perturb_rot
    trans0 = pose_range.perturb_trans if config.perturb_trans is None else config.perturb_trans
    select = pixel_selector or (lambda it: select_pixels(
        config.strategy, observed, config.n_pixels, config.mode, it, config.seed, config.features))

    particles = init_particles(pose_range, config.n_poses, config.seed, rot0, trans0)
    trace = []
    t0 = time.perf_counter()
    for it in range(config.max_iter):
        pixels = select(it)
        errors = evaluate_errors(field, particles, observed, pixels, k, near, far, config.n_pts, ledger,
                                 config.background, config.threads)
        weights = weights_from_errors(errors, config.sigma_e)
        for p, e, w in zip(particles, errors, weights):
            p.last_error, p.weight = float(e), float(w)
        order = _ranking(weights)
        trace.append(IterationRecord(
            iteration=it,
            best_error=float(errors[order[0]]),
            mean_error=float(errors.mean()),
            forward_passes_cum=ledger.count - start_count,
            top_pose=np.array(particles[order[0]].pose),
            wall_time_ms=(time.perf_counter() - t0) * 1000.0,
            top_poses=[np.array(particles[i].pose) for i in order[:config.n_t]],
        ))
        if it == config.max_iter - 1:
            break
        if config.resampler == "cem":
            particles = resample_cem(particles, weights, config.cem_elite_frac, config.n_poses, pose_range,
                                     config.seed, it + 1, config.cem_var_floor)
        else:
            decay = config.perturb_decay**it
            particles = resample_pick_perturb(particles, weights, config.keep_frac, rot0 * decay,
                                              trans0 * decay, config.n_poses, config.seed, it + 1)
    top = [particles[i] for i in _ranking([p.weight for p in particles])[:config.n_t]]
    return top, trace


def write_trace(trace, path):
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_json()) + "\n")
