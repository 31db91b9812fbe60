"""Experiment grids, likelihood sweeps and summary tables.

Result rows are CSV with a ``schema_version`` column. Grids are resumable:
rows whose key already exists in the output file are not recomputed.
"""
import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, fields
from pathlib import Path

import numpy as np

from .features import FeatureConfig, select_pixels
from .localizer import LocalizerConfig, evaluate_error, likelihoods, localize, Particle
from .metrics import pose_error_report, point_transform_error
from .poses import rotate_about_camera_axis
from .scene_data import pose_range_from_dataset

SCHEMA_VERSION = 1
KEY_FIELDS = ("dataset", "strategy", "mode", "n_pixels", "n_pts", "n_poses", "resampler", "seed")


@dataclass
class GridSpec:
    n_pixels: list = dc_field(default_factory=lambda: [50, 100])
    n_pts: list = dc_field(default_factory=lambda: [16, 64])
    n_poses: list = dc_field(default_factory=lambda: [15, 45])
    strategies: list = dc_field(default_factory=lambda: ["orb", "orbrand", "randfix", "rand", "mser", "mserrand"])
    modes: list = dc_field(default_factory=lambda: ["pixel"])
    seeds: int = 10
    dataset: str = "synthetic"
    resampler: str = "cem"
    frames: list = None  # observed frame for seed s is frames[s % len(frames)]
    threshold_pct: float = 10.0
    base: dict = dc_field(default_factory=dict)  # extra LocalizerConfig fields

    def __post_init__(self):
        for name in ("n_pixels", "n_pts", "n_poses", "strategies", "modes"):
            if not getattr(self, name):
                raise ValueError(f"grid list {name!r} must be non-empty")
        if self.seeds < 1:
            raise ValueError("need at least one seed per cell")

    def cells(self):
        """Every (strategy, mode, n_pixels, n_pts, n_poses, seed) in canonical order."""
        for strategy in self.strategies:
            for mode in self.modes:
                for n_pixels in self.n_pixels:
                    for n_pts in self.n_pts:
                        for n_poses in self.n_poses:
                            for seed in range(self.seeds):
                                yield strategy, mode, n_pixels, n_pts, n_poses, seed

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ResultRow:
    dataset: str
    strategy: str
    mode: str
    n_pixels: int
    n_pts: int
    n_poses: int
    resampler: str
    seed: int
    frame: int = -1
    point_error_pct: float = float("nan")
    translation_error_pct: float = float("nan")
    rotation_error_pct: float = float("nan")
    forward_passes: int = 0
    wall_time_ms: float = 0.0
    converged: bool = False
    first_crossing_passes: int = -1  # -1: never at or below the threshold
    error: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def key(self):
        return tuple(str(getattr(self, f)) for f in KEY_FIELDS)


COLUMNS = [f.name for f in fields(ResultRow)]
_INT = {"n_pixels", "n_pts", "n_poses", "seed", "frame", "forward_passes", "first_crossing_passes", "schema_version"}
_FLOAT = {"point_error_pct", "translation_error_pct", "rotation_error_pct", "wall_time_ms"}


def _parse_row(d):
    out = {}
    for k in COLUMNS:
        v = d.get(k, "")
        if k in _INT:
            out[k] = int(v)
        elif k in _FLOAT:
            out[k] = float(v)
        elif k == "converged":
            out[k] = v in ("1", "True", "true")
        else:
            out[k] = v
    return ResultRow(**out)


def _format_row(row):
    d = asdict(row)
    d["converged"] = int(row.converged)
    for k in _FLOAT:
        d[k] = repr(float(d[k]))
    return d


def read_rows(path):
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [_parse_row(d) for d in csv.DictReader(fh)]


def expected_forward_passes(max_iter, n_poses, n_pixels, mode, n_pts):
    effective = n_pixels if mode == "pixel" else 9 * (n_pixels // 9)
    return max_iter * n_poses * effective * n_pts


def run_cell(field, dataset, spec, strategy, mode, n_pixels, n_pts, n_poses, seed, pose_range=None):
    """One localization run scored against its frame's ground truth."""
    frames = spec.frames if spec.frames else list(range(len(dataset)))
    frame = frames[seed % len(frames)]
    row = ResultRow(spec.dataset, strategy, mode, n_pixels, n_pts, n_poses, spec.resampler, seed, frame)
    try:
        base = dict(spec.base)
        cfg = LocalizerConfig.from_dict({**base, "strategy": strategy, "mode": mode, "n_pixels": n_pixels,
                                         "n_pts": n_pts, "n_poses": n_poses, "seed": seed,
                                         "resampler": spec.resampler, "threads": 1})
        if "background" not in base:
            cfg.background = dataset.background
        pr = pose_range if pose_range is not None else pose_range_from_dataset(dataset)
        gt = dataset.frames[frame].pose
        t0 = time.perf_counter()
        top, trace = localize(field, dataset.frames[frame].image, cfg, pr, dataset.intrinsics,
                              dataset.near, dataset.far)
        row.wall_time_ms = (time.perf_counter() - t0) * 1000.0
        rep = pose_error_report(gt, [p.pose for p in top], dataset.max_distance)
        row.point_error_pct = rep.point_error_pct
        row.translation_error_pct = rep.translation_error_pct
        row.rotation_error_pct = rep.rotation_error_pct
        row.forward_passes = trace[-1].forward_passes_cum
        row.converged = rep.point_error_pct <= spec.threshold_pct
        for rec in trace:
            if point_transform_error(gt, rec.top_poses, d_max=dataset.max_distance) <= spec.threshold_pct:
                row.first_crossing_passes = rec.forward_passes_cum
                break
        want = expected_forward_passes(cfg.max_iter, n_poses, n_pixels, mode, n_pts)
        if row.forward_passes != want:
            raise RuntimeError(f"ledger audit failed: {row.forward_passes} != {want}")
    except Exception as exc:  # recorded per row; the grid keeps going
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_grid(spec, dataset, field, out_csv=None, threads=1, pose_range=None):
    """Run every missing (cell, seed) and append it to ``out_csv``.

    Rows are written in canonical grid order regardless of ``threads``.
    Returns all rows for this grid (existing and new) in that order.
    """
    existing = {r.key: r for r in read_rows(out_csv)} if out_csv else {}
    todo = []
    for cell in spec.cells():
        strategy, mode, n_pixels, n_pts, n_poses, seed = cell
        key = tuple(str(v) for v in (spec.dataset, strategy, mode, n_pixels, n_pts, n_poses, spec.resampler, seed))
        if key not in existing:
            todo.append(cell)

    def work(cell):
        return run_cell(field, dataset, spec, *cell, pose_range=pose_range)

    fh = writer = None
    if out_csv:
        out_csv = Path(out_csv)
        new_file = not out_csv.exists() or out_csv.stat().st_size == 0
        fh = open(out_csv, "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        if new_file:
            writer.writeheader()
    try:
        if threads > 1:
            pool = ThreadPoolExecutor(max_workers=threads)
            results = pool.map(work, todo)
        else:
            pool = None
            results = map(work, todo)
        for row in results:  # map yields in submission order
            existing[row.key] = row
            if writer:
                writer.writerow(_format_row(row))
                fh.flush()
        if pool:
            pool.shutdown()
    finally:
        if fh:
            fh.close()
    ordered = []
    for strategy, mode, n_pixels, n_pts, n_poses, seed in spec.cells():
        key = tuple(str(v) for v in (spec.dataset, strategy, mode, n_pixels, n_pts, n_poses, spec.resampler, seed))
        ordered.append(existing[key])
    return ordered


# -- aggregation --------------------------------------------------------------


def mean_ci(values, z=1.96):
    """Mean and half-width of the normal-approximation 95% interval."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if len(v) == 0:
        return float("nan"), float("nan"), 0
    half = z * v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return float(v.mean()), float(half), len(v)


def aggregate(rows, by=("strategy", "mode"), metric="point_error_pct"):
    """{group key: (mean, ci half-width, n)} over rows without errors."""
    groups = {}
    for r in rows:
        if r.error:
            continue
        groups.setdefault(tuple(getattr(r, b) for b in by), []).append(getattr(r, metric))
    return {k: mean_ci(v) for k, v in sorted(groups.items())}


def format_passes(n):
    if n is None:
        return "-"
    if n < 1000:
        return str(int(n))
    if n < 1_000_000:
        return f"{n / 1000:.3g}k"
    return f"{n / 1_000_000:.3g}m"


def passes_to_threshold(rows, threshold_pct=10.0):
    """Minimum first-crossing forward passes per (strategy, mode, dataset).

    Only rows whose final error is at or below the threshold count; groups
    with none map to ``None`` (printed as "-").
    """
    out = {}
    for r in rows:
        key = (r.strategy, r.mode, r.dataset)
        out.setdefault(key, None)
        if r.error or not r.point_error_pct <= threshold_pct or r.first_crossing_passes < 0:
            continue
        if out[key] is None or r.first_crossing_passes < out[key]:
            out[key] = r.first_crossing_passes
    return dict(sorted(out.items()))


def heatmap_table(rows, n_pts, mode, metric="point_error_pct"):
    """Mean metric per strategy (rows) and n_poses x n_pixels (columns)."""
    sel = [r for r in rows if r.n_pts == n_pts and r.mode == mode and not r.error]
    strategies = list(dict.fromkeys(r.strategy for r in sel))
    cols = sorted({(r.n_poses, r.n_pixels) for r in sel})
    grid = np.full((len(strategies), len(cols)), np.nan)
    for i, s in enumerate(strategies):
        for j, (npo, npx) in enumerate(cols):
            vals = [getattr(r, metric) for r in sel if r.strategy == s and r.n_poses == npo and r.n_pixels == npx]
            if vals:
                grid[i, j] = float(np.mean(vals))
    return strategies, [f"{a}x{b}" for a, b in cols], grid


def heatmap_csv(strategies, columns, grid):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy"] + columns)
    for s, vals in zip(strategies, grid):
        w.writerow([s] + [f"{v:.2f}" if np.isfinite(v) else "" for v in vals])
    return buf.getvalue()


def _color(v, vmax):
    t = 0.0 if not np.isfinite(v) else min(max(v / vmax, 0.0), 1.0)
    r, g, b = int(255 * t), int(255 * (1 - abs(2 * t - 1)) * 0.8), int(255 * (1 - t))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(strategies, columns, grid, title="", vmax=None):
    cw, ch, left, top = 64, 28, 90, 40
    finite = grid[np.isfinite(grid)]
    vmax = vmax or (float(finite.max()) if finite.size else 1.0) or 1.0
    width, height = left + cw * len(columns) + 10, top + ch * len(strategies) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<text x="4" y="14">{title}</text>']
    for j, c in enumerate(columns):
        out.append(f'<text x="{left + j * cw + cw / 2}" y="{top - 6}" text-anchor="middle">{c}</text>')
    for i, s in enumerate(strategies):
        y = top + i * ch
        out.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4}" text-anchor="end">{s}</text>')
        for j, v in enumerate(grid[i]):
            x = left + j * cw
            label = f"{v:.1f}" if np.isfinite(v) else "-"
            out.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{_color(v, vmax)}" stroke="#fff"/>')
            out.append(f'<text x="{x + cw / 2}" y="{y + ch / 2 + 4}" text-anchor="middle">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_table(rows):
    """Table-1 style CSV: mean +- 95% CI of the point error per strategy and mode."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "mode", "strategy", "mean_pct", "ci95_pct", "n",
                "translation_mean_pct", "rotation_mean_pct"])
    pe = aggregate(rows, ("dataset", "mode", "strategy"))
    te = aggregate(rows, ("dataset", "mode", "strategy"), "translation_error_pct")
    re_ = aggregate(rows, ("dataset", "mode", "strategy"), "rotation_error_pct")
    for key, (m, ci, n) in pe.items():
        w.writerow(list(key) + [f"{m:.2f}", f"{ci:.2f}", n, f"{te[key][0]:.2f}", f"{re_[key][0]:.2f}"])
    return buf.getvalue()


def passes_table(rows, threshold_pct=10.0):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "mode", "dataset", "forward_passes"])
    for (s, m, d), n in passes_to_threshold(rows, threshold_pct).items():
        w.writerow([s, m, d, format_passes(n)])
    return buf.getvalue()


def report(csv_paths, out_dir, threshold_pct=10.0):
    """Write summary tables and heatmaps for the union of the given CSVs.

    Output depends only on the set of rows, not on file order.
    """
    rows = {}
    for p in sorted(str(p) for p in csv_paths):
        for r in read_rows(p):
            rows[r.key] = r
    rows = [rows[k] for k in sorted(rows)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        (out_dir / name).write_text(text)
        written.append(out_dir / name)

    put("summary.csv", summary_table(rows))
    put("passes_to_threshold.csv", passes_table(rows, threshold_pct))
    for n_pts in sorted({r.n_pts for r in rows}):
        for mode in sorted({r.mode for r in rows}):
            strategies, cols, grid = heatmap_table(rows, n_pts, mode)
            if not strategies:
                continue
            stem = f"heatmap_{mode}_{n_pts}pts"
            put(stem + ".csv", heatmap_csv(strategies, cols, grid))
            put(stem + ".svg", heatmap_svg(strategies, cols, grid, f"point error % ({mode}, {n_pts} pts/ray)"))
    return written


# -- likelihood sweeps --------------------------------------------------------


@dataclass
class LikelihoodCurve:
    strategy: str
    angles_deg: np.ndarray
    errors: np.ndarray
    likelihood: np.ndarray  # exp(-e / sigma_e)

    @property
    def normalized(self):
        return self.likelihood / self.likelihood.max()

    def fwhm(self):
        return fwhm(self.angles_deg, self.likelihood)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "angle_deg", "error", "likelihood", "normalized"])
        for a, e, l, n in zip(self.angles_deg, self.errors, self.likelihood, self.normalized):
            w.writerow([self.strategy, f"{a:.4f}", repr(float(e)), repr(float(l)), repr(float(n))])
        return buf.getvalue()


def fwhm(x, y):
    """Full width at half maximum of the peak of a sampled curve.

    The curve is first rescaled to [0, 1] by its own min and max (raw
    likelihoods from exp(-e / sigma_e) never fall to half of the peak).
    Crossings are located by linear interpolation; a side that never drops
    below one half is censored at the end of the sampled range.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = y.min(), y.max()
    if hi == lo:
        return float(x[-1] - x[0])
    z = (y - lo) / (hi - lo)
    peak = int(np.argmax(z))
    left = x[0]
    for i in range(peak, 0, -1):
        if z[i - 1] < 0.5:
            left = x[i - 1] + (0.5 - z[i - 1]) / (z[i] - z[i - 1]) * (x[i] - x[i - 1])
            break
    right = x[-1]
    for i in range(peak, len(x) - 1):
        if z[i + 1] < 0.5:
            right = x[i] + (z[i] - 0.5) / (z[i] - z[i + 1]) * (x[i + 1] - x[i])
            break
    return float(right - left)


def likelihood_curve(field, dataset, frame_index, strategy, n_pixels=1000, axis="x", range_deg=30.0,
                     step_deg=1.0, n_pts=64, seed=0, sigma_e=2.0, features=FeatureConfig(), mode="pixel"):
    """Likelihood of the frame's pixels as its pose is rotated about a camera axis."""
    if step_deg <= 0:
        raise ValueError("step must be positive")
    frame = dataset.frames[frame_index]
    pixels = select_pixels(strategy, frame.image, n_pixels, mode, 0, seed, features)
    angles = np.arange(-range_deg, range_deg + step_deg / 2, step_deg)
    errors = []
    for a in angles:
        pose = rotate_about_camera_axis(frame.pose, axis, np.radians(a))
        errors.append(evaluate_error(field, Particle(pose), frame.image, pixels, dataset.intrinsics,
                                     dataset.near, dataset.far, n_pts, background=dataset.background))
    errors = np.array(errors)
    return LikelihoodCurve(strategy, angles, errors, likelihoods(errors, sigma_e))
