"""Command line entry point: ``python -m nerfmcl <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable manifest,
field or CSV, invalid configuration values).
"""
import argparse
import csv
import json
import sys
from pathlib import Path

from .features import FeatureConfig, FeatureError, feature_pool, select_pixels, to_grayscale
from .harness import GridSpec, likelihood_curve, report, run_grid
from .localizer import LocalizerConfig, LocalizerError, localize, write_trace
from .metrics import pose_error_report
from .radiance_field import FieldError
from .renderer import RenderError, render_image
from .scene_data import (DatasetError, RandomMlpScene, generate_synthetic_scene, load_field, load_manifest,
                         pose_range_from_dataset, save_field, save_manifest, sphere_and_box_scene,
                         write_png)

DATA_ERRORS = (DatasetError, FieldError, FeatureError, LocalizerError, RenderError, OSError,
               json.JSONDecodeError, KeyError, TypeError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(path):
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DatasetError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise DatasetError(f"{path}: config must be a JSON object")
    return cfg


def _localizer_config(args, cfg, dataset):
    d = dict(cfg.get("localizer", {}))
    for name in ("strategy", "mode", "n_poses", "n_pixels", "n_pts", "max_iter", "resampler"):
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    d["seed"] = args.seed
    d["threads"] = args.threads
    d.setdefault("background", list(dataset.background))
    return LocalizerConfig.from_dict(d)


def _data(args):
    data = Path(args.data)
    return load_manifest(data / "manifest.json"), load_field(data)


def _frame(dataset, i):
    if not 0 <= i < len(dataset):
        raise DatasetError(f"frame {i} out of range (dataset has {len(dataset)} frames)")
    return dataset.frames[i]


def cmd_generate_scene(args, cfg, out):
    opts = dict(cfg.get("scene", {}))
    if args.scene == "sphere-and-box":
        spec = sphere_and_box_scene()
    else:
        spec = RandomMlpScene(args.seed)
    dataset, field = generate_synthetic_scene(
        spec, args.views, args.size, args.seed, supersample=args.supersample,
        radius=tuple(opts.get("radius", (3.5, 4.5))), layout=opts.get("layout", "sphere"))
    save_manifest(dataset, out)
    save_field(field, out)
    print(f"wrote {len(dataset)} frames to {out}")


def cmd_render(args, cfg, out):
    dataset, field = _data(args)
    frame = _frame(dataset, args.frame)
    img = render_image(field, frame.pose, dataset.intrinsics, args.n_pts, dataset.background,
                       near=dataset.near, far=dataset.far)
    path = out / f"render_{args.frame:03d}.png"
    write_png(img, path)
    print(path)


def cmd_detect_features(args, cfg, out):
    """Write the detector pools (corner and stable-region) and the selected pixels."""
    dataset = load_manifest(Path(args.data) / "manifest.json")
    frame = _frame(dataset, args.frame)
    feats = FeatureConfig(**cfg.get("localizer", {}).get("features", {}))
    gray = to_grayscale(frame.image)
    pool_path = out / f"pool_{args.frame:03d}.csv"
    with open(pool_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "score", "detector"])
        for detector in ("corner", "stable-region"):
            pool = feature_pool(gray, detector, args.budget, feats)
            for (r, c), sc in zip(pool.coords.tolist(), pool.scores.tolist()):
                w.writerow([r, c, repr(sc), detector])
    px = select_pixels(args.strategy, frame.image, args.budget, args.mode or "pixel", 0, args.seed, feats)
    stem = f"pixels_{args.strategy}_{args.frame:03d}"
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col"])
        w.writerows(px.coords.tolist())
    overlay = frame.image.copy()
    overlay[px.coords[:, 0], px.coords[:, 1]] = (1.0, 0.0, 1.0)
    write_png(overlay, out / f"{stem}.png")
    print(f"pools -> {pool_path}")
    print(f"{len(px)} pixels ({px.n_filled} random fill) -> {out / (stem + '.csv')}")


def cmd_localize(args, cfg, out):
    dataset, field = _data(args)
    frame = _frame(dataset, args.frame)
    config = _localizer_config(args, cfg, dataset)
    top, trace = localize(field, frame.image, config, pose_range_from_dataset(dataset), dataset.intrinsics,
                          dataset.near, dataset.far)
    rep = pose_error_report(frame.pose, [p.pose for p in top], dataset.max_distance)
    trace_path = out / f"trace_{args.frame:03d}_seed{args.seed}.jsonl"
    write_trace(trace, trace_path)
    print(json.dumps({**rep.as_dict(), "forward_passes": trace[-1].forward_passes_cum,
                      "trace": str(trace_path)}, indent=2))


def cmd_grid(args, cfg, out):
    dataset, field = _data(args)
    grid = dict(cfg.get("grid", {}))
    grid.setdefault("dataset", Path(args.data).resolve().name)
    base = dict(cfg.get("localizer", {}))
    base.setdefault("background", list(dataset.background))
    spec = GridSpec.from_dict({**grid, "base": {**base, **grid.get("base", {})}})
    path = out / "results.csv"
    rows = run_grid(spec, dataset, field, path, threads=args.threads)
    failed = sum(1 for r in rows if r.error)
    print(f"{len(rows)} rows in {path} ({failed} failed)")


def cmd_likelihood_curve(args, cfg, out):
    dataset, field = _data(args)
    feats = FeatureConfig(**cfg.get("localizer", {}).get("features", {}))
    for strategy in args.strategies:
        c = likelihood_curve(field, dataset, args.frame, strategy, args.budget, args.axis, args.range_deg,
                             args.step_deg, args.n_pts or 64, args.seed, features=feats)
        (out / f"likelihood_{strategy}.csv").write_text(c.to_csv())
        print(f"{strategy:9s} fwhm {c.fwhm():.3f} deg")


def cmd_report(args, cfg, out):
    for p in args.csv:
        if not Path(p).is_file():
            raise DatasetError(f"results CSV not found: {p}")
    for path in report(args.csv, out, cfg.get("grid", {}).get("threshold_pct", 10.0)):
        print(path)


def build_parser():
    def global_flags(suppress):
        # flags may appear before or after the command; the subparser copies
        # must not overwrite values already parsed at the top level
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = _Parser(add_help=False)
        g.add_argument("--seed", type=int, default=d(0))
        g.add_argument("--threads", type=int, default=d(1))
        g.add_argument("--config", default=d(None), help="JSON with optional 'localizer', 'grid' and 'scene' sections")
        g.add_argument("--out", default=d("."), help="output directory")
        return g

    common = global_flags(True)
    p = _Parser(prog="nerfmcl", description="Sampling-based camera pose estimation against radiance fields.",
                parents=[global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-scene", parents=[common], help="render a synthetic dataset and store its field")
    g.add_argument("--scene", choices=["sphere-and-box", "random-mlp"], default="sphere-and-box")
    g.add_argument("--views", type=int, default=20)
    g.add_argument("--size", type=int, default=100)
    g.add_argument("--supersample", type=int, default=3)
    g.set_defaults(func=cmd_generate_scene)

    def with_data(name, help_, func):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--data", required=True, help="directory with manifest.json and field.json/field.weights")
        s.set_defaults(func=func)
        return s

    s = with_data("render", "render one frame's pose to PNG", cmd_render)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--n-pts", dest="n_pts", type=int, default=64)

    s = with_data("detect-features", "select pixels for one frame", cmd_detect_features)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--strategy", default="mser")
    s.add_argument("--budget", type=int, default=100)
    s.add_argument("--mode", choices=["pixel", "patch"])

    s = with_data("localize", "estimate one frame's pose", cmd_localize)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--strategy")
    s.add_argument("--mode", choices=["pixel", "patch"])
    s.add_argument("--n-poses", dest="n_poses", type=int)
    s.add_argument("--n-pixels", dest="n_pixels", type=int)
    s.add_argument("--n-pts", dest="n_pts", type=int)
    s.add_argument("--max-iter", dest="max_iter", type=int)
    s.add_argument("--resampler", choices=["cem", "pick_perturb"])

    with_data("grid", "run (or resume) an experiment grid into results.csv", cmd_grid)

    s = with_data("likelihood-curve", "sweep a rotation about a camera axis", cmd_likelihood_curve)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--strategies", nargs="+", default=["orb", "mser"])
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--axis", choices=["x", "y", "z"], default="x")
    s.add_argument("--range-deg", dest="range_deg", type=float, default=30.0)
    s.add_argument("--step-deg", dest="step_deg", type=float, default=1.0)
    s.add_argument("--n-pts", dest="n_pts", type=int)

    s = sub.add_parser("report", parents=[common], help="summary tables and heatmaps from result CSVs")
    s.add_argument("csv", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("nerfmcl: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        cfg = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except DATA_ERRORS as exc:
        print(f"nerfmcl: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
