"""Estimate one frame's pose with two strategies and watch the error fall."""
from nerfmcl import (FeatureConfig, LocalizerConfig, benchmark_dataset, localize, point_transform_error,
                     pose_error_report, pose_range_from_dataset)

ds, field = benchmark_dataset()
pr = pose_range_from_dataset(ds)
frame = ds.frames[2]

for strategy in ("orb", "mserrand"):
    cfg = LocalizerConfig(strategy=strategy, n_poses=45, n_pixels=100, n_pts=16, max_iter=20, seed=2,
                          features=FeatureConfig(mser_max_area=1500))
    top, trace = localize(field, frame.image, cfg, pr, ds.intrinsics, ds.near, ds.far)
    print(f"\n{strategy}")
    for rec in trace[::4] + [trace[-1]]:
        err = point_transform_error(frame.pose, rec.top_poses, d_max=ds.max_distance)
        print(f"  iter {rec.iteration:2d}  passes {rec.forward_passes_cum:>9,d}  point error {err:6.2f}%")
    rep = pose_error_report(frame.pose, [p.pose for p in top], ds.max_distance)
    print("  final:", {k: round(v, 2) for k, v in rep.as_dict().items() if isinstance(v, float)})
