import csv

import numpy as np
import pytest

from nerfmcl.features import FeatureConfig
from nerfmcl.harness import (COLUMNS, GridSpec, ResultRow, aggregate, expected_forward_passes, format_passes, fwhm,
                             heatmap_table, likelihood_curve, mean_ci, passes_to_threshold, read_rows, report,
                             run_grid)

BASE = {"max_iter": 3, "features": {"mser_max_area": 1500}}


def small_spec(**kw):
    d = dict(n_pixels=[20], n_pts=[8], n_poses=[6], strategies=["rand"], seeds=3, dataset="exact", base=BASE)
    d.update(kw)
    return GridSpec(**d)


def stable(rows):
    return [{k: v for k, v in vars(r).items() if k != "wall_time_ms"} for r in rows]


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(n_pixels=[])
    with pytest.raises(ValueError):
        GridSpec(seeds=0)
    assert len(list(GridSpec().cells())) == 2 * 2 * 2 * 6 * 1 * 10


def test_one_cell_three_seeds(tmp_path, exact_scene):
    ds, field = exact_scene
    rows = run_grid(small_spec(), ds, field, tmp_path / "r.csv")
    assert len(rows) == 3 and [r.seed for r in rows] == [0, 1, 2]
    assert [r.frame for r in rows] == [0, 1, 2]
    for r in rows:
        assert not r.error
        assert r.forward_passes == expected_forward_passes(3, 6, 20, "pixel", 8) == 3 * 6 * 20 * 8
        assert r.point_error_pct >= 0 and r.schema_version == 1
        assert r.converged == (r.point_error_pct <= 10.0)
        if r.first_crossing_passes >= 0:
            assert r.first_crossing_passes in (960, 1920, 2880)
    with open(tmp_path / "r.csv") as fh:
        assert next(csv.reader(fh)) == COLUMNS
    assert stable(read_rows(tmp_path / "r.csv")) == stable(rows)


def test_resume_keeps_rows_and_fills_gaps(tmp_path, exact_scene):
    ds, field = exact_scene
    path = tmp_path / "r.csv"
    first = run_grid(small_spec(), ds, field, path)
    before = path.read_text()
    run_grid(small_spec(), ds, field, path)
    assert path.read_text() == before
    lines = before.splitlines(keepends=True)
    path.write_text("".join(lines[:2] + lines[3:]))  # drop seed 1
    again = run_grid(small_spec(), ds, field, path)
    assert stable(again) == stable(first)
    assert len(read_rows(path)) == 3


def test_grid_threads_give_same_rows(tmp_path, exact_scene):
    ds, field = exact_scene
    spec = small_spec(strategies=["rand", "orbrand"], seeds=2)
    a = run_grid(spec, ds, field, tmp_path / "a.csv", threads=1)
    b = run_grid(spec, ds, field, tmp_path / "b.csv", threads=3)
    assert stable(a) == stable(b)
    assert [r.key for r in read_rows(tmp_path / "b.csv")] == [r.key for r in a]


def test_bad_row_recorded_and_grid_continues(tmp_path, exact_scene):
    ds, field = exact_scene
    spec = small_spec(strategies=["sift", "rand"], seeds=1)
    rows = run_grid(spec, ds, field, tmp_path / "r.csv")
    assert "strategy" in rows[0].error and not rows[1].error
    assert len(read_rows(tmp_path / "r.csv")) == 2


def row(strategy, err, passes, **kw):
    return ResultRow("d", strategy, "pixel", 100, 16, 45, "cem", kw.pop("seed", 0), point_error_pct=err,
                     first_crossing_passes=passes, converged=err <= 10, **kw)


def test_passes_to_threshold_rules():
    rows = [row("orb", 30.0, -1), row("orb", 12.0, 500_000, seed=1),
            row("mser", 5.0, 1_200_000), row("mser", 8.0, 800_000, seed=1)]
    p = passes_to_threshold(rows)
    assert p[("orb", "pixel", "d")] is None
    assert p[("mser", "pixel", "d")] == 800_000
    assert format_passes(None) == "-"
    assert format_passes(816_000) == "816k"
    assert format_passes(800_000) == "800k"
    assert format_passes(1_200_000) == "1.2m"


def test_mean_ci_and_aggregate():
    m, ci, n = mean_ci([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5 and n == 4
    assert ci == pytest.approx(1.96 * np.std([1, 2, 3, 4], ddof=1) / 2)
    agg = aggregate([row("a", 1.0, -1), row("a", 3.0, -1, seed=1), row("b", 7.0, -1)])
    assert agg[("a", "pixel")][:2] == (2.0, pytest.approx(1.96 * np.sqrt(2) / np.sqrt(2)))
    assert agg[("b", "pixel")] == (7.0, 0.0, 1)


def test_heatmap_layout():
    rows = [row("a", 1.0, -1), ResultRow("d", "a", "pixel", 50, 16, 15, "cem", 0, point_error_pct=4.0)]
    strategies, cols, grid = heatmap_table(rows, 16, "pixel")
    assert strategies == ["a"] and cols == ["15x50", "45x100"]
    np.testing.assert_array_equal(grid, [[4.0, 1.0]])


def test_report_is_byte_identical_and_order_free(tmp_path, exact_scene):
    ds, field = exact_scene
    run_grid(small_spec(), ds, field, tmp_path / "a.csv")
    run_grid(small_spec(strategies=["randfix"]), ds, field, tmp_path / "b.csv")
    out1 = report([tmp_path / "a.csv", tmp_path / "b.csv"], tmp_path / "r1")
    out2 = report([tmp_path / "b.csv", tmp_path / "a.csv"], tmp_path / "r2")
    names = sorted(p.name for p in out1)
    assert names == sorted(p.name for p in out2)
    assert "heatmap_pixel_8pts.svg" in names and "summary.csv" in names
    for name in names:
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    assert (tmp_path / "r1" / "heatmap_pixel_8pts.svg").read_text().startswith("<svg")


def test_fwhm_triangle_and_censoring():
    x = np.arange(-10, 10.5, 0.5)
    assert fwhm(x, np.maximum(0, 1 - np.abs(x) / 5)) == pytest.approx(5.0)
    # affine rescaling does not matter
    assert fwhm(x, 3 + 2 * np.maximum(0, 1 - np.abs(x) / 5)) == pytest.approx(5.0)
    # right side never falls to half: censored at the range end
    assert fwhm(x, np.where(x < 0, np.maximum(0, 1 + x / 5), 1.0)) == pytest.approx(12.5)


def test_likelihood_curve_peaks_at_zero(exact_scene):
    ds, field = exact_scene
    for strategy in ("orb", "mser", "rand"):
        c = likelihood_curve(field, ds, 0, strategy, n_pixels=200, range_deg=10, step_deg=2, n_pts=64,
                             features=FeatureConfig(mser_max_area=1500))
        mid = len(c.angles_deg) // 2
        assert c.angles_deg[mid] == 0.0
        assert c.errors[mid] < 1e-6 and c.likelihood[mid] == pytest.approx(1.0)
        assert np.argmax(c.likelihood) == mid
        assert c.to_csv().startswith("strategy,angle_deg")
