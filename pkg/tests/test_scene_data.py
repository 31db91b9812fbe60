import json

import numpy as np
import pytest
from PIL import Image

from nerfmcl.poses import SphericalPose, look_at, spherical_to_pose
from nerfmcl.radiance_field import AnalyticField, MlpField, Sphere
from nerfmcl.renderer import render_image
from nerfmcl.scene_data import (OBJECT_CENTRIC, SCENE_CENTRIC, Dataset, DatasetError, Frame, Intrinsics, PoseRange,
                                RandomMlpScene, generate_synthetic_scene, load_field, load_manifest,
                                pose_range_from_dataset, read_png, save_field, save_manifest)


def tiny_dataset(poses, kind=OBJECT_CENTRIC):
    k = Intrinsics.centered(8, 8, 10.0)
    return Dataset([Frame(np.zeros((8, 8, 3)), T) for T in poses], k, kind)


def test_intrinsics_invariants():
    with pytest.raises(DatasetError):
        Intrinsics(0.0, 1.0, 1, 1, 4, 4)
    with pytest.raises(DatasetError):
        Intrinsics(1.0, 1.0, 4, 1, 4, 4)


def test_centered_sphere_fills_centre_in_every_view():
    f = AnalyticField([Sphere((0, 0, 0), 0.5, (0.3, 0.6, 0.2), 200.0)])
    ds, field = generate_synthetic_scene(f, 10, 100, 0, radius=4.0)
    assert field is f and len(ds) == 10
    for fr in ds.frames:
        np.testing.assert_allclose(fr.image[49:51, 49:51], np.broadcast_to([0.3, 0.6, 0.2], (2, 2, 3)), atol=1e-9)
        assert np.linalg.norm(fr.pose[:3, 3]) == pytest.approx(4.0)


def test_generation_is_deterministic():
    a, _ = generate_synthetic_scene(RandomMlpScene(7, hidden=(16,), l_pos=2), 3, 16, 5)
    b, _ = generate_synthetic_scene(RandomMlpScene(7, hidden=(16,), l_pos=2), 3, 16, 5)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.image, fb.image)
        np.testing.assert_array_equal(fa.pose, fb.pose)


def test_random_mlp_scene_is_self_consistent():
    ds, field = generate_synthetic_scene(RandomMlpScene(7), 2, 100, 0)
    assert isinstance(field, MlpField)
    for fr in ds.frames:
        img = render_image(field, fr.pose, ds.intrinsics, 64, ds.background, near=ds.near, far=ds.far)
        np.testing.assert_array_equal(img, fr.image)


def test_supersampling_averages_subpixels(one_sphere):
    ds1, _ = generate_synthetic_scene(one_sphere, 1, 12, 3, supersample=1)
    ds2, _ = generate_synthetic_scene(one_sphere, 1, 12, 3, supersample=2)
    k = ds1.intrinsics
    fine = Intrinsics(2 * k.fx, 2 * k.fy, 2 * k.cx, 2 * k.cy, 24, 24)
    big = render_image(one_sphere, ds2.frames[0].pose, fine, 64)
    np.testing.assert_allclose(ds2.frames[0].image, big.reshape(12, 2, 12, 2, 3).mean(axis=(1, 3)))
    assert not np.array_equal(ds1.frames[0].image, ds2.frames[0].image)


def test_generation_errors(one_sphere):
    with pytest.raises(DatasetError, match="primitives"):
        generate_synthetic_scene(AnalyticField(), 1, 16, 0)
    with pytest.raises(DatasetError, match="8x8"):
        generate_synthetic_scene(one_sphere, 1, 7, 0)
    with pytest.raises(DatasetError):
        generate_synthetic_scene(one_sphere, 0, 16, 0)


def test_forward_layout_is_scene_centric(one_sphere):
    ds, _ = generate_synthetic_scene(one_sphere, 3, 16, 0, layout="forward", radius=3.0)
    assert ds.kind == SCENE_CENTRIC and ds.max_distance == 2.0
    rng = pose_range_from_dataset(ds)
    assert len(rng.anchors) == 3


def test_pose_range_examples():
    poses = [spherical_to_pose(SphericalPose(th, 0.3, 4.0)) for th in (0.0, np.pi / 2)]
    r = pose_range_from_dataset(tiny_dataset(poses), margin=0.0)
    np.testing.assert_allclose(r.r, (4.0, 4.0))
    r = pose_range_from_dataset(tiny_dataset(poses), margin=0.1)
    np.testing.assert_allclose(r.theta, (-0.05 * np.pi, 0.55 * np.pi))
    assert not r.theta_wraps


def test_pose_range_rejects_camera_at_origin():
    with pytest.raises(DatasetError, match="frame 0"):
        pose_range_from_dataset(tiny_dataset([np.eye(4)]))


def test_pose_range_invariants():
    with pytest.raises(DatasetError):
        PoseRange(OBJECT_CENTRIC, theta=(1.0, 0.0))
    with pytest.raises(DatasetError):
        PoseRange(OBJECT_CENTRIC, r=(0.0, 1.0))
    with pytest.raises(DatasetError):
        PoseRange(SCENE_CENTRIC)


def write_manifest(tmp_path, frames, **extra):
    meta = {"kind": "object-centric", "intrinsics": {"fx": 10.0, "fy": 10.0, "cx": 4.0, "cy": 4.0,
                                                     "width": 8, "height": 8},
            "near": 2.0, "far": 6.0, "max_distance": 12.0, "frames": frames}
    meta.update(extra)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(meta))
    return path


def png(tmp_path, name, size=(8, 8), mode="RGB", fill=(255, 0, 0)):
    Image.new(mode, size, fill).save(tmp_path / name)
    return name


GOOD_POSE = spherical_to_pose(SphericalPose(0.0, 0.2, 4.0)).tolist()


def test_manifest_loads_and_keeps_max_distance(tmp_path):
    path = write_manifest(tmp_path, [{"image": png(tmp_path, "a.png"), "transform_matrix": GOOD_POSE}])
    ds = load_manifest(path)
    assert ds.max_distance == 12 and ds.kind == OBJECT_CENTRIC
    np.testing.assert_array_equal(ds.frames[0].image[0, 0], [1, 0, 0])


def test_manifest_errors(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_manifest(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{oops")
    with pytest.raises(DatasetError, match="malformed JSON"):
        load_manifest(tmp_path / "bad.json")
    with pytest.raises(DatasetError, match="empty dataset"):
        load_manifest(write_manifest(tmp_path, []))
    reflect = (np.diag([1.0, 1, -1, 1]) @ np.array(GOOD_POSE)).tolist()
    frames = [{"image": png(tmp_path, "a.png"), "transform_matrix": GOOD_POSE},
              {"image": "a.png", "transform_matrix": reflect}]
    with pytest.raises(DatasetError, match="frame 1.*determinant"):
        load_manifest(write_manifest(tmp_path, frames))
    frames = [{"image": png(tmp_path, "b.png", size=(9, 8)), "transform_matrix": GOOD_POSE}]
    with pytest.raises(DatasetError, match="frame 0: image size 9x8"):
        load_manifest(write_manifest(tmp_path, frames))
    frames = [{"image": "missing.png", "transform_matrix": GOOD_POSE}]
    with pytest.raises(DatasetError, match="image not found"):
        load_manifest(write_manifest(tmp_path, frames))


def test_rgba_composited_over_background(tmp_path):
    png(tmp_path, "c.png", mode="RGBA", fill=(0, 0, 0, 0))
    img = read_png(tmp_path / "c.png", background=(1.0, 1.0, 1.0))
    np.testing.assert_array_equal(img, 1.0)


def test_save_and_reload_round_trip(tmp_path, one_sphere):
    ds, field = generate_synthetic_scene(one_sphere, 2, 16, 0)
    save_manifest(ds, tmp_path)
    save_field(field, tmp_path)
    back = load_manifest(tmp_path / "manifest.json")
    for a, b in zip(ds.frames, back.frames):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12
        np.testing.assert_allclose(a.pose, b.pose, atol=1e-15)
    assert load_field(tmp_path).to_dict() == field.to_dict()


def test_load_field_missing(tmp_path):
    with pytest.raises(DatasetError, match="field"):
        load_field(tmp_path)


def test_scene_centric_pose_range_from_look_at():
    poses = [look_at([x, 3.0, 0.0], target=[x, 2.0, 0.0]) for x in (-0.2, 0.0, 0.2)]
    r = pose_range_from_dataset(tiny_dataset(poses, SCENE_CENTRIC))
    assert r.kind == SCENE_CENTRIC and len(r.anchors) == 3
