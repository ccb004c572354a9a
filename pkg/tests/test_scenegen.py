import numpy as np
import pytest
from scipy import stats

from strata_nerf.errors import DatasetError, SceneError
from strata_nerf.image_io import read_pfm, read_ppm, write_pfm, write_ppm
from strata_nerf.rendering import Camera, Ray, look_at
from strata_nerf.scenegen import (
    LevelSpec,
    Material,
    PoseSampler,
    Primitive,
    SceneSpec,
    intersect,
    load_manifest,
    make_preset,
    orbit_cameras,
    regenerate,
    render_ground_truth,
    sample_poses,
    sample_positions,
    verify_dataset,
    write_dataset,
)

RED = Material("flat", (1.0, 0.0, 0.0))


def _ray(origin, direction):
    return Ray(np.asarray(origin, dtype=float), np.asarray(direction, dtype=float), 0.0, 100.0, 0.0)


def test_sphere_hit():
    t, normal, _ = intersect(_ray([0, 0, -5], [0, 0, 1]), Primitive("sphere"))
    assert t == pytest.approx(4.0)
    np.testing.assert_allclose(normal, [0.0, 0.0, -1.0])


def test_box_hit():
    t, normal, _ = intersect(_ray([-5, 0, 0], [1, 0, 0]), Primitive("box", scale=0.5))
    assert t == pytest.approx(4.5)
    np.testing.assert_allclose(normal, [-1.0, 0.0, 0.0])


def test_sphere_miss():
    assert intersect(_ray([0, 2, -5], [0, 0, 1]), Primitive("sphere")) is None


def test_hollow_shell_hit_from_inside_faces_inward():
    t, normal, _ = intersect(_ray([0, 0, 0], [0, 0, 1]), Primitive("sphere", scale=2.0, hollow=True))
    assert t == pytest.approx(2.0)
    np.testing.assert_allclose(normal, [0.0, 0.0, -1.0])
    t, normal, _ = intersect(_ray([0, 0, 0], [1, 0, 0]), Primitive("box", hollow=True))
    assert t == pytest.approx(1.0)
    np.testing.assert_allclose(normal, [-1.0, 0.0, 0.0])


def test_plane_hit_and_uv():
    t, normal, uv = intersect(_ray([0.3, 0.1, 1.0], [0, 0, -1]), Primitive("plane"))
    assert t == pytest.approx(1.0)
    np.testing.assert_allclose(normal, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(uv, [0.3, 0.1])


def test_checker_alternates_with_scale_period():
    material = Material("checker", (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), checker_scale=0.25)
    uv = np.array([[0.1, 0.1], [0.3, 0.1], [0.6, 0.1], [0.8, 0.1]])
    albedo = material.albedo(np.zeros((4, 3)), uv)
    np.testing.assert_array_equal(albedo[:, 0], [1.0, 0.0, 1.0, 0.0])


def test_primitive_validation():
    with pytest.raises(SceneError):
        Primitive("torus")
    with pytest.raises(SceneError):
        Primitive("sphere", scale=(1.0, 0.0, 1.0))
    with pytest.raises(SceneError):
        Material("flat", (1.5, 0.0, 0.0))


def _single_level(primitives, background=(1.0, 1.0, 1.0)):
    return SceneSpec("test", [LevelSpec(primitives, PoseSampler("hemisphere", 4.0), background=background)],
                     width=5, height=5, focal=5.0)


def _top_camera():
    return Camera(5, 5, 5.0, look_at([0.0, 0.0, 4.0], [0.0, 0.0, 0.0]), 0.1, 10.0)


def test_empty_level_renders_background():
    image, depth = render_ground_truth(_top_camera(), _single_level([]))
    np.testing.assert_array_equal(image, 1.0)
    assert np.all(np.isinf(depth))


def test_lambert_at_the_pole():
    scene = _single_level([Primitive("sphere", material=RED)])
    image, depth = render_ground_truth(_top_camera(), scene)
    lambert = scene.light[2]
    np.testing.assert_allclose(image[2, 2], [scene.ambient + scene.diffuse * lambert, 0.0, 0.0])
    assert depth[2, 2] == pytest.approx(3.0)


def test_camera_inside_solid_is_rejected():
    camera = Camera(5, 5, 5.0, look_at([0.0, 0.0, 0.2], [0.0, 0.0, 0.0]), 0.1, 10.0)
    with pytest.raises(SceneError, match="embedded"):
        render_ground_truth(camera, _single_level([Primitive("sphere")]))


def test_hemisphere_poses_on_shell_looking_at_center():
    scene = make_preset("two-level", resolution=8)
    cameras = sample_poses(scene, 0, np.random.default_rng(0), count=50)
    center = np.asarray(scene.levels[0].sampler.center)
    for camera in cameras:
        offset = center - camera.position
        assert camera.position[2] >= 0.0
        assert np.linalg.norm(offset) == pytest.approx(4.0, abs=1e-9)
        assert camera.forward @ (offset / np.linalg.norm(offset)) == pytest.approx(1.0, abs=1e-9)


def test_poses_are_seeded():
    scene = make_preset("two-level", resolution=8)
    a = sample_poses(scene, 1, np.random.default_rng(3), count=10)
    b = sample_poses(scene, 1, np.random.default_rng(3), count=10)
    for first, second in zip(a, b):
        np.testing.assert_array_equal(first.pose, second.pose)


def test_zero_radius_is_rejected():
    with pytest.raises(SceneError):
        PoseSampler("sphere", 0.0)


def test_pose_sampling_is_area_uniform():
    sampler = PoseSampler("sphere", 1.0, elevation_min=-90.0, elevation_max=90.0)
    points = sample_positions(sampler, 10_000, np.random.default_rng(11))
    longitude = np.floor((np.arctan2(points[:, 1], points[:, 0]) + np.pi) / (2 * np.pi) * 8).clip(0, 7)
    band = np.floor((points[:, 2] + 1.0) / 2.0 * 4).clip(0, 3)
    counts = np.bincount((band * 8 + longitude).astype(int), minlength=32)
    assert stats.chisquare(counts).pvalue > 0.01


def test_orbit_cameras_share_elevation():
    scene = make_preset("two-level", resolution=8)
    cameras = orbit_cameras(scene, 0, count=12, elevation=30.0)
    heights = [camera.position[2] for camera in cameras]
    np.testing.assert_allclose(heights, 4.0 * np.sin(np.radians(30.0)))


def test_nesting_is_validated():
    outer = LevelSpec([Primitive("box", hollow=True)], PoseSampler("hemisphere", 4.0))
    inner = LevelSpec([Primitive("sphere", scale=0.1)], PoseSampler("sphere", 1.5))
    with pytest.raises(SceneError, match="not strictly inside"):
        SceneSpec("bad", [outer, inner]).validate()
    with pytest.raises(SceneError):
        make_preset("dragon")


def test_inner_cameras_stay_inside_enclosure():
    scene = make_preset("six-level", resolution=4)
    for index in range(1, scene.num_levels):
        enclosure = scene.levels[index - 1].enclosure
        positions = np.stack([c.position for c in sample_poses(scene, index, np.random.default_rng(index), 40)])
        assert np.all(enclosure.contains(positions))


def test_three_level_dataset_counts(tmp_path):
    scene = make_preset("cube-sphere-monkey-lite", resolution=4)
    manifest = write_dataset(scene, tmp_path, seed=0)
    assert len(manifest.frames) == 180
    assert len(list((tmp_path / "images").glob("*.ppm"))) == 180
    counts = verify_dataset(load_manifest(tmp_path))
    assert counts["L2_val"] == 15


def test_empty_counts_write_no_images(tmp_path):
    manifest = write_dataset(make_preset("two-level", resolution=4, counts=(0, 0, 0)), tmp_path, seed=0)
    assert manifest.frames == []
    assert not (tmp_path / "images").exists()
    assert (tmp_path / "manifest.json").exists()


def test_dataset_is_byte_identical_and_regenerates(tmp_path, tiny_dataset):
    again = write_dataset(tiny_dataset.scene, tmp_path / "again", seed=7)
    redone = regenerate(load_manifest(tiny_dataset.root), tmp_path / "redone")
    for other in (again, redone):
        assert (other.root / "manifest.json").read_text() == (tiny_dataset.root / "manifest.json").read_text()
        for frame in tiny_dataset.frames:
            assert (other.root / frame.image).read_bytes() == (tiny_dataset.root / frame.image).read_bytes()


def test_ground_truth_values(tiny_dataset):
    for frame in tiny_dataset.frames:
        image = read_ppm(tiny_dataset.root / frame.image)
        depth = read_pfm(tiny_dataset.root / frame.depth)
        assert image.shape == (8, 8, 3)
        assert np.all((image >= 0) & (image <= 1))
        assert not np.any(np.isnan(depth))


def test_manifest_records(tiny_dataset):
    manifest = load_manifest(tiny_dataset.root / "manifest.json")
    assert manifest.num_levels == 2
    assert manifest.seed == 7
    assert len(manifest.frames_for("train", 1)) == 3
    assert {f.split for f in manifest.frames} == {"train", "val", "test"}
    assert manifest.scene.to_dict() == tiny_dataset.scene.to_dict()


def test_manifest_errors(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text('{"format_version": 99}')
    with pytest.raises(DatasetError, match="format_version"):
        load_manifest(tmp_path)


def test_ppm_and_pfm_files(tmp_path):
    image = np.array([[[0.0, 0.5, 1.0], [2.0, -1.0, 0.25]]])
    write_ppm(tmp_path / "a.ppm", image)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    np.testing.assert_array_equal(np.round(read_ppm(tmp_path / "a.ppm") * 255), [[[0, 128, 255], [255, 0, 64]]])

    depth = np.array([[1.5, np.inf], [0.25, 3.0]])
    write_pfm(tmp_path / "d.pfm", depth)
    assert (tmp_path / "d.pfm").read_bytes().startswith(b"Pf\n2 2\n-1.0\n")
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), [[1.5, 0.0], [0.25, 3.0]])
