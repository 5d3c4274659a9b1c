"""Synthetic scene generation: analytic depth, photoconsistency, disk round trip."""

import numpy as np
import pytest

from mvslite.geometry import reproject_round_trip
from mvslite.harness.scene import (
    SceneSpec,
    generate_scene,
    load_scene,
    photoconsistency_error,
    save_scene,
)


def test_spec_validation():
    with pytest.raises(ValueError, match="at least 2 views"):
        SceneSpec(n_views=1)
    with pytest.raises(ValueError, match="plane_depth"):
        SceneSpec(plane_depth=-5.0)
    with pytest.raises(ValueError, match="plane_normal"):
        SceneSpec(plane_normal=(0.0, 0.0, 0.0))
    with pytest.raises(ValueError, match="contrast"):
        SceneSpec(contrast=1.5)
    with pytest.raises(ValueError, match="octaves"):
        SceneSpec(octaves=0)
    with pytest.raises(ValueError, match="depth_range"):
        SceneSpec(depth_range=(935.0, 425.0))
    with pytest.raises(ValueError, match="4x4"):
        SceneSpec(image_shape=(2, 64))
    with pytest.raises(ValueError, match="positive"):
        SceneSpec(baseline=0.0)


def test_fronto_parallel_depth_is_exactly_plane_depth():
    scene = generate_scene(SceneSpec(seed=0))
    for depth in scene.gt_depth:
        assert np.all(depth == 600.0)


def test_slanted_depth_hits_plane_equation():
    normal = (0.1, -0.07, 1.0)
    scene = generate_scene(SceneSpec(plane_normal=normal, seed=2))
    n = np.asarray(normal) / np.linalg.norm(normal)
    h, w = scene.spec.image_shape
    # back-project every pixel and check it satisfies the plane equation
    from mvslite.geometry import back_project, pixel_grid

    for cam, depth in zip(scene.cameras, scene.gt_depth):
        world = back_project(cam, pixel_grid(h, w), depth)
        residual = np.einsum("i,ihw->hw", n, world) - n @ np.array([0.0, 0.0, 600.0])
        assert np.abs(residual).max() < 1e-9


def test_slanted_depth_closed_form_at_center_ray():
    # odd-sized grid puts a pixel exactly on the principal point
    spec = SceneSpec(image_shape=(65, 65), plane_normal=(0.15, 0.1, 1.0), seed=1)
    scene = generate_scene(spec)
    assert abs(scene.gt_depth[0][32, 32] - 600.0) < 1e-12


def test_photoconsistency_fronto_defaults_machine_precision():
    # default rig has integer disparity at the plane, so warps land on pixels
    scene = generate_scene(SceneSpec(seed=0))
    assert photoconsistency_error(scene) < 1e-12


def test_photoconsistency_slanted_stays_small():
    scene = generate_scene(SceneSpec(plane_normal=(0.1, 0.0, 1.0), seed=3))
    assert photoconsistency_error(scene) < 2.0 / 255.0


def test_round_trip_residuals_below_tolerance():
    for spec in (
        SceneSpec(seed=0),
        SceneSpec(plane_normal=(0.05, -0.08, 1.0), seed=3),
    ):
        scene = generate_scene(spec)
        for i in range(1, len(scene.images)):
            rr = reproject_round_trip(
                scene.gt_depth[0], scene.cameras[0], scene.cameras[i], scene.gt_depth[i]
            )
            assert rr.valid.any()
            assert rr.residuals().max() < 1e-6


def test_generation_is_deterministic():
    a = generate_scene(SceneSpec(seed=7))
    b = generate_scene(SceneSpec(seed=7))
    for ia, ib in zip(a.images, b.images):
        assert np.array_equal(ia, ib)
    c = generate_scene(SceneSpec(seed=8))
    assert not np.array_equal(a.images[0], c.images[0])


def test_image_range_respects_contrast():
    scene = generate_scene(SceneSpec(contrast=0.5, seed=4))
    for image in scene.images:
        assert image.min() >= 0.25 - 1e-12
        assert image.max() <= 0.75 + 1e-12


def test_two_octaves_render():
    scene = generate_scene(SceneSpec(octaves=2, seed=5))
    assert len(scene.texture.lattices) == 2
    for image in scene.images:
        assert 0.0 <= image.min() and image.max() <= 1.0


def test_texture_rejects_uncovered_points():
    scene = generate_scene(SceneSpec(seed=0))
    with pytest.raises(ValueError, match="lattice"):
        scene.texture.sample(np.array([1e6]), np.array([0.0]))


def test_ring_geometry():
    scene = generate_scene(SceneSpec(n_views=3, seed=0))
    assert np.array_equal(scene.cameras[0].t, np.zeros(3))
    # two sources, 90 degree step on a radius-20 ring
    np.testing.assert_allclose(scene.cameras[1].t, [-20.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(scene.cameras[2].t, [0.0, -20.0, 0.0], atol=1e-12)
    for cam in scene.cameras:
        assert np.array_equal(cam.R, np.eye(3))


def test_plane_behind_camera_rejected():
    with pytest.raises(ValueError, match="behind|edge-on"):
        generate_scene(SceneSpec(plane_depth=1.0, plane_normal=(0.9, 0.0, 1.0)))


def test_save_load_round_trip(tmp_path):
    scene = generate_scene(SceneSpec(seed=6))
    save_scene(scene, tmp_path / "scene")
    data = load_scene(tmp_path / "scene")
    assert len(data.images) == 3
    for orig, loaded in zip(scene.images, data.images):
        assert np.array_equal(orig.astype("<f4").astype(np.float64), loaded)
    for orig, loaded in zip(scene.gt_depth, data.gt_depth):
        assert np.array_equal(orig.astype("<f4").astype(np.float64), loaded)
    for co, cl in zip(scene.cameras, data.cameras):
        assert np.abs(co.K - cl.K).max() < 1e-9
        assert np.abs(co.R - cl.R).max() < 1e-9
        assert np.abs(co.t - cl.t).max() < 1e-9
        assert abs(co.depth_range[0] - cl.depth_range[0]) < 1e-9
        assert abs(co.depth_range[1] - cl.depth_range[1]) < 1e-6


def test_load_without_gt_dir(tmp_path):
    import shutil

    scene = generate_scene(SceneSpec(seed=6))
    save_scene(scene, tmp_path / "scene")
    shutil.rmtree(tmp_path / "scene" / "gt")
    data = load_scene(tmp_path / "scene")
    assert data.gt_depth is None
    assert len(data.images) == 3


def test_load_errors(tmp_path):
    with pytest.raises(ValueError, match="no images"):
        load_scene(tmp_path)
    scene = generate_scene(SceneSpec(seed=6))
    save_scene(scene, tmp_path / "scene")
    (tmp_path / "scene" / "cams" / "00000001_cam.txt").unlink()
    with pytest.raises(ValueError, match="missing camera"):
        load_scene(tmp_path / "scene")


def test_loaded_scene_photoconsistency_matches(tmp_path):
    # float32 quantisation from the PFM round trip must not break the check
    scene = generate_scene(SceneSpec(seed=0))
    save_scene(scene, tmp_path / "scene")
    data = load_scene(tmp_path / "scene")
    assert photoconsistency_error(data) < 1e-6
