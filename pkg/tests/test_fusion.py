"""Fusion gate and averaging tests on translation rigs with known planes."""

import numpy as np
import pytest

from mvslite.geometry import reproject_round_trip
from mvslite.harness.fusion import FusionThresholds, PointCloud, fuse_depth_maps

from conftest import translation_camera


def ring_cameras(n_sources, baseline=10.0, pp=(7.5, 7.5)):
    cams = [translation_camera((0.0, 0.0, 0.0), pp=pp)]
    for i in range(n_sources):
        angle = np.deg2rad(90.0 * i)
        center = (baseline * np.cos(angle), baseline * np.sin(angle), 0.0)
        cams.append(translation_camera(center, pp=pp))
    return cams


def constant_scene(n_sources, depth=600.0, h=16, w=16):
    cams = ring_cameras(n_sources)
    depths = [np.full((h, w), depth) for _ in range(n_sources + 1)]
    confs = [np.ones((h, w)) for _ in range(n_sources + 1)]
    return depths, confs, cams


def margin_scene(n_sources, depth=600.0, h=16, w=16, margin=4):
    """Constant plane whose source frames extend `margin` px past the reference.

    Every reference pixel then warps inside every source frame, so vote
    counts are full everywhere and corruption effects are isolated from
    frame cropping.
    """
    hs, ws = h + 2 * margin, w + 2 * margin
    cams = [translation_camera((0.0, 0.0, 0.0), pp=((w - 1) / 2.0, (h - 1) / 2.0))]
    src_pp = ((ws - 1) / 2.0, (hs - 1) / 2.0)
    for i in range(n_sources):
        angle = np.deg2rad(90.0 * i)
        center = (10.0 * np.cos(angle), 10.0 * np.sin(angle), 0.0)
        cams.append(translation_camera(center, pp=src_pp))
    depths = [np.full((h, w), depth)] + [
        np.full((hs, ws), depth) for _ in range(n_sources)
    ]
    confs = [np.ones_like(d) for d in depths]
    return depths, confs, cams


class TestPointCloud:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            PointCloud(points=np.array([[np.nan, 0.0, 0.0]]))

    def test_confidence_length_checked(self):
        with pytest.raises(ValueError, match="confidence"):
            PointCloud(points=np.zeros((2, 3)), confidence=np.zeros(3))

    def test_count(self):
        assert PointCloud(points=np.zeros((5, 3))).count == 5


class TestFuseDepthMaps:
    def test_consistent_plane_lands_on_plane(self):
        depths, confs, cams = constant_scene(2)
        cloud = fuse_depth_maps(depths, confs, cams)
        assert cloud.count > 0
        assert np.abs(cloud.points[:, 2] - 600.0).max() < 0.5

    def test_every_valid_reference_pixel_contributes(self):
        depths, confs, cams = constant_scene(2, h=16, w=16)
        cloud = fuse_depth_maps(depths, confs, cams)
        # A point survives wherever both sources sample inside their frames.
        rrs = [
            reproject_round_trip(depths[0], cams[0], cams[i], depths[i])
            for i in (1, 2)
        ]
        expected = int((rrs[0].valid & rrs[1].valid).sum())
        assert cloud.count == expected

    def test_zero_confidence_gives_empty_cloud(self):
        depths, confs, cams = constant_scene(2)
        confs = [np.zeros_like(c) for c in confs]
        cloud = fuse_depth_maps(depths, confs, cams)
        assert cloud.count == 0

    def test_confidence_floor_filters_pixels(self):
        depths, confs, cams = constant_scene(2)
        confs[0] = confs[0].copy()
        confs[0][:8] = 0.1
        full = fuse_depth_maps(depths, [np.ones_like(confs[0])] + confs[1:], cams)
        half = fuse_depth_maps(depths, confs, cams)
        assert 0 < half.count < full.count

    def test_depth_average_over_consistent_views(self):
        depths, confs, cams = constant_scene(1)
        depths[1] = np.full_like(depths[1], 601.0)
        cloud = fuse_depth_maps(
            depths, confs, cams, FusionThresholds(min_consistent=1)
        )
        assert cloud.count > 0
        assert np.abs(cloud.points[:, 2] - 600.5).max() < 1e-6

    def test_inconsistent_depth_rejected(self):
        depths, confs, cams = constant_scene(1)
        depths[1] = np.full_like(depths[1], 640.0)  # 6.7% off, far over the 1% gate
        cloud = fuse_depth_maps(
            depths, confs, cams, FusionThresholds(min_consistent=1)
        )
        assert cloud.count == 0

    def test_min_consistent_gate(self):
        depths, confs, cams = constant_scene(2)
        depths[2] = np.full_like(depths[2], 640.0)
        one = fuse_depth_maps(depths, confs, cams, FusionThresholds(min_consistent=1))
        two = fuse_depth_maps(depths, confs, cams, FusionThresholds(min_consistent=2))
        assert one.count > 0
        assert two.count == 0

    def test_corrupted_view_changes_under_one_percent(self):
        depths, confs, cams = margin_scene(3)
        clean = fuse_depth_maps(depths, confs, cams)
        assert clean.count == depths[0].size  # full votes everywhere
        rng = np.random.default_rng(7)
        depths[3] = rng.uniform(425.0, 935.0, depths[3].shape)
        noisy = fuse_depth_maps(depths, confs, cams)
        assert noisy.count == clean.count
        changed = (np.abs(noisy.points - clean.points) > 1e-9).any(axis=1)
        assert changed.mean() < 0.01

    def test_emitted_points_pass_reprojection_gate(self):
        h = w = 16
        cams = ring_cameras(2)
        depths = [np.full((h, w), 600.0) for _ in range(3)]
        depths[0] = depths[0].copy()
        depths[0][:4, :4] = 500.0  # region no source agrees with
        confs = [np.ones((h, w)) for _ in range(3)]
        thresholds = FusionThresholds()
        cloud = fuse_depth_maps(depths, confs, cams, thresholds)
        assert cloud.count > 0
        passing = np.zeros((h, w), dtype=np.int64)
        for i in (1, 2):
            rr = reproject_round_trip(depths[0], cams[0], cams[i], depths[i])
            ok = rr.valid & (rr.residuals() < thresholds.max_reproj_px)
            ok &= (
                np.abs(rr.depth_roundtrip - depths[0])
                < thresholds.max_depth_rel * depths[0]
            )
            passing += ok
        assert cloud.count == int((passing >= thresholds.min_consistent).sum())
        assert not np.isclose(cloud.points[:, 2], 500.0, atol=1.0).any()

    def test_fewer_than_two_views_rejected(self):
        depths, confs, cams = constant_scene(2)
        with pytest.raises(ValueError, match="2 views"):
            fuse_depth_maps(depths[:1], confs[:1], cams[:1])

    def test_mismatched_list_lengths_rejected(self):
        depths, confs, cams = constant_scene(2)
        with pytest.raises(ValueError, match="cameras"):
            fuse_depth_maps(depths, confs, cams[:2])

    def test_bad_thresholds_rejected(self):
        with pytest.raises(ValueError, match="min_consistent"):
            FusionThresholds(min_consistent=0)
        with pytest.raises(ValueError, match="positive"):
            FusionThresholds(max_reproj_px=0.0)
