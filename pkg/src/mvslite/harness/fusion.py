"""Geometric-consistency fusion of per-view depth maps into one point cloud.

The first view of every call is the reference. A reference pixel
survives when its confidence clears the floor and enough source views
agree with it: the forward-backward reprojection lands within a pixel
radius of where it started and the depth the source reports for that
pixel matches the reference prediction to a relative tolerance. The
surviving depth is the average of the reference prediction and the
agreeing source opinions, then back-projected to world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraModel, back_project, pixel_grid, reproject_round_trip
from ..numerics import require_finite

__all__ = ["PointCloud", "FusionThresholds", "fuse_depth_maps"]


@dataclass(frozen=True)
class PointCloud:
    """World-space points in millimetres with optional per-point confidence."""

    points: np.ndarray  # (P, 3)
    confidence: np.ndarray | None = None  # (P,)

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        require_finite(points, "PointCloud.points")
        object.__setattr__(self, "points", points)
        if self.confidence is not None:
            confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if confidence.shape[0] != points.shape[0]:
                raise ValueError(
                    f"{confidence.shape[0]} confidences for {points.shape[0]} points"
                )
            require_finite(confidence, "PointCloud.confidence")
            object.__setattr__(self, "confidence", confidence)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FusionThresholds:
    """Acceptance gates for cross-view depth consistency."""

    min_confidence: float = 0.3
    min_consistent: int = 2
    max_reproj_px: float = 1.0
    max_depth_rel: float = 0.01

    def __post_init__(self) -> None:
        if self.min_consistent < 1:
            raise ValueError(f"min_consistent must be >= 1, got {self.min_consistent}")
        if self.max_reproj_px <= 0 or self.max_depth_rel <= 0:
            raise ValueError(
                f"thresholds must be positive, got reproj {self.max_reproj_px}, "
                f"depth {self.max_depth_rel}"
            )


def fuse_depth_maps(
    depths: list[np.ndarray],
    confidences: list[np.ndarray],
    cameras: list[CameraModel],
    thresholds: FusionThresholds = FusionThresholds(),
) -> PointCloud:
    """Filter and merge depth maps; view 0 is the reference.

    A pixel is kept when confidence >= min_confidence, its depth is
    positive, and at least min_consistent sources pass both the
    round-trip pixel check (residual < max_reproj_px) and the relative
    depth check (|d_src - d_ref| < max_depth_rel * d_ref). Accepted
    depths are averaged over the reference and the consistent sources.
    """
    if not len(depths) == len(confidences) == len(cameras):
        raise ValueError(
            f"got {len(depths)} depth maps, {len(confidences)} confidence maps, "
            f"{len(cameras)} cameras"
        )
    if len(depths) < 2:
        raise ValueError(f"fusion needs at least 2 views, got {len(depths)}")
    depth_ref = np.asarray(depths[0], dtype=np.float64)
    conf_ref = np.asarray(confidences[0], dtype=np.float64)
    if depth_ref.shape != conf_ref.shape or depth_ref.ndim != 2:
        raise ValueError(
            f"reference depth {depth_ref.shape} and confidence {conf_ref.shape} "
            f"must be matching 2-d maps"
        )

    keep = (conf_ref >= thresholds.min_confidence) & (depth_ref > 0.0)
    depth_sum = depth_ref.copy()
    n_consistent = np.zeros(depth_ref.shape, dtype=np.int64)
    for depth_src, cam_src in zip(depths[1:], cameras[1:]):
        rr = reproject_round_trip(depth_ref, cameras[0], cam_src, np.asarray(depth_src))
        ok = rr.valid & (rr.residuals() < thresholds.max_reproj_px)
        ok &= np.abs(rr.depth_roundtrip - depth_ref) < thresholds.max_depth_rel * depth_ref
        depth_sum += np.where(ok, rr.depth_roundtrip, 0.0)
        n_consistent += ok

    keep &= n_consistent >= thresholds.min_consistent
    if not keep.any():
        return PointCloud(points=np.zeros((0, 3)), confidence=np.zeros(0))
    fused = depth_sum / (1.0 + n_consistent)
    h, w = depth_ref.shape
    world = back_project(cameras[0], pixel_grid(h, w), fused)
    points = world[:, keep].T
    return PointCloud(points=points, confidence=conf_ref[keep])
