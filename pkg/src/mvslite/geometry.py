"""Pinhole cameras, plane-sweep warping, and depth-hypothesis windows.

Conventions, fixed across the package:

* Pixel coordinates are (x, y) with the origin at the centre of the
  top-left pixel, so valid image coordinates span [0, W-1] x [0, H-1].
* Extrinsics are world-to-camera: x_cam = R @ X_world + t, with t in
  millimetres. The camera centre in world coordinates is -R.T @ t.
* Depth means the z-coordinate in the camera frame, not ray length.
* Back-projection of pixel p at depth d: X = R.T @ (d * K^-1 @ p_h - t).
  Projection divides by the camera-frame z, so a projected point comes
  with the depth it would have in the target view.

All warps are exact float64 geometry; sampling of discrete maps is
bilinear with edge clamping inside the frame and a False mask outside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import bilinear_resize, require_finite

__all__ = [
    "CameraModel",
    "DepthHypotheses",
    "WarpField",
    "ReprojectionResult",
    "pixel_grid",
    "back_project",
    "warp_pixel",
    "warp_grid",
    "grid_sample",
    "reproject_round_trip",
    "make_hypotheses",
]

_ORTHO_TOL = 1e-9
_BOUNDS_EPS = 1e-9  # float slop admitted at the image border


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera with a working depth range in mm."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    depth_range: tuple[float, float]

    def __post_init__(self) -> None:
        K = np.asarray(self.K, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if K.shape != (3, 3):
            raise ValueError(f"K must be 3x3, got {K.shape}")
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        if t.shape != (3,):
            raise ValueError(f"t must have 3 entries, got {t.shape}")
        lower = np.array([K[1, 0], K[2, 0], K[2, 1]])
        if np.abs(lower).max() > _ORTHO_TOL:
            raise ValueError(f"K must be upper-triangular, lower entries {lower}")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError(f"K must have positive focal entries, diag {np.diag(K)}")
        if abs(K[2, 2] - 1.0) > _ORTHO_TOL:
            raise ValueError(f"K[2,2] must be 1, got {K[2, 2]}")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("R is not orthonormal within 1e-9")
        if np.linalg.det(R) < 0:
            raise ValueError("R must be a proper rotation (det +1)")
        d_min, d_max = (float(v) for v in self.depth_range)
        if not (0.0 < d_min < d_max):
            raise ValueError(f"depth_range must satisfy 0 < d_min < d_max, got {self.depth_range}")
        object.__setattr__(self, "K", _frozen(K))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "depth_range", (d_min, d_max))

    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def scaled(self, factor: float) -> "CameraModel":
        """Intrinsics for the image resized by `factor` with half-pixel mapping.

        Focal lengths and skew scale by the factor; principal point maps
        through c' = (c + 0.5) * factor - 0.5 so that resized pixel
        centres line up with the bilinear_resize convention. factor 1 is
        an exact identity.
        """
        if factor <= 0:
            raise ValueError(f"scale factor must be positive, got {factor}")
        K = self.K.copy()
        K[0, 0] *= factor
        K[1, 1] *= factor
        K[0, 1] *= factor
        K[0, 2] = (K[0, 2] + 0.5) * factor - 0.5
        K[1, 2] = (K[1, 2] + 0.5) * factor - 0.5
        return CameraModel(K=K, R=self.R, t=self.t, depth_range=self.depth_range)


@dataclass(frozen=True)
class DepthHypotheses:
    """Per-pixel depth samples for one cascade stage, ascending along axis 0."""

    stage: int
    values: np.ndarray  # (M, H, W)
    spacing: float  # uniform hypothesis step, mm

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"values must be (M, H, W), got shape {values.shape}")
        if values.shape[0] < 2:
            raise ValueError(f"need at least 2 hypotheses, got {values.shape[0]}")
        if not (np.diff(values, axis=0) > 0).all():
            raise ValueError("hypothesis values must be strictly increasing at every pixel")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def count(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class WarpField:
    """Source-image sampling coordinates for one depth hypothesis."""

    coords: np.ndarray  # (2, H, W), x then y
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[0] != 2:
            raise ValueError(f"coords must be (2, H, W), got {coords.shape}")
        if valid.shape != coords.shape[1:]:
            raise ValueError(f"valid shape {valid.shape} != grid shape {coords.shape[1:]}")
        require_finite(coords, "WarpField.coords")
        object.__setattr__(self, "coords", _frozen(coords))
        frozen_valid = valid.copy()
        frozen_valid.setflags(write=False)
        object.__setattr__(self, "valid", frozen_valid)


@dataclass(frozen=True)
class ReprojectionResult:
    """Forward-then-back reprojection of a reference depth map.

    depth_roundtrip is the reference-frame depth of the back-projected
    source sample, i.e. the source view's opinion of the reference
    pixel's depth; fusion compares it against the predicted depth.
    """

    p_src: np.ndarray  # (2, H, W) coordinates in the source image
    p_roundtrip: np.ndarray  # (2, H, W) coordinates back in the reference image
    valid: np.ndarray  # (H, W) bool
    depth_roundtrip: np.ndarray | None = None  # (H, W), 0 where invalid

    def residuals(self) -> np.ndarray:
        """Euclidean round-trip error in pixels; 0 where invalid."""
        h, w = self.valid.shape
        grid = pixel_grid(h, w)
        err = np.linalg.norm(self.p_roundtrip - grid, axis=0)
        return np.where(self.valid, err, 0.0)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(2, H, W) array of pixel-centre coordinates, x first."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys])


def _back_project(cam: CameraModel, coords: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Pixels (2, ...) at camera-frame depths (...) -> world points (3, ...)."""
    ones = np.ones_like(coords[0])
    ph = np.stack([coords[0], coords[1], ones])
    rays = np.einsum("ij,j...->i...", np.linalg.inv(cam.K), ph)
    cam_pts = rays * depths[None]
    t = cam.t.reshape((3,) + (1,) * depths.ndim)
    return np.einsum("ji,j...->i...", cam.R, cam_pts - t)


def back_project(cam: CameraModel, coords: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Lift pixels (2, ...) at camera-frame depths (...) to world points (3, ...)."""
    coords = np.asarray(coords, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if coords.shape[0] != 2 or coords.shape[1:] != depths.shape:
        raise ValueError(
            f"coords must be (2, ...) matching depths, got {coords.shape} and {depths.shape}"
        )
    return _back_project(cam, coords, depths)


def _project(cam: CameraModel, world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World points (3, ...) -> pixel coords (2, ...) and camera-frame depths."""
    t = cam.t.reshape((3,) + (1,) * (world.ndim - 1))
    cam_pts = np.einsum("ij,j...->i...", cam.R, world) + t
    z = cam_pts[2]
    safe_z = np.where(np.abs(z) > 1e-12, z, 1.0)
    ph = np.einsum("ij,j...->i...", cam.K, cam_pts)
    coords = ph[:2] / safe_z[None]
    coords = np.where(np.abs(z)[None] > 1e-12, coords, 0.0)
    return coords, z


def _warp_depths(
    ref: CameraModel, src: CameraModel, coords: np.ndarray, depths: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    world = _back_project(ref, coords, depths)
    return _project(src, world)


def warp_pixel(
    p: np.ndarray, depth: float, ref: CameraModel, src: CameraModel
) -> tuple[np.ndarray, bool]:
    """Map one reference pixel at a given depth into the source image.

    Returns the source coordinates and whether the point sits in front
    of the source camera. Image-bounds checking is the sampler's job.
    """
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    coords = np.asarray(p, dtype=np.float64).reshape(2, 1)
    out, z = _warp_depths(ref, src, coords, np.full((1,), float(depth)))
    return out[:, 0], bool(z[0] > 1e-12)


def warp_grid(
    ref: CameraModel,
    src: CameraModel,
    hyps: DepthHypotheses,
    src_shape: tuple[int, int],
) -> list[WarpField]:
    """Plane-sweep warp of the full reference grid, one field per hypothesis.

    Validity requires positive source depth and coordinates inside
    [0, W_src-1] x [0, H_src-1]. Invalid coordinates are zeroed so every
    output stays finite.
    """
    m, h, w = hyps.values.shape
    src_h, src_w = int(src_shape[0]), int(src_shape[1])
    grid = pixel_grid(h, w)
    coords = np.broadcast_to(grid[:, None], (2, m, h, w))
    out, z = _warp_depths(ref, src, coords, hyps.values)
    in_bounds = (
        (out[0] >= -_BOUNDS_EPS)
        & (out[0] <= src_w - 1.0 + _BOUNDS_EPS)
        & (out[1] >= -_BOUNDS_EPS)
        & (out[1] <= src_h - 1.0 + _BOUNDS_EPS)
    )
    valid = (z > 1e-12) & in_bounds
    out = np.where(valid[None], out, 0.0)
    return [WarpField(coords=out[:, i], valid=valid[i]) for i in range(m)]


def grid_sample(feature: np.ndarray, warp: WarpField) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample (C, H, W) at warp coordinates.

    Returns (C, H', W') samples and an (H', W') mask. Locations that are
    out of bounds or already invalid in the warp produce exact zeros and
    a False mask.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 3:
        raise ValueError(f"feature must be (C, H, W), got shape {feature.shape}")
    _, h, w = feature.shape
    x, y = warp.coords[0], warp.coords[1]
    in_bounds = (
        (x >= -_BOUNDS_EPS)
        & (x <= w - 1.0 + _BOUNDS_EPS)
        & (y >= -_BOUNDS_EPS)
        & (y <= h - 1.0 + _BOUNDS_EPS)
    )
    mask = warp.valid & in_bounds
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    out = (
        feature[:, y0, x0] * w00
        + feature[:, y0, x1] * w01
        + feature[:, y1, x0] * w10
        + feature[:, y1, x1] * w11
    )
    out = np.where(mask[None], out, 0.0)
    return require_finite(out, "grid_sample output"), mask


def _sample_depth_with_guard(
    depth: np.ndarray, coords: np.ndarray, rel_tol: float = 0.01
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear depth lookup that refuses to blend across discontinuities.

    A sample is invalid when the depths actually blended (corners with
    non-zero bilinear weight) spread by more than rel_tol of their
    minimum, or when any blended depth is non-positive. Samples that
    land exactly on a pixel centre therefore never trip the guard.
    """
    h, w = depth.shape
    x, y = coords[0], coords[1]
    in_bounds = (
        (x >= -_BOUNDS_EPS)
        & (x <= w - 1.0 + _BOUNDS_EPS)
        & (y >= -_BOUNDS_EPS)
        & (y <= h - 1.0 + _BOUNDS_EPS)
    )
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    corners = np.stack([depth[y0, x0], depth[y0, x1], depth[y1, x0], depth[y1, x1]])
    weights = np.stack(
        [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx]
    )
    # Corners below the weight floor contribute O(1e-12) to the blend and
    # must not veto smoothness, or exact-centre samples would inherit the
    # guard behaviour of pixels they do not actually use.
    used = weights > 1e-12
    lo = np.where(used, corners, np.inf).min(axis=0)
    hi = np.where(used, corners, -np.inf).max(axis=0)
    smooth = (lo > 0.0) & ((hi - lo) <= rel_tol * np.maximum(lo, 1e-12))
    value = (corners * weights).sum(axis=0)
    valid = in_bounds & smooth
    return np.where(valid, value, 0.0), valid


def reproject_round_trip(
    depth_ref: np.ndarray,
    ref: CameraModel,
    src: CameraModel,
    depth_src: np.ndarray,
    p_grid: np.ndarray | None = None,
) -> ReprojectionResult:
    """Project reference pixels into the source and pull them back.

    Each reference pixel p is lifted with depth_ref and projected into
    the source view (p_src); the source depth map is sampled bilinearly
    at p_src and used to back-project, landing at p_roundtrip in the
    reference image. On geometrically consistent depth maps the round
    trip reproduces p; the residual measures cross-view consistency.

    The valid mask excludes non-positive reference depths, points behind
    either camera, samples outside the source frame, and samples whose
    bilinear neighbourhood crosses a depth discontinuity (> 1% relative
    spread).
    """
    depth_ref = np.asarray(depth_ref, dtype=np.float64)
    depth_src = np.asarray(depth_src, dtype=np.float64)
    if depth_ref.ndim != 2 or depth_src.ndim != 2:
        raise ValueError(
            f"depth maps must be 2-d, got {depth_ref.shape} and {depth_src.shape}"
        )
    h, w = depth_ref.shape
    grid = pixel_grid(h, w) if p_grid is None else np.asarray(p_grid, dtype=np.float64)
    if grid.shape != (2, h, w):
        raise ValueError(f"p_grid must be (2, {h}, {w}), got {grid.shape}")

    valid = depth_ref > 0.0
    safe_ref = np.where(valid, depth_ref, 1.0)
    p_src, z_src = _warp_depths(ref, src, grid, safe_ref)
    valid &= z_src > 1e-12
    d_sampled, sample_ok = _sample_depth_with_guard(depth_src, p_src)
    valid &= sample_ok
    safe_src = np.where(valid, d_sampled, 1.0)
    p_rt, z_rt = _warp_depths(src, ref, p_src, safe_src)
    valid &= z_rt > 1e-12
    p_src = np.where(valid[None], p_src, 0.0)
    p_rt = np.where(valid[None], p_rt, 0.0)
    d_rt = np.where(valid, z_rt, 0.0)
    return ReprojectionResult(
        p_src=p_src, p_roundtrip=p_rt, valid=valid, depth_roundtrip=d_rt
    )


def make_hypotheses(
    stage: int,
    cam: CameraModel,
    count: int,
    shape: tuple[int, int],
    prev_depth: np.ndarray | None = None,
    prev_spacing: float | None = None,
) -> DepthHypotheses:
    """Depth samples for one cascade stage.

    Stage 1 spaces `count` values uniformly and inclusively over the
    camera's depth range, identically at every pixel. Later stages
    halve the spacing, upsample the previous stage's depth map to
    `shape`, and centre a `count`-sample window on it; windows are
    shifted (never reordered or compressed) so they stay inside the
    depth range.
    """
    h, w = int(shape[0]), int(shape[1])
    if count < 2:
        raise ValueError(f"need at least 2 hypotheses, got {count}")
    d_min, d_max = cam.depth_range
    if stage == 1:
        row = np.linspace(d_min, d_max, count)
        values = np.broadcast_to(row[:, None, None], (count, h, w)).copy()
        return DepthHypotheses(stage=1, values=values, spacing=float(row[1] - row[0]))
    if stage < 1:
        raise ValueError(f"stage must be >= 1, got {stage}")
    if prev_depth is None or prev_spacing is None:
        raise ValueError(f"stage {stage} needs prev_depth and prev_spacing")
    prev_depth = np.asarray(prev_depth, dtype=np.float64)
    if prev_depth.ndim != 2:
        raise ValueError(f"prev_depth must be 2-d, got shape {prev_depth.shape}")
    spacing = float(prev_spacing) / 2.0
    span = (count - 1) * spacing
    if span > d_max - d_min:
        raise ValueError(
            f"hypothesis window ({span} mm) exceeds depth range ({d_max - d_min} mm)"
        )
    centre = bilinear_resize(prev_depth[None], (h, w))[0]
    centre = np.clip(centre, d_min, d_max)
    offsets = (np.arange(count, dtype=np.float64) - (count - 1) / 2.0) * spacing
    values = centre[None] + offsets[:, None, None]
    shift_up = np.maximum(d_min - values[0], 0.0)
    shift_down = np.maximum(values[-1] - d_max, 0.0)
    values = values + (shift_up - shift_down)[None]
    return DepthHypotheses(stage=stage, values=values, spacing=spacing)
