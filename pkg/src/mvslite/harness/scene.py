"""Synthetic plane scenes: seeded value-noise texture, ring rig, analytic depth.

A scene is a textured plane observed by a reference camera at the
origin and sources on a ring of radius `baseline` in the z=0 plane
(angle step 360 / max(N-1, 4) degrees, all cameras axis-aligned). Every
image is rendered by intersecting each pixel ray with the plane
analytically and evaluating one shared procedural texture at the
world-space hit point, so the views are exactly photoconsistent up to
the bilinear interpolation error of the discrete image grids, and the
per-view depth maps are closed-form.

The texture is value noise: per-octave lattices of seeded uniform
values on the plane, blended with smoothstep weights. It is C^1 with
bounded curvature, which keeps that interpolation error small while
leaving enough gradient for the plane sweep to discriminate depths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import (
    CameraModel,
    WarpField,
    grid_sample,
    pixel_grid,
    reproject_round_trip,
)
from ..numerics import SeededRng, require_finite
from .fileio import read_cam, read_pfm, write_cam, write_pfm

__all__ = [
    "SceneSpec",
    "ValueNoiseTexture",
    "SyntheticScene",
    "SceneData",
    "generate_scene",
    "photoconsistency_error",
    "save_scene",
    "load_scene",
]

_OCTAVE_SHIFT = 0.37  # lattice offset per octave; decorrelates the flat corners


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for generate_scene; defaults match the desk-scale test scenes.

    The default focal and baseline put the plane at integer disparity
    (focal * baseline / plane_depth = 8 px, still integer after each
    stage's downscaling), so the true-depth warp lands exactly on
    source pixels and plane-sweep checks see zero interpolation noise.
    """

    image_shape: tuple[int, int] = (64, 64)
    n_views: int = 3
    plane_depth: float = 600.0
    plane_normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    baseline: float = 20.0
    focal: float = 240.0
    depth_range: tuple[float, float] = (425.0, 935.0)
    cell_mm: float = 24.0
    octaves: int = 1
    contrast: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        h, w = (int(v) for v in self.image_shape)
        if h < 4 or w < 4:
            raise ValueError(f"image_shape must be at least 4x4, got {self.image_shape}")
        if self.n_views < 2:
            raise ValueError(f"need at least 2 views, got {self.n_views}")
        if self.plane_depth <= 0:
            raise ValueError(f"plane_depth must be positive, got {self.plane_depth}")
        n = np.asarray(self.plane_normal, dtype=np.float64)
        if n.shape != (3,) or np.linalg.norm(n) < 1e-12:
            raise ValueError(f"plane_normal must be a non-zero 3-vector, got {self.plane_normal}")
        if self.baseline <= 0 or self.focal <= 0 or self.cell_mm <= 0:
            raise ValueError(
                f"baseline, focal, cell_mm must be positive, got "
                f"{self.baseline}, {self.focal}, {self.cell_mm}"
            )
        d_min, d_max = self.depth_range
        if not 0 < d_min < d_max:
            raise ValueError(f"bad depth_range {self.depth_range}")
        if self.octaves < 1:
            raise ValueError(f"octaves must be >= 1, got {self.octaves}")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError(f"contrast must be in (0, 1], got {self.contrast}")
        object.__setattr__(self, "image_shape", (h, w))
        object.__setattr__(self, "plane_normal", tuple(float(v) for v in n))
        object.__setattr__(self, "depth_range", (float(d_min), float(d_max)))


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class ValueNoiseTexture:
    """Smoothstep-interpolated noise lattices over plane coordinates (mm)."""

    cell_mm: float
    amplitudes: tuple[float, ...]
    origins: tuple[tuple[int, int], ...]  # (ix0, iy0) of each lattice
    lattices: tuple[np.ndarray, ...]

    def sample(self, x_mm: np.ndarray, y_mm: np.ndarray) -> np.ndarray:
        """Evaluate the noise at world plane coordinates; output in [0, 1]."""
        x_mm = np.asarray(x_mm, dtype=np.float64)
        y_mm = np.asarray(y_mm, dtype=np.float64)
        acc = np.zeros(np.broadcast(x_mm, y_mm).shape)
        for k, (lattice, (ix0, iy0), amp) in enumerate(
            zip(self.lattices, self.origins, self.amplitudes)
        ):
            scale = 2.0**k / self.cell_mm
            shift = _OCTAVE_SHIFT * k
            ux = x_mm * scale + shift
            uy = y_mm * scale + shift
            ix = np.floor(ux).astype(np.int64) - ix0
            iy = np.floor(uy).astype(np.int64) - iy0
            ny, nx = lattice.shape
            if ix.min() < 0 or iy.min() < 0 or ix.max() + 1 >= nx or iy.max() + 1 >= ny:
                raise ValueError("texture lattice does not cover the queried points")
            sx = _smoothstep(ux - np.floor(ux))
            sy = _smoothstep(uy - np.floor(uy))
            v = (
                lattice[iy, ix] * (1.0 - sy) * (1.0 - sx)
                + lattice[iy, ix + 1] * (1.0 - sy) * sx
                + lattice[iy + 1, ix] * sy * (1.0 - sx)
                + lattice[iy + 1, ix + 1] * sy * sx
            )
            acc += amp * v
        return acc / sum(self.amplitudes)


@dataclass(frozen=True)
class SyntheticScene:
    """Rendered views, cameras, analytic per-view depth, and the texture."""

    spec: SceneSpec
    texture: ValueNoiseTexture
    cameras: tuple[CameraModel, ...]
    images: tuple[np.ndarray, ...]
    gt_depth: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class SceneData:
    """A scene as loaded from disk; gt_depth is None when no gt/ directory exists."""

    images: tuple[np.ndarray, ...]
    cameras: tuple[CameraModel, ...]
    gt_depth: tuple[np.ndarray, ...] | None


def _ring_centers(spec: SceneSpec) -> list[np.ndarray]:
    centers = [np.zeros(3)]
    step = 2.0 * math.pi / max(spec.n_views - 1, 4)
    for i in range(spec.n_views - 1):
        a = i * step
        centers.append(
            np.array([spec.baseline * math.cos(a), spec.baseline * math.sin(a), 0.0])
        )
    return centers


def _camera_at(spec: SceneSpec, center: np.ndarray) -> CameraModel:
    h, w = spec.image_shape
    K = np.array(
        [
            [spec.focal, 0.0, (w - 1) / 2.0],
            [0.0, spec.focal, (h - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraModel(K=K, R=np.eye(3), t=-center, depth_range=spec.depth_range)


def _intersect_plane(
    spec: SceneSpec, center: np.ndarray, view: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-plane hit points (3, H, W) and camera-frame depths (H, W)."""
    h, w = spec.image_shape
    grid = pixel_grid(h, w)
    dirs = np.empty((3, h, w))
    dirs[0] = (grid[0] - (w - 1) / 2.0) / spec.focal
    dirs[1] = (grid[1] - (h - 1) / 2.0) / spec.focal
    dirs[2] = 1.0
    n = np.asarray(spec.plane_normal)
    n = n / np.linalg.norm(n)
    anchor = np.array([0.0, 0.0, spec.plane_depth])
    denom = np.einsum("i,ihw->hw", n, dirs)
    if denom.min() <= 1e-9:
        raise ValueError(f"view {view}: plane is edge-on or behind some pixel rays")
    s = float(n @ (anchor - center)) / denom
    if s.min() <= 0:
        raise ValueError(f"view {view}: plane lies behind the camera")
    points = center[:, None, None] + dirs * s[None]
    # axis-aligned rig: ray parameter s equals camera-frame depth
    return points, s


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic scene synthesis; see the module docstring."""
    centers = _ring_centers(spec)
    hits = [_intersect_plane(spec, c, v) for v, c in enumerate(centers)]
    rng = SeededRng(spec.seed)
    amplitudes = tuple(0.5**k for k in range(spec.octaves))
    xs = np.concatenate([points[0].ravel() for points, _ in hits])
    ys = np.concatenate([points[1].ravel() for points, _ in hits])
    origins = []
    lattices = []
    for k in range(spec.octaves):
        scale = 2.0**k / spec.cell_mm
        shift = _OCTAVE_SHIFT * k
        ix0 = math.floor(xs.min() * scale + shift) - 1
        ix1 = math.floor(xs.max() * scale + shift) + 2
        iy0 = math.floor(ys.min() * scale + shift) - 1
        iy1 = math.floor(ys.max() * scale + shift) + 2
        origins.append((ix0, iy0))
        lattices.append(
            rng.substream(f"octave{k}").uniform((iy1 - iy0 + 1, ix1 - ix0 + 1))
        )
    texture = ValueNoiseTexture(
        cell_mm=spec.cell_mm,
        amplitudes=amplitudes,
        origins=tuple(origins),
        lattices=tuple(lattices),
    )
    images = []
    depths = []
    for points, depth in hits:
        albedo = texture.sample(points[0], points[1])
        image = 0.5 + spec.contrast * (albedo - 0.5)
        images.append(require_finite(image, "rendered image"))
        depths.append(depth)
    cameras = tuple(_camera_at(spec, c) for c in centers)
    return SyntheticScene(
        spec=spec,
        texture=texture,
        cameras=cameras,
        images=tuple(images),
        gt_depth=tuple(depths),
    )


def photoconsistency_error(scene: SyntheticScene | SceneData) -> float:
    """Max |warped source - reference| over all sources and jointly valid pixels.

    The rendering self-check: each source image is sampled at the
    ground-truth warp of the reference grid, so on a correct scene the
    result is pure bilinear interpolation error of the source grids.
    """
    images, cameras = scene.images, scene.cameras
    gt = scene.gt_depth
    if gt is None:
        raise ValueError("photoconsistency check needs ground-truth depth")
    worst = 0.0
    ref_img = images[0]
    for i in range(1, len(images)):
        rr = reproject_round_trip(gt[0], cameras[0], cameras[i], gt[i])
        field = WarpField(coords=rr.p_src, valid=rr.valid)
        warped, mask = grid_sample(images[i][None], field)
        if mask.any():
            worst = max(worst, float(np.abs(warped[0] - ref_img)[mask].max()))
    return worst


def save_scene(scene: SyntheticScene, root: str | Path, hypothesis_count: int = 48) -> None:
    """Write images/, cams/, and gt/ under root (PFM images, cam text files)."""
    root = Path(root)
    for sub in ("images", "cams", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, (image, cam, depth) in enumerate(zip(scene.images, scene.cameras, scene.gt_depth)):
        write_pfm(image, root / "images" / f"{i:08d}.pfm")
        write_cam(cam, root / "cams" / f"{i:08d}_cam.txt", hypothesis_count)
        write_pfm(depth, root / "gt" / f"{i:08d}.pfm")


def load_scene(root: str | Path, hypothesis_count: int = 48) -> SceneData:
    """Read a scene directory written by save_scene (gt/ optional)."""
    root = Path(root)
    image_paths = sorted((root / "images").glob("*.pfm"))
    if not image_paths:
        raise ValueError(f"{root}: no images/*.pfm found")
    images = []
    cameras = []
    gt: list[np.ndarray] | None = [] if (root / "gt").is_dir() else None
    for path in image_paths:
        images.append(read_pfm(path))
        cam_path = root / "cams" / f"{path.stem}_cam.txt"
        if not cam_path.exists():
            raise ValueError(f"{cam_path}: missing camera for image {path.name}")
        cameras.append(read_cam(cam_path, hypothesis_count))
        if gt is not None:
            gt_path = root / "gt" / path.name
            if not gt_path.exists():
                raise ValueError(f"{gt_path}: missing ground truth for image {path.name}")
            gt.append(read_pfm(gt_path))
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"{root}: images disagree on shape: {sorted(shapes)}")
    return SceneData(
        images=tuple(images),
        cameras=tuple(cameras),
        gt_depth=None if gt is None else tuple(gt),
    )
