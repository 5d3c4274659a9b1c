"""Plane-sweep cost volumes: construction, fusion, aggregation, readout.

A feature volume holds one view's features sampled at every depth
hypothesis of the reference grid. Matching cost across views is a
variance-style reduction against the reference volume; samples that
fell outside a source frustum are excluded and the per-sample mean is
renormalised, so a pixel seen by only some views is still comparable.
Pixels seen by no source get a large sentinel cost.

Cost volumes pass through two optional refinements before readout:
cross-stage aggregation that mixes the upsampled previous-stage volume
with the current one (stages 2+), and a small two-level 3-d U-Net with
a residual head (or an exact softmax bypass). Depth is winner-take-all:
the hypothesis with the highest probability, ties toward the smaller
index; its probability is the confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, DepthHypotheses, grid_sample, warp_grid
from .numerics import ConvSpec, SeededRng, bilinear_resize, conv2d, conv3d, phi, softmax_axis

__all__ = [
    "INVALID_COST",
    "FeatureVolume",
    "CostVolume",
    "ProbabilityVolume",
    "DepthMap",
    "DfgaParams",
    "UnetParams",
    "build_feature_volume",
    "reference_volume",
    "fuse_variance",
    "dfga",
    "regularize",
    "wta_depth",
]

INVALID_COST = 1.0e4  # sentinel for pixels no source view can see


@dataclass(frozen=True)
class FeatureVolume:
    """Features of one view sampled at each reference depth hypothesis."""

    data: np.ndarray  # (C, M, H, W)
    validity: np.ndarray  # (M, H, W) bool
    view_id: int = 0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        validity = np.asarray(self.validity, dtype=bool)
        if data.ndim != 4:
            raise ValueError(f"data must be (C, M, H, W), got shape {data.shape}")
        if validity.shape != data.shape[1:]:
            raise ValueError(
                f"validity shape {validity.shape} != volume shape {data.shape[1:]}"
            )
        if data[:, ~validity].any():
            raise ValueError("invalid samples must be exactly zero")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "validity", validity)


@dataclass(frozen=True)
class CostVolume:
    """Matching cost per hypothesis per pixel; lower is better."""

    data: np.ndarray  # (M, H, W)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"data must be (M, H, W), got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("cost volume contains non-finite values")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class ProbabilityVolume:
    """Per-pixel distribution over depth hypotheses (sums to 1 along axis 0)."""

    data: np.ndarray  # (M, H, W)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"data must be (M, H, W), got shape {data.shape}")
        if (data < -1e-12).any():
            raise ValueError("probabilities must be non-negative")
        sums = data.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("probabilities must sum to 1 along the hypothesis axis")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class DepthMap:
    """Depth and winner probability per reference pixel."""

    depth: np.ndarray  # (H, W)
    confidence: np.ndarray  # (H, W)

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        confidence = np.asarray(self.confidence, dtype=np.float64)
        if depth.ndim != 2 or confidence.shape != depth.shape:
            raise ValueError(
                f"depth and confidence must be matching 2-d maps, got "
                f"{depth.shape} and {confidence.shape}"
            )
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "confidence", confidence)


@dataclass(frozen=True)
class DfgaParams:
    """Convolutions for cross-stage cost aggregation.

    conv_coarse reads the upsampled previous-stage volume, conv_fine the
    current one; conv_mix is the 1x1 reduction over the concatenation
    [coarse branch, fine branch, raw current volume].
    """

    conv_coarse: ConvSpec
    conv_fine: ConvSpec
    conv_mix: ConvSpec

    def __post_init__(self) -> None:
        m = self.conv_fine.kernel.shape[0]
        if self.conv_fine.kernel.shape[1] != m:
            raise ValueError("conv_fine must map M -> M channels")
        if self.conv_coarse.kernel.shape[0] != m:
            raise ValueError("conv_coarse must output M channels")
        if self.conv_mix.kernel.shape[:2] != (m, 3 * m):
            raise ValueError(
                f"conv_mix must map 3M -> M channels, got {self.conv_mix.kernel.shape[:2]}"
            )
        if self.conv_mix.kernel.shape[2] != 1:
            raise ValueError("conv_mix must be a 1x1 convolution")

    @classmethod
    def seeded(cls, rng: SeededRng, prev_count: int, count: int) -> "DfgaParams":
        return cls(
            conv_coarse=ConvSpec.seeded(rng.substream("coarse"), count, prev_count, 3),
            conv_fine=ConvSpec.seeded(rng.substream("fine"), count, count, 3),
            conv_mix=ConvSpec.seeded(rng.substream("mix"), count, 3 * count, 1),
        )


@dataclass(frozen=True)
class UnetParams:
    """Two-level 3-d U-Net weights; bypass skips the network entirely."""

    enc1: ConvSpec | None
    enc2: ConvSpec | None
    dec1: ConvSpec | None
    dec0: ConvSpec | None
    head: ConvSpec | None
    bypass: bool = False

    @classmethod
    def seeded(cls, rng: SeededRng) -> "UnetParams":
        return cls(
            enc1=ConvSpec.seeded(rng.substream("enc1"), 4, 1, 3, spatial_ndim=3, stride=2),
            enc2=ConvSpec.seeded(rng.substream("enc2"), 8, 4, 3, spatial_ndim=3, stride=2),
            dec1=ConvSpec.seeded(rng.substream("dec1"), 4, 8, 3, spatial_ndim=3),
            dec0=ConvSpec.seeded(rng.substream("dec0"), 4, 4, 3, spatial_ndim=3),
            head=ConvSpec.seeded(rng.substream("head"), 1, 4, 3, spatial_ndim=3),
            bypass=False,
        )

    @classmethod
    def softmax_bypass(cls) -> "UnetParams":
        return cls(enc1=None, enc2=None, dec1=None, dec0=None, head=None, bypass=True)


def build_feature_volume(
    feature: np.ndarray,
    ref: CameraModel,
    src: CameraModel,
    hyps: DepthHypotheses,
    view_id: int = 0,
) -> FeatureVolume:
    """Warp one source view's features onto every reference hypothesis.

    Samples outside the source frustum are exactly zero with validity
    False; a fully out-of-frustum source yields an all-zero volume.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 3:
        raise ValueError(f"feature must be (C, H, W), got shape {feature.shape}")
    c, src_h, src_w = feature.shape
    m, h, w = hyps.values.shape
    fields = warp_grid(ref, src, hyps, src_shape=(src_h, src_w))
    data = np.zeros((c, m, h, w))
    validity = np.zeros((m, h, w), dtype=bool)
    for i, field in enumerate(fields):
        data[:, i], validity[i] = grid_sample(feature, field)
    return FeatureVolume(data=data, validity=validity, view_id=view_id)


def reference_volume(feature: np.ndarray, count: int, view_id: int = 0) -> FeatureVolume:
    """Reference features broadcast along the hypothesis axis, all valid."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 3:
        raise ValueError(f"feature must be (C, H, W), got shape {feature.shape}")
    c, h, w = feature.shape
    data = np.broadcast_to(feature[:, None], (c, count, h, w)).copy()
    return FeatureVolume(data=data, validity=np.ones((count, h, w), dtype=bool), view_id=view_id)


def fuse_variance(volumes: list[FeatureVolume], mode: str = "squared") -> CostVolume:
    """Reduce per-view feature volumes to one cost volume.

    volumes[0] is the reference. "literal" averages the signed
    differences (V_i - V_0) over valid sources, "squared" their squares;
    both then average over channels. Sources are accumulated in list
    order, so the reduction order is deterministic. Pixels with no valid
    source sample get INVALID_COST.
    """
    if mode not in ("literal", "squared"):
        raise ValueError(f"mode must be 'literal' or 'squared', got {mode!r}")
    if len(volumes) < 2:
        raise ValueError(f"need a reference and at least one source, got {len(volumes)}")
    ref = volumes[0]
    shape = ref.data.shape
    for vol in volumes[1:]:
        if vol.data.shape != shape:
            raise ValueError(f"volume shape {vol.data.shape} != reference shape {shape}")
    acc = np.zeros(shape[1:])  # (M, H, W), channel mean accumulated per source
    count = np.zeros(shape[1:])
    for vol in volumes[1:]:
        valid = vol.validity & ref.validity
        diff = vol.data - ref.data
        if mode == "squared":
            diff = diff * diff
        acc += np.where(valid, diff.mean(axis=0), 0.0)
        count += valid
    fused = np.divide(acc, count, out=np.full(shape[1:], INVALID_COST), where=count > 0)
    return CostVolume(data=fused)


def dfga(cost: CostVolume, prev_cost: CostVolume, params: DfgaParams) -> CostVolume:
    """Mix the current cost volume with the upsampled previous-stage one.

    The previous volume is treated as an M_prev-channel image, resized
    to the current grid, and convolved; the current volume is convolved
    in a second branch; a 1x1 convolution reduces the concatenation
    [coarse, fine, current] back to M hypotheses.
    """
    m, h, w = cost.data.shape
    if params.conv_fine.kernel.shape[0] != m:
        raise ValueError(
            f"params built for M={params.conv_fine.kernel.shape[0]}, cost has M={m}"
        )
    if prev_cost.data.shape[0] != params.conv_coarse.kernel.shape[1]:
        raise ValueError(
            f"previous volume has {prev_cost.data.shape[0]} hypotheses, params expect "
            f"{params.conv_coarse.kernel.shape[1]}"
        )
    up = bilinear_resize(prev_cost.data, (h, w))
    coarse = conv2d(up, params.conv_coarse)
    fine = conv2d(cost.data, params.conv_fine)
    mixed = conv2d(np.concatenate([coarse, fine, cost.data], axis=0), params.conv_mix)
    return CostVolume(data=mixed)


def _elu(x: np.ndarray) -> np.ndarray:
    return phi(x) - 1.0


def _upsample2_3d(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), 2, axis=3)


def _pad_to_multiple(x: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    dims = x.shape
    pads = tuple((-d) % multiple for d in dims)
    if any(pads):
        x = np.pad(x, tuple((0, p) for p in pads))
    return x, dims


def regularize(cost: CostVolume, params: UnetParams) -> ProbabilityVolume:
    """Turn cost into a per-pixel depth distribution.

    Bypass mode is exactly softmax(-cost) along the hypothesis axis.
    Otherwise a two-level 3-d U-Net (stride-2 encoder 1->4->8, nearest
    upsampling with additive skips, 1-channel head) produces a residual
    that is added to the cost before the softmax; volumes whose sides
    are not multiples of 4 are zero-padded and cropped back.
    """
    if params.bypass:
        return ProbabilityVolume(data=softmax_axis(-cost.data, axis=0))
    if any(spec is None for spec in (params.enc1, params.enc2, params.dec1, params.dec0, params.head)):
        raise ValueError("non-bypass UnetParams must define all five convolutions")
    padded, dims = _pad_to_multiple(cost.data, 4)
    x = padded[None]
    e1 = _elu(conv3d(x, params.enc1))
    e2 = _elu(conv3d(e1, params.enc2))
    d1 = _elu(conv3d(_upsample2_3d(e2), params.dec1)) + e1
    d0 = _elu(conv3d(_upsample2_3d(d1), params.dec0))
    delta = conv3d(d0, params.head)[0]
    refined = padded + delta
    refined = refined[: dims[0], : dims[1], : dims[2]]
    return ProbabilityVolume(data=softmax_axis(-refined, axis=0))


def wta_depth(prob: ProbabilityVolume, hyps: DepthHypotheses) -> DepthMap:
    """Winner-take-all readout: argmax hypothesis, ties toward the smaller index."""
    if prob.data.shape != hyps.values.shape:
        raise ValueError(
            f"probability shape {prob.data.shape} != hypothesis shape {hyps.values.shape}"
        )
    idx = prob.data.argmax(axis=0)
    depth = np.take_along_axis(hyps.values, idx[None], axis=0)[0]
    confidence = np.take_along_axis(prob.data, idx[None], axis=0)[0]
    return DepthMap(depth=depth, confidence=confidence)
