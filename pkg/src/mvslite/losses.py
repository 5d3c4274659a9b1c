"""Supervision terms with analytic gradients.

Two per-stage losses drive the pipeline. The cross-entropy loss scores
the probability volume against a one-hot encoding of ground truth on
the hypothesis grid; its gradient with respect to the pre-softmax
scores is the familiar (P - G) / |valid|. The feature-metric loss
weights the absolute depth error by a per-pixel factor derived from
how much the attention stage improved cross-view feature agreement;
the weight is treated as a constant, so the depth gradient is a plain
weighted subgradient of |error|.

Everything here works on raw arrays and returns LossResult records so
the finite-difference checks can drive value and gradient through one
call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ReprojectionResult, WarpField, grid_sample
from .numerics import require_finite

__all__ = [
    "GroundTruthBundle",
    "FmWeightConfig",
    "LossWeights",
    "LossResult",
    "one_hot_ground_truth",
    "ce_loss",
    "feature_metric_weight",
    "fm_loss",
    "total_loss",
]

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class GroundTruthBundle:
    """Ground truth resampled onto one stage's hypothesis grid."""

    depth: np.ndarray  # (H, W)
    one_hot: np.ndarray  # (M, H, W); zero columns outside the valid set
    valid: np.ndarray  # (H, W) bool, the supervised pixel set

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        one_hot = np.asarray(self.one_hot, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.ndim != 2 or one_hot.ndim != 3 or one_hot.shape[1:] != depth.shape:
            raise ValueError(
                f"inconsistent shapes: depth {depth.shape}, one_hot {one_hot.shape}"
            )
        if valid.shape != depth.shape:
            raise ValueError(f"valid shape {valid.shape} != depth shape {depth.shape}")
        sums = one_hot.sum(axis=0)
        if not np.array_equal(sums > 0.5, valid):
            raise ValueError("one_hot columns must be non-zero exactly on the valid set")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "one_hot", one_hot)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class FmWeightConfig:
    """Clamp and scale settings for the feature-metric weight."""

    upsilon_low: float = 0.6
    upsilon_high: float = 1.7
    eps: float = 1e-3
    signed_log: bool = False  # keep the sign of log(upsilon) instead of |log|

    def __post_init__(self) -> None:
        if not 0.0 < self.upsilon_low < self.upsilon_high:
            raise ValueError(
                f"need 0 < upsilon_low < upsilon_high, got "
                f"{self.upsilon_low}, {self.upsilon_high}"
            )
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass(frozen=True)
class LossWeights:
    """Per-stage multipliers for the total loss."""

    ce: tuple[float, ...] = (2.0, 2.0, 2.0)
    fm: tuple[float, ...] = (1.2, 1.2, 1.2)

    def __post_init__(self) -> None:
        ce = tuple(float(v) for v in self.ce)
        fm = tuple(float(v) for v in self.fm)
        if len(ce) != len(fm):
            raise ValueError(f"ce has {len(ce)} stages, fm has {len(fm)}")
        object.__setattr__(self, "ce", ce)
        object.__setattr__(self, "fm", fm)


@dataclass(frozen=True)
class LossResult:
    """Scalar loss, its gradient, and whether the valid set was empty."""

    value: float
    gradient: np.ndarray
    empty_valid_set: bool = False


def one_hot_ground_truth(
    depth_gt: np.ndarray, valid: np.ndarray, hyps_values: np.ndarray
) -> GroundTruthBundle:
    """Encode ground-truth depth as the nearest hypothesis per pixel.

    Distance ties resolve toward the smaller hypothesis index. Pixels
    whose ground truth falls outside the per-pixel hypothesis span are
    dropped from the valid set.
    """
    depth_gt = np.asarray(depth_gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    hyps_values = np.asarray(hyps_values, dtype=np.float64)
    if depth_gt.shape != hyps_values.shape[1:]:
        raise ValueError(
            f"depth shape {depth_gt.shape} != hypothesis grid {hyps_values.shape[1:]}"
        )
    if valid.shape != depth_gt.shape:
        raise ValueError(f"valid shape {valid.shape} != depth shape {depth_gt.shape}")
    in_range = (depth_gt >= hyps_values[0]) & (depth_gt <= hyps_values[-1])
    keep = valid & in_range
    idx = np.abs(hyps_values - depth_gt[None]).argmin(axis=0)
    m = hyps_values.shape[0]
    one_hot = (np.arange(m)[:, None, None] == idx[None]).astype(np.float64)
    one_hot *= keep[None]
    return GroundTruthBundle(depth=depth_gt, one_hot=one_hot, valid=keep)


def ce_loss(prob: np.ndarray, bundle: GroundTruthBundle) -> LossResult:
    """Mean cross-entropy over the valid set, with its pre-softmax gradient.

    The log argument is floored at 1e-12 so a zero-probability winner
    stays finite (bounding per-pixel loss by 12*ln 10). The gradient is
    exact for the unfloored loss: (P - G) / |valid| on valid pixels.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != bundle.one_hot.shape:
        raise ValueError(
            f"probability shape {prob.shape} != one-hot shape {bundle.one_hot.shape}"
        )
    count = int(bundle.valid.sum())
    if count == 0:
        return LossResult(value=0.0, gradient=np.zeros_like(prob), empty_valid_set=True)
    per_pixel = -(bundle.one_hot * np.log(prob + _LOG_FLOOR)).sum(axis=0)
    value = float(per_pixel[bundle.valid].sum() / count)
    grad = (prob - bundle.one_hot) * (bundle.valid[None] / count)
    return LossResult(value=value, gradient=require_finite(grad, "ce_loss gradient"))


def feature_metric_weight(
    feat_before: np.ndarray,
    feat_after: np.ndarray,
    reproj: ReprojectionResult,
    cfg: FmWeightConfig = FmWeightConfig(),
) -> np.ndarray:
    """Per-pixel weight from round-trip feature consistency.

    For each reference pixel p with round-trip landing point p'', the
    ratio of channel-mean differences

        upsilon = mean_c(A(p'') - A(p)) / (mean_c(B(p'') - B(p)) + eps)

    compares the attention-refined features A against the raw features
    B. |upsilon| is clamped into [upsilon_low, upsilon_high]; the weight
    is |log upsilon| (or the signed log under cfg.signed_log). Pixels
    with an invalid round trip get weight 0.
    """
    feat_before = np.asarray(feat_before, dtype=np.float64)
    feat_after = np.asarray(feat_after, dtype=np.float64)
    if feat_before.shape != feat_after.shape:
        raise ValueError(
            f"feature shapes differ: {feat_before.shape} vs {feat_after.shape}"
        )
    if feat_before.ndim != 3:
        raise ValueError(f"features must be (C, H, W), got {feat_before.shape}")
    if feat_before.shape[1:] != reproj.valid.shape:
        raise ValueError(
            f"feature grid {feat_before.shape[1:]} != reprojection grid {reproj.valid.shape}"
        )
    field = WarpField(coords=reproj.p_roundtrip, valid=reproj.valid)
    after_rt, mask = grid_sample(feat_after, field)
    before_rt, _ = grid_sample(feat_before, field)
    num = (after_rt - feat_after).mean(axis=0)
    den = (before_rt - feat_before).mean(axis=0) + cfg.eps
    upsilon = np.clip(np.abs(num / den), cfg.upsilon_low, cfg.upsilon_high)
    weight = np.log(upsilon) if cfg.signed_log else np.abs(np.log(upsilon))
    return require_finite(np.where(mask, weight, 0.0), "feature_metric_weight")


def fm_loss(
    depth: np.ndarray,
    depth_gt: np.ndarray,
    weight: np.ndarray,
    valid: np.ndarray,
) -> LossResult:
    """Weighted mean absolute depth error with its subgradient.

    gradient[p] = weight[p] * sign(depth - gt) / |valid| on valid
    pixels; the subgradient at exact equality is 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    depth_gt = np.asarray(depth_gt, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not depth.shape == depth_gt.shape == weight.shape == valid.shape:
        raise ValueError(
            f"shape mismatch: depth {depth.shape}, gt {depth_gt.shape}, "
            f"weight {weight.shape}, valid {valid.shape}"
        )
    count = int(valid.sum())
    if count == 0:
        return LossResult(value=0.0, gradient=np.zeros_like(depth), empty_valid_set=True)
    residual = depth - depth_gt
    value = float((weight * np.abs(residual))[valid].sum() / count)
    grad = np.where(valid, weight * np.sign(residual) / count, 0.0)
    return LossResult(value=value, gradient=require_finite(grad, "fm_loss gradient"))


def total_loss(
    ce_values: list[float] | tuple[float, ...],
    fm_values: list[float] | tuple[float, ...],
    weights: LossWeights = LossWeights(),
) -> float:
    """Weighted sum over stages: sum_l ce_w[l] * ce[l] + fm_w[l] * fm[l]."""
    ce_values = tuple(float(v) for v in ce_values)
    fm_values = tuple(float(v) for v in fm_values)
    if len(ce_values) != len(fm_values):
        raise ValueError(f"{len(ce_values)} CE stages vs {len(fm_values)} FM stages")
    if len(ce_values) > len(weights.ce):
        raise ValueError(
            f"{len(ce_values)} stages but weights defined for {len(weights.ce)}"
        )
    total = 0.0
    for stage in range(len(ce_values)):
        total += weights.ce[stage] * ce_values[stage] + weights.fm[stage] * fm_values[stage]
    if not math.isfinite(total):
        raise ValueError(f"total loss is not finite: {total}")
    return total
