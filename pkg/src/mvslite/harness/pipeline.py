"""Coarse-to-fine depth estimation over a scene, with artifacts on disk.

Every view takes one turn as the reference (remaining views become its
sources in index order). A reference pass runs the three-stage cascade:
feature extraction, cross-view attention, plane-sweep cost volume,
guided aggregation against the previous stage, regularization, and
winner-take-all depth. Passes are independent and may run on a thread
pool; results are gathered in view order so outputs never depend on the
worker count. After all passes, final depth maps are cross-checked and
fused into one point cloud, losses are averaged over references, and
the cloud is scored against the ground-truth geometry when available.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..attention import AttentionBlockParams, amt_stage, make_stage_params
from ..costvolume import (
    DfgaParams,
    UnetParams,
    build_feature_volume,
    dfga,
    fuse_variance,
    reference_volume,
    regularize,
    wta_depth,
)
from ..geometry import back_project, make_hypotheses, pixel_grid, reproject_round_trip
from ..losses import (
    ce_loss,
    feature_metric_weight,
    fm_loss,
    one_hot_ground_truth,
    total_loss,
)
from ..numerics import SeededRng, bilinear_resize
from .config import PipelineConfig
from .features import STAGE_CHANNELS, FpnParams, extract_features, stage_shape
from .fileio import write_pfm, write_ply
from .fusion import PointCloud, fuse_depth_maps
from .metrics import MetricsReport, evaluate_clouds
from .scene import SceneData

__all__ = ["StageOutput", "ViewResult", "PipelineResult", "run_pipeline", "report_text"]

_STAGES = (1, 2, 3)


@dataclass(frozen=True)
class StageOutput:
    """One cascade stage of one reference pass."""

    stage: int
    depth: np.ndarray
    confidence: np.ndarray
    spacing: float
    ce: float | None
    fm: float | None


@dataclass(frozen=True)
class ViewResult:
    view: int
    stages: tuple[StageOutput, ...]


@dataclass(frozen=True)
class PipelineResult:
    views: tuple[ViewResult, ...]
    cloud: PointCloud
    ce_per_stage: tuple[float, ...] | None
    fm_per_stage: tuple[float, ...] | None
    total: float | None
    metrics: MetricsReport | None
    report: dict


@dataclass(frozen=True)
class _Params:
    """Seeded parameters shared by every reference pass."""

    fpn: FpnParams | None
    amt: dict[int, list[AttentionBlockParams]]
    dfga: dict[int, DfgaParams]
    unet: UnetParams


def _make_params(config: PipelineConfig) -> _Params:
    rng = SeededRng(config.seed)
    fpn = None if config.identity_features else FpnParams.seeded(rng.substream("fpn"))
    amt_rng = rng.substream("amt")
    amt = {
        stage: make_stage_params(config.amt_schedule, stage, STAGE_CHANNELS[stage - 1], amt_rng)
        for stage in _STAGES
    }
    counts = config.hypothesis_counts
    aggregation = {
        2: DfgaParams.seeded(rng.substream("dfga.s2"), counts[0], counts[1]),
        3: DfgaParams.seeded(rng.substream("dfga.s3"), counts[1], counts[2]),
    }
    unet = (
        UnetParams.softmax_bypass() if config.unet_bypass else UnetParams.seeded(rng.substream("unet"))
    )
    return _Params(fpn=fpn, amt=amt, dfga=aggregation, unet=unet)


def _reference_pass(
    config: PipelineConfig, params: _Params, scene: SceneData, order: list[int]
) -> ViewResult:
    images = [np.asarray(scene.images[i], dtype=np.float64) for i in order]
    cams = [scene.cameras[i] for i in order]
    gt = scene.gt_depth
    h, w = images[0].shape
    prev_depth = None
    prev_spacing = None
    prev_cost = None
    outputs = []
    for stage in _STAGES:
        try:
            sh, sw = stage_shape(h, w, stage)
            factor = sh / h
            scaled = [c.scaled(factor) for c in cams]
            feats_pre = [extract_features(im, stage, params.fpn) for im in images]
            feats = amt_stage(
                feats_pre, stage, config.amt_schedule, params.amt[stage],
                config.attention_normalized,
            )
            hyps = make_hypotheses(
                stage, scaled[0], config.hypothesis_counts[stage - 1], (sh, sw),
                prev_depth, prev_spacing,
            )
            volumes = [reference_volume(feats[0], hyps.count, view_id=order[0])]
            for i in range(1, len(order)):
                volumes.append(
                    build_feature_volume(feats[i], scaled[0], scaled[i], hyps, view_id=order[i])
                )
            cost = fuse_variance(volumes, config.fusion_mode)
            if stage >= 2:
                cost = dfga(cost, prev_cost, params.dfga[stage])
            prob = regularize(cost, params.unet)
            dm = wta_depth(prob, hyps)
            ce_value = None
            fm_value = None
            if gt is not None:
                gt_ref = bilinear_resize(np.asarray(gt[order[0]])[None], (sh, sw))[0]
                d_min, d_max = cams[0].depth_range
                in_range = (gt_ref >= d_min) & (gt_ref <= d_max)
                bundle = one_hot_ground_truth(gt_ref, in_range, hyps.values)
                ce_value = ce_loss(prob.data, bundle).value
                weight = np.zeros((sh, sw))
                for i in range(1, len(order)):
                    gt_src = bilinear_resize(np.asarray(gt[order[i]])[None], (sh, sw))[0]
                    rr = reproject_round_trip(gt_ref, scaled[0], scaled[i], gt_src)
                    weight += feature_metric_weight(feats_pre[0], feats[0], rr, config.fm_config)
                weight /= len(order) - 1
                fm_value = fm_loss(dm.depth, gt_ref, weight, bundle.valid).value
        except Exception as err:
            raise RuntimeError(f"view {order[0]} stage {stage}: {err}") from err
        outputs.append(
            StageOutput(
                stage=stage, depth=dm.depth, confidence=dm.confidence,
                spacing=hyps.spacing, ce=ce_value, fm=fm_value,
            )
        )
        prev_depth, prev_spacing, prev_cost = dm.depth, hyps.spacing, cost
    return ViewResult(view=order[0], stages=tuple(outputs))


def _ground_truth_cloud(scene: SceneData) -> PointCloud:
    points = []
    for cam, depth in zip(scene.cameras, scene.gt_depth):
        depth = np.asarray(depth, dtype=np.float64)
        keep = depth > 0.0
        if not keep.any():
            continue
        world = back_project(cam, pixel_grid(*depth.shape), depth)
        points.append(world[:, keep].T)
    if not points:
        return PointCloud(points=np.zeros((0, 3)))
    return PointCloud(points=np.concatenate(points, axis=0))


def run_pipeline(
    config: PipelineConfig,
    scene: SceneData,
    output_dir: str | Path | None = None,
) -> PipelineResult:
    """Run every reference pass, fuse, score, and optionally write artifacts."""
    n = len(scene.images)
    if n < 2:
        raise ValueError(f"need at least 2 views, got {n}")
    h, w = np.asarray(scene.images[0]).shape
    if h % 4 or w % 4:
        raise ValueError(f"image dimensions must be multiples of 4, got {h}x{w}")
    params = _make_params(config)
    orders = [[r] + [i for i in range(n) if i != r] for r in range(n)]

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            views = tuple(
                pool.map(lambda order: _reference_pass(config, params, scene, order), orders)
            )
    else:
        views = tuple(_reference_pass(config, params, scene, order) for order in orders)

    final_depth = [v.stages[-1].depth for v in views]
    final_conf = [v.stages[-1].confidence for v in views]
    clouds = [
        fuse_depth_maps(
            [final_depth[i] for i in order],
            [final_conf[i] for i in order],
            [scene.cameras[i] for i in order],
            config.fusion_thresholds,
        )
        for order in orders
    ]
    cloud = PointCloud(
        points=np.concatenate([c.points for c in clouds], axis=0),
        confidence=np.concatenate([c.confidence for c in clouds]),
    )

    ce_per_stage = fm_per_stage = None
    total = None
    metrics = None
    if scene.gt_depth is not None:
        ce_per_stage = tuple(
            float(np.mean([v.stages[s].ce for v in views])) for s in range(len(_STAGES))
        )
        fm_per_stage = tuple(
            float(np.mean([v.stages[s].fm for v in views])) for s in range(len(_STAGES))
        )
        total = total_loss(ce_per_stage, fm_per_stage, config.loss_weights)
        gt_cloud = _ground_truth_cloud(scene)
        if cloud.count > 0 and gt_cloud.count > 0:
            metrics = evaluate_clouds(cloud, gt_cloud, config.inlier_threshold)

    result = PipelineResult(
        views=views,
        cloud=cloud,
        ce_per_stage=ce_per_stage,
        fm_per_stage=fm_per_stage,
        total=total,
        metrics=metrics,
        report=_build_report(config, views, cloud, ce_per_stage, fm_per_stage, total, metrics),
    )
    if output_dir is not None:
        _write_artifacts(result, Path(output_dir))
    return result


def _build_report(config, views, cloud, ce_per_stage, fm_per_stage, total, metrics) -> dict:
    # worker count deliberately omitted: report bytes must not depend on it
    report = {
        "settings": {
            "seed": config.seed,
            "hypotheses": list(config.hypothesis_counts),
            "fusion_mode": config.fusion_mode,
            "identity_features": config.identity_features,
            "unet_bypass": config.unet_bypass,
            "attention_normalized": config.attention_normalized,
            "amt_intra": list(config.amt_schedule.intra),
            "amt_inter": list(config.amt_schedule.inter),
            "amt_rates": list(config.amt_schedule.rates),
        },
        "views": [
            {
                "view": v.view,
                "stages": [
                    {
                        "stage": s.stage,
                        "spacing_mm": s.spacing,
                        "ce": s.ce,
                        "fm": s.fm,
                    }
                    for s in v.stages
                ],
            }
            for v in views
        ],
        "fused_points": cloud.count,
    }
    if total is not None:
        report["losses"] = {
            "ce_per_stage": list(ce_per_stage),
            "fm_per_stage": list(fm_per_stage),
            "total": total,
        }
    if metrics is not None:
        report["metrics"] = {
            "accuracy_mm": metrics.accuracy,
            "completeness_mm": metrics.completeness,
            "overall_mm": metrics.overall,
        }
    return report


def report_text(result: PipelineResult) -> str:
    """The line-oriented `key = value` rendering of the run report."""
    lines = []

    def put(key: str, value) -> None:
        lines.append(f"{key} = {value!r}" if isinstance(value, str) else f"{key} = {value}")

    settings = result.report["settings"]
    for key in sorted(settings):
        value = settings[key]
        put(key, " ".join(str(v) for v in value) if isinstance(value, list) else value)
    for view in result.report["views"]:
        for stage in view["stages"]:
            prefix = f"view{view['view']}_stage{stage['stage']}"
            put(f"{prefix}_spacing_mm", stage["spacing_mm"])
            if stage["ce"] is not None:
                put(f"{prefix}_ce", stage["ce"])
                put(f"{prefix}_fm", stage["fm"])
    if result.total is not None:
        for s, (ce, fm) in enumerate(zip(result.ce_per_stage, result.fm_per_stage), start=1):
            put(f"stage{s}_ce", ce)
            put(f"stage{s}_fm", fm)
        put("total_loss", result.total)
    put("fused_points", result.cloud.count)
    if result.metrics is not None:
        put("accuracy_mm", result.metrics.accuracy)
        put("completeness_mm", result.metrics.completeness)
        put("overall_mm", result.metrics.overall)
    return "\n".join(lines) + "\n"


def _write_artifacts(result: PipelineResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for v in result.views:
        write_pfm(v.stages[-1].depth, out / f"depth_{v.view:08d}.pfm")
        write_pfm(v.stages[-1].confidence, out / f"confidence_{v.view:08d}.pfm")
    write_ply(result.cloud, out / "cloud.ply")
    (out / "metrics.txt").write_text(report_text(result), encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(result.report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
