"""Command-line interface: scene synthesis, pipeline runs, evaluation, checks.

Subcommands:
    synth            write a synthetic scene (images/, cams/, gt/)
    run              run the depth pipeline on a scene directory
    eval             score a predicted PLY against a ground-truth PLY
    gradcheck        loss-gradient finite-difference suite
    bench-attention  linear vs quadratic attention timing table

Settings resolve in three layers: built-in defaults, then an INI file
given with --config, then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from ..attention import AmtScheduleConfig
from .checks import attention_benchmark, ce_gradient_check, fm_gradient_check
from .config import PipelineConfig, load_config
from .fileio import read_ply
from .metrics import evaluate_clouds
from .pipeline import report_text, run_pipeline
from .scene import generate_scene, load_scene, save_scene

__all__ = ["main"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="INI settings file")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--fusion-mode", choices=("literal", "squared"), default=None,
        help="cost fusion formula",
    )
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--attention-normalized", dest="attention_normalized",
        action="store_const", const=True, default=None,
        help="normalized linear attention (default)",
    )
    group.add_argument(
        "--attention-literal", dest="attention_normalized",
        action="store_const", const=False,
        help="unnormalized linear attention",
    )
    parser.add_argument(
        "--amt-schedule", nargs=3, metavar=("s1=i,j", "s2=i,j", "s3=i,j"), default=None,
        help="intra,inter block counts per stage, e.g. s1=1,2 s2=1,1 s3=2,1",
    )
    parser.add_argument(
        "--unet-bypass", action="store_const", const=True, default=None,
        help="replace the regularizer with softmax(-cost)",
    )
    parser.add_argument(
        "--identity-features", action="store_const", const=True, default=None,
        help="use resized luminance instead of the feature network",
    )
    parser.add_argument("--workers", type=int, default=None, help="threads over views")


def _parse_schedule(tokens: list[str], base: AmtScheduleConfig) -> AmtScheduleConfig:
    per_stage: dict[int, tuple[int, int]] = {}
    for token in tokens:
        try:
            name, counts = token.split("=", 1)
            stage = int(name.removeprefix("s"))
            intra, inter = (int(t) for t in counts.split(","))
        except ValueError:
            raise ValueError(f"bad --amt-schedule token {token!r}; expected e.g. s1=1,2")
        if not name.startswith("s") or stage not in (1, 2, 3):
            raise ValueError(f"bad --amt-schedule token {token!r}; stages are s1, s2, s3")
        if stage in per_stage:
            raise ValueError(f"duplicate --amt-schedule stage s{stage}")
        per_stage[stage] = (intra, inter)
    if sorted(per_stage) != [1, 2, 3]:
        raise ValueError("--amt-schedule needs all of s1, s2, s3")
    return AmtScheduleConfig(
        intra=tuple(per_stage[s][0] for s in (1, 2, 3)),
        inter=tuple(per_stage[s][1] for s in (1, 2, 3)),
        rates=base.rates,
    )


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for name in ("fusion_mode", "attention_normalized", "unet_bypass",
                 "identity_features", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "amt_schedule", None) is not None:
        overrides["amt_schedule"] = _parse_schedule(args.amt_schedule, cfg.amt_schedule)
    return cfg.with_overrides(**overrides) if overrides else cfg


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    spec = dataclasses.replace(cfg.scene, seed=cfg.seed)
    scene = generate_scene(spec)
    save_scene(scene, args.output_dir, hypothesis_count=cfg.hypothesis_counts[0])
    print(f"wrote {len(scene.images)} views to {args.output_dir}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    scene = load_scene(args.scene_dir, hypothesis_count=cfg.hypothesis_counts[0])
    result = run_pipeline(cfg, scene, args.output_dir)
    sys.stdout.write(report_text(result))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    pred = read_ply(args.pred)
    gt = read_ply(args.gt)
    report = evaluate_clouds(pred, gt, cfg.inlier_threshold)
    print(f"accuracy_mm = {report.accuracy}")
    print(f"completeness_mm = {report.completeness}")
    print(f"overall_mm = {report.overall}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    rows = ce_gradient_check(cfg.seed) + fm_gradient_check(cfg.seed)
    worst = 0.0
    for row in rows:
        print(f"{row.name}_max_rel_err = {row.max_rel_err}")
        worst = max(worst, row.max_rel_err)
    ok = worst < 1e-6
    print(f"worst_rel_err = {worst}")
    print(f"status = {'pass' if ok else 'fail'}")
    return 0 if ok else 1


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    bench = attention_benchmark(seed=cfg.seed)
    small, large = bench["sizes"]
    for impl in ("linear", "quadratic"):
        for n in (small, large):
            print(f"{impl}_t{n}_s = {bench[impl][n]}")
        print(f"{impl}_ratio = {bench[f'{impl}_ratio']}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mvslite",
        description="Multi-view stereo depth estimation on synthetic desk scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic scene directory")
    _add_common(p_synth)
    p_synth.add_argument("--output-dir", required=True, metavar="DIR")
    p_synth.set_defaults(func=_cmd_synth)

    p_run = sub.add_parser("run", help="run the pipeline on a scene directory")
    p_run.add_argument("scene_dir", metavar="SCENE_DIR")
    _add_common(p_run)
    p_run.add_argument("--output-dir", required=True, metavar="DIR")
    _add_pipeline_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="score one PLY against another")
    p_eval.add_argument("pred", metavar="PRED_PLY")
    p_eval.add_argument("gt", metavar="GT_PLY")
    _add_common(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="loss gradients vs finite differences")
    _add_common(p_grad)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_bench = sub.add_parser("bench-attention", help="linear vs quadratic timing")
    _add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
