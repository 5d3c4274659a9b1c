"""Pipeline configuration: defaults, INI parsing, strict key validation."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..attention import AmtScheduleConfig
from ..losses import FmWeightConfig, LossWeights
from .fusion import FusionThresholds
from .scene import SceneSpec

__all__ = ["PipelineConfig", "load_config", "default_ini_text"]

_FUSION_MODES = ("literal", "squared")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the pipeline and CLI need, one immutable bundle."""

    scene: SceneSpec = SceneSpec()
    hypothesis_counts: tuple[int, int, int] = (48, 32, 8)
    identity_features: bool = False
    unet_bypass: bool = False
    fusion_mode: str = "squared"
    workers: int = 1
    seed: int = 0
    attention_normalized: bool = True
    amt_schedule: AmtScheduleConfig = AmtScheduleConfig()
    loss_weights: LossWeights = LossWeights()
    fm_config: FmWeightConfig = FmWeightConfig()
    fusion_thresholds: FusionThresholds = FusionThresholds()
    inlier_threshold: float = 20.0

    def __post_init__(self) -> None:
        if self.fusion_mode not in _FUSION_MODES:
            raise ValueError(
                f"fusion_mode must be one of {_FUSION_MODES}, got {self.fusion_mode!r}"
            )
        counts = tuple(int(v) for v in self.hypothesis_counts)
        if len(counts) != 3 or any(c < 2 for c in counts):
            raise ValueError(
                f"hypothesis_counts needs three values >= 2, got {self.hypothesis_counts}"
            )
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.inlier_threshold <= 0:
            raise ValueError(f"inlier_threshold must be positive, got {self.inlier_threshold}")
        object.__setattr__(self, "hypothesis_counts", counts)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        """Replace top-level fields; nested fields take whole replacement objects."""
        return dataclasses.replace(self, **kwargs)


# section -> key -> (target, parser kind); drives both parsing and rejection
_SCHEMA: dict[str, dict[str, str]] = {
    "scene": {
        "image_height": "int",
        "image_width": "int",
        "n_views": "int",
        "plane_depth": "float",
        "plane_normal": "float3",
        "baseline": "float",
        "focal": "float",
        "depth_min": "float",
        "depth_max": "float",
        "cell_mm": "float",
        "octaves": "int",
        "contrast": "float",
    },
    "pipeline": {
        "hypotheses": "int3",
        "identity_features": "bool",
        "unet_bypass": "bool",
        "fusion_mode": "str",
        "workers": "int",
        "seed": "int",
    },
    "attention": {
        "normalized": "bool",
        "intra_blocks": "int3",
        "inter_blocks": "int3",
        "rates": "float3",
    },
    "losses": {
        "ce_weights": "float3",
        "fm_weights": "float3",
        "upsilon_low": "float",
        "upsilon_high": "float",
        "eps": "float",
        "signed_log": "bool",
    },
    "fusion": {
        "min_confidence": "float",
        "min_consistent": "int",
        "max_reproj_px": "float",
        "max_depth_rel": "float",
    },
    "metrics": {
        "inlier_threshold_mm": "float",
    },
}

_BOOL_STATES = {
    "true": True,
    "false": False,
    "yes": True,
    "no": False,
    "on": True,
    "off": False,
    "1": True,
    "0": False,
}


def _parse_value(path: str, section: str, key: str, raw: str, kind: str):
    def fail(expected: str):
        raise ValueError(f"{path}: [{section}] {key}: cannot parse {raw!r} as {expected}")

    tokens = raw.split()
    try:
        if kind == "int":
            return int(raw.strip())
        if kind == "float":
            return float(raw.strip())
        if kind == "bool":
            state = raw.strip().lower()
            if state not in _BOOL_STATES:
                fail("a boolean")
            return _BOOL_STATES[state]
        if kind == "str":
            return raw.strip()
        if kind == "int3":
            if len(tokens) != 3:
                fail("three integers")
            return tuple(int(t) for t in tokens)
        if kind == "float3":
            if len(tokens) != 3:
                fail("three floats")
            return tuple(float(t) for t in tokens)
    except ValueError as err:
        if "cannot parse" in str(err):
            raise
        fail(kind)
    raise AssertionError(f"unhandled kind {kind}")


def load_config(path: str | Path) -> PipelineConfig:
    """Parse an INI file over the defaults; unknown sections or keys fail."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ValueError(f"{path}: config file not found")
    except configparser.Error as err:
        raise ValueError(f"{path}: {err}") from err

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(
                f"{path}: unknown section [{section}]; expected one of "
                f"{sorted(_SCHEMA)}"
            )
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(
                    f"{path}: unknown key '{key}' in [{section}]; expected one of "
                    f"{sorted(_SCHEMA[section])}"
                )
            values.setdefault(section, {})[key] = _parse_value(
                str(path), section, key, raw, _SCHEMA[section][key]
            )

    def pick(section: str, key: str, fallback):
        return values.get(section, {}).get(key, fallback)

    base = PipelineConfig()
    scene = base.scene
    scene = SceneSpec(
        image_shape=(
            pick("scene", "image_height", scene.image_shape[0]),
            pick("scene", "image_width", scene.image_shape[1]),
        ),
        n_views=pick("scene", "n_views", scene.n_views),
        plane_depth=pick("scene", "plane_depth", scene.plane_depth),
        plane_normal=pick("scene", "plane_normal", scene.plane_normal),
        baseline=pick("scene", "baseline", scene.baseline),
        focal=pick("scene", "focal", scene.focal),
        depth_range=(
            pick("scene", "depth_min", scene.depth_range[0]),
            pick("scene", "depth_max", scene.depth_range[1]),
        ),
        cell_mm=pick("scene", "cell_mm", scene.cell_mm),
        octaves=pick("scene", "octaves", scene.octaves),
        contrast=pick("scene", "contrast", scene.contrast),
        seed=scene.seed,
    )
    schedule = AmtScheduleConfig(
        intra=pick("attention", "intra_blocks", base.amt_schedule.intra),
        inter=pick("attention", "inter_blocks", base.amt_schedule.inter),
        rates=pick("attention", "rates", base.amt_schedule.rates),
    )
    weights = LossWeights(
        ce=pick("losses", "ce_weights", base.loss_weights.ce),
        fm=pick("losses", "fm_weights", base.loss_weights.fm),
    )
    fm_config = FmWeightConfig(
        upsilon_low=pick("losses", "upsilon_low", base.fm_config.upsilon_low),
        upsilon_high=pick("losses", "upsilon_high", base.fm_config.upsilon_high),
        eps=pick("losses", "eps", base.fm_config.eps),
        signed_log=pick("losses", "signed_log", base.fm_config.signed_log),
    )
    thresholds = FusionThresholds(
        min_confidence=pick("fusion", "min_confidence", base.fusion_thresholds.min_confidence),
        min_consistent=pick("fusion", "min_consistent", base.fusion_thresholds.min_consistent),
        max_reproj_px=pick("fusion", "max_reproj_px", base.fusion_thresholds.max_reproj_px),
        max_depth_rel=pick("fusion", "max_depth_rel", base.fusion_thresholds.max_depth_rel),
    )
    return PipelineConfig(
        scene=scene,
        hypothesis_counts=pick("pipeline", "hypotheses", base.hypothesis_counts),
        identity_features=pick("pipeline", "identity_features", base.identity_features),
        unet_bypass=pick("pipeline", "unet_bypass", base.unet_bypass),
        fusion_mode=pick("pipeline", "fusion_mode", base.fusion_mode),
        workers=pick("pipeline", "workers", base.workers),
        seed=pick("pipeline", "seed", base.seed),
        attention_normalized=pick("attention", "normalized", base.attention_normalized),
        amt_schedule=schedule,
        loss_weights=weights,
        fm_config=fm_config,
        fusion_thresholds=thresholds,
        inlier_threshold=pick("metrics", "inlier_threshold_mm", base.inlier_threshold),
    )


def default_ini_text() -> str:
    """A fully commented config template whose values equal the defaults."""
    return """\
# mvslite pipeline configuration. Every key is optional; the values
# below are the built-in defaults. Unknown sections or keys are errors.

[scene]                      # synthetic plane scene (synth subcommand)
image_height = 64
image_width = 64
n_views = 3                  # reference plus n-1 ring sources
plane_depth = 600.0          # mm along +z
plane_normal = 0.0 0.0 1.0
baseline = 20.0              # ring radius, mm
focal = 240.0                # px; focal*baseline/plane_depth is the disparity
depth_min = 425.0
depth_max = 935.0
cell_mm = 24.0               # texture lattice spacing on the plane
octaves = 1
contrast = 1.0

[pipeline]
hypotheses = 48 32 8         # depth samples per cascade stage
identity_features = false    # true: resized luminance instead of the FPN
unet_bypass = false          # true: plain softmax over -cost
fusion_mode = squared        # squared | literal
workers = 1                  # threads over reference views
seed = 0

[attention]
normalized = true            # row-normalized linear attention
intra_blocks = 1 1 2         # per-stage counts; 0 0 0 disables the kind
inter_blocks = 2 1 1
rates = 1.0 0.5 0.25         # per-stage attention sampling rate

[losses]
ce_weights = 2.0 2.0 2.0     # per-stage cross-entropy multipliers
fm_weights = 1.2 1.2 1.2     # per-stage feature-metric multipliers
upsilon_low = 0.6            # feature-metric ratio clamp
upsilon_high = 1.7
eps = 0.001                  # denominator guard in the ratio
signed_log = false           # keep the sign of log(ratio) instead of |log|

[fusion]
min_confidence = 0.3
min_consistent = 2           # source views that must agree
max_reproj_px = 1.0
max_depth_rel = 0.01

[metrics]
inlier_threshold_mm = 20.0   # distances above this are discarded
"""
