"""Multi-scale feature extraction from grayscale images.

A three-level pyramid: a stride-1 stem plus two stride-2 encoder convs,
then a top-down pass where each level is projected to the width below
and added laterally, and a 3x3 smoothing head per level. Widths are
16 / 8 / 4 channels at quarter / half / full resolution (stages 1-3).

Passing params=None selects the photometric bypass: the stage features
are the input luminance resized to the stage grid and replicated across
the stage's channel count, which makes the matching cost a pure
photo-consistency measure for end-to-end tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import ConvSpec, SeededRng, bilinear_resize, conv2d, phi

__all__ = ["STAGE_CHANNELS", "FpnParams", "stage_shape", "extract_features"]

STAGE_CHANNELS = (16, 8, 4)  # coarse to fine


def stage_shape(height: int, width: int, stage: int) -> tuple[int, int]:
    """Feature-grid dims at a stage: ceil-halving once per level below full res."""
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2, or 3, got {stage}")
    h, w = int(height), int(width)
    for _ in range(3 - stage):
        h = -(-h // 2)
        w = -(-w // 2)
    return h, w


def _elu(x: np.ndarray) -> np.ndarray:
    return phi(x) - 1.0


@dataclass(frozen=True)
class FpnParams:
    """Seeded weights for the pyramid; see the module docstring for the wiring."""

    stem: ConvSpec  # 1 -> 4, stride 1
    enc1: ConvSpec  # 4 -> 8, stride 2
    enc2: ConvSpec  # 8 -> 16, stride 2
    lat1: ConvSpec  # 16 -> 8, 1x1 on the upsampled top-down path
    lat0: ConvSpec  # 8 -> 4, 1x1
    head2: ConvSpec  # 16 -> 16
    head1: ConvSpec  # 8 -> 8
    head0: ConvSpec  # 4 -> 4

    @classmethod
    def seeded(cls, rng: SeededRng) -> "FpnParams":
        return cls(
            stem=ConvSpec.seeded(rng.substream("stem"), 4, 1, 3),
            enc1=ConvSpec.seeded(rng.substream("enc1"), 8, 4, 3, stride=2),
            enc2=ConvSpec.seeded(rng.substream("enc2"), 16, 8, 3, stride=2),
            lat1=ConvSpec.seeded(rng.substream("lat1"), 8, 16, 1),
            lat0=ConvSpec.seeded(rng.substream("lat0"), 4, 8, 1),
            head2=ConvSpec.seeded(rng.substream("head2"), 16, 16, 3),
            head1=ConvSpec.seeded(rng.substream("head1"), 8, 8, 3),
            head0=ConvSpec.seeded(rng.substream("head0"), 4, 4, 3),
        )


def extract_features(
    image: np.ndarray, stage: int, params: FpnParams | None = None
) -> np.ndarray:
    """Stage features (C, H', W') for a grayscale (H, W) image.

    params=None is the photometric bypass described in the module
    docstring; at stage 3 every channel equals the input luminance.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be (H, W) grayscale, got shape {image.shape}")
    h, w = image.shape
    out_shape = stage_shape(h, w, stage)
    if params is None:
        resized = bilinear_resize(image[None], out_shape)
        return np.repeat(resized, STAGE_CHANNELS[stage - 1], axis=0)

    e0 = _elu(conv2d(image[None], params.stem))
    e1 = _elu(conv2d(e0, params.enc1))
    e2 = _elu(conv2d(e1, params.enc2))
    if stage == 1:
        return conv2d(e2, params.head2)
    p1 = e1 + conv2d(bilinear_resize(e2, e1.shape[1:]), params.lat1)
    if stage == 2:
        return conv2d(p1, params.head1)
    p0 = e0 + conv2d(bilinear_resize(p1, e0.shape[1:]), params.lat0)
    return conv2d(p0, params.head0)
