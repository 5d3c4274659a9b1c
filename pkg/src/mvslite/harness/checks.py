"""Numerical self-checks: loss gradients vs finite differences, attention timing.

These back the `gradcheck` and `bench-attention` CLI subcommands and the
acceptance tests. Gradient checks compare every coordinate of the
analytic gradient against central finite differences; the benchmark
times the linear and quadratic attention twins at two sizes so their
scaling exponents can be compared.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..attention import linear_attention, quadratic_attention
from ..losses import GroundTruthBundle, ce_loss, fm_loss
from ..numerics import SeededRng, softmax_axis

__all__ = [
    "GradCheckRow",
    "ce_gradient_check",
    "fm_gradient_check",
    "attention_benchmark",
]

_HYPOTHESIS_CHOICES = (8, 12, 16)


@dataclass(frozen=True)
class GradCheckRow:
    """Result of one finite-difference instance."""

    name: str
    shape: tuple[int, ...]
    max_rel_err: float


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff == 0.0, 0.0, diff / np.maximum(scale, 1e-12))
    return float(rel.max())


def _central_diff(func, x: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = func(x)
        flat[i] = orig - step
        down = func(x)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return grad


def _random_bundle(rng: SeededRng, m: int, h: int, w: int) -> GroundTruthBundle:
    valid = rng.substream("valid").uniform((h, w)) < 0.8
    valid.flat[0] = True
    idx = np.minimum((rng.substream("idx").uniform((h, w)) * m).astype(int), m - 1)
    one_hot = (np.arange(m)[:, None, None] == idx[None]).astype(np.float64) * valid[None]
    # depth values never enter the CE value; any consistent map will do
    depth = idx.astype(np.float64)
    return GroundTruthBundle(depth=depth, one_hot=one_hot, valid=valid)


def ce_gradient_check(seed: int = 0, instances: int = 10, step: float = 1e-5) -> list[GradCheckRow]:
    """Cross-entropy gradient (pre-softmax) vs central differences, every coordinate."""
    rows = []
    base = SeededRng(seed)
    for k in range(instances):
        rng = base.substream(f"ce{k}")
        m = _HYPOTHESIS_CHOICES[k % len(_HYPOTHESIS_CHOICES)]
        h = w = 4
        logits = rng.substream("logits").normal((m, h, w)) * 0.5
        bundle = _random_bundle(rng, m, h, w)

        def value(z: np.ndarray) -> float:
            return ce_loss(softmax_axis(z, axis=0), bundle).value

        analytic = ce_loss(softmax_axis(logits, axis=0), bundle).gradient
        numeric = _central_diff(value, logits, step)
        rows.append(
            GradCheckRow(name=f"ce_{k}", shape=(m, h, w), max_rel_err=_max_rel_err(analytic, numeric))
        )
    return rows


def fm_gradient_check(seed: int = 0, instances: int = 10, step: float = 1e-5) -> list[GradCheckRow]:
    """Feature-metric depth gradient vs central differences, away from the kink."""
    rows = []
    base = SeededRng(seed)
    for k in range(instances):
        rng = base.substream(f"fm{k}")
        h = w = 4
        gt = 600.0 + rng.substream("gt").normal((h, w)) * 50.0
        sign = np.where(rng.substream("sign").uniform((h, w)) < 0.5, -1.0, 1.0)
        # residual kept well clear of the |err| = 0 subgradient kink
        residual = sign * (0.05 + rng.substream("res").uniform((h, w)) * 40.0)
        depth = gt + residual
        # weights floored away from 0 so the finite-difference signal stays
        # above float cancellation noise; two exact zeros cover that branch
        weight = 0.2 + 0.8 * rng.substream("w").uniform((h, w))
        weight.flat[1] = 0.0
        weight.flat[5] = 0.0
        valid = rng.substream("valid").uniform((h, w)) < 0.8
        valid.flat[0] = True

        def value(d: np.ndarray) -> float:
            return fm_loss(d, gt, weight, valid).value

        analytic = fm_loss(depth, gt, weight, valid).gradient
        numeric = _central_diff(value, depth, step)
        rows.append(
            GradCheckRow(name=f"fm_{k}", shape=(h, w), max_rel_err=_max_rel_err(analytic, numeric))
        )
    return rows


def _median_time(func, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def attention_benchmark(
    sizes: tuple[int, int] = (1024, 2048),
    channels: int = 8,
    repeats: int = 5,
    seed: int = 0,
) -> dict:
    """Median wall times and size ratios for the two attention orders."""
    if len(sizes) != 2 or sizes[1] <= sizes[0]:
        raise ValueError(f"sizes must be two increasing token counts, got {sizes}")
    rng = SeededRng(seed)
    timings: dict[str, dict[int, float]] = {"linear": {}, "quadratic": {}}
    for n in sizes:
        sub = rng.substream(f"n{n}")
        q = sub.substream("q").normal((n, channels))
        k = sub.substream("k").normal((n, channels))
        v = sub.substream("v").normal((n, channels))
        linear_attention(q, k, v)  # warm up caches and allocator
        quadratic_attention(q, k, v)
        timings["linear"][n] = _median_time(lambda: linear_attention(q, k, v), repeats)
        timings["quadratic"][n] = _median_time(lambda: quadratic_attention(q, k, v), repeats)
    small, large = sizes
    return {
        "sizes": tuple(sizes),
        "channels": channels,
        "linear": timings["linear"],
        "quadratic": timings["quadratic"],
        "linear_ratio": timings["linear"][large] / timings["linear"][small],
        "quadratic_ratio": timings["quadratic"][large] / timings["quadratic"][small],
    }
