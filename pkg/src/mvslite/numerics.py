"""Dense-array substrate shared by every stage of the pipeline.

Arrays are float64 internally and row-major; file readers and writers
convert to float32 at the boundary. Public operations allocate fresh
output arrays, never mutate their inputs, and raise ValueError on
non-finite results so numerical faults surface where they happen.

Randomness is confined to SeededRng, a counter-based Philox stream that
is splittable by label. Values are derived from the raw 64-bit Philox
output with a fixed bit-shift / Box-Muller recipe rather than numpy's
Generator distribution methods, whose streams are not pinned across
numpy versions. Identical (seed, label) pairs therefore produce
bit-identical streams on every platform.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "SeededRng",
    "ConvSpec",
    "seeded_init",
    "conv2d",
    "conv3d",
    "bilinear_resize",
    "softmax_axis",
    "phi",
    "require_finite",
]


def require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Raise ValueError if arr contains NaN or infinity."""
    if not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.isfinite(arr).sum())
        raise ValueError(f"{name}: {bad} non-finite value(s) in array of shape {arr.shape}")
    return arr


def _as_float64(arr: np.ndarray, name: str, ndim: int | None = None) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if ndim is not None and out.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-d array, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class SeededRng:
    """Splittable counter-based random stream (Philox 4x64).

    substream(label) derives an independent child stream from a stable
    blake2b hash of the label, so parameter tensors can be keyed by name
    ("fpn.enc0", "amt.s2.b1", ...) without any draw-order coupling.
    """

    seed: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def substream(self, label: str) -> "SeededRng":
        """Derive a child stream; chainable and order-independent."""
        digest = hashlib.blake2b(
            self.seed.to_bytes(8, "little") + label.encode("utf-8"), digest_size=8
        ).digest()
        return SeededRng(int.from_bytes(digest, "little"))

    def raw(self, count: int) -> np.ndarray:
        """count raw uint64 words from the Philox stream."""
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        return np.random.Philox(key=self.seed).random_raw(count)

    def uniform(
        self, shape: tuple[int, ...] | int, low: float = 0.0, high: float = 1.0
    ) -> np.ndarray:
        """Uniform samples strictly inside (low, high)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape: tuple[int, ...] | int) -> np.ndarray:
        """Standard-normal samples via Box-Muller over the raw stream."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        raw = self.raw(2 * m)
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        u2 = ((raw[m:] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)


def seeded_init(shape: tuple[int, ...], rng: SeededRng, scale: float = 1.0) -> np.ndarray:
    """Deterministic pseudo-normal tensor with std = scale / sqrt(fan_in).

    fan_in is the product of all dimensions after the first (1 for
    vectors), matching the usual convention for conv / linear weights.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"shape must be positive, got {shape}")
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    std = scale / math.sqrt(fan_in)
    return require_finite(rng.normal(shape) * std, "seeded_init")


@dataclass(frozen=True)
class ConvSpec:
    """Weights for a zero-padded cross-correlation.

    kernel is (C_out, C_in, k, k) for 2-d or (C_out, C_in, k, k, k) for
    3-d, k in {1, 3}; padding is pinned to (k - 1) // 2 so stride-1
    convolutions preserve spatial extent.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self) -> None:
        kernel = _as_float64(self.kernel, "ConvSpec.kernel")
        bias = _as_float64(self.bias, "ConvSpec.bias", ndim=1)
        if kernel.ndim not in (4, 5):
            raise ValueError(f"kernel must be 4-d or 5-d, got shape {kernel.shape}")
        k = kernel.shape[2]
        if k not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {k}")
        if any(s != k for s in kernel.shape[2:]):
            raise ValueError(f"kernel must be square/cubic, got shape {kernel.shape}")
        if bias.shape[0] != kernel.shape[0]:
            raise ValueError(
                f"bias length {bias.shape[0]} != output channels {kernel.shape[0]}"
            )
        if int(self.stride) < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def padding(self) -> int:
        return (self.kernel.shape[2] - 1) // 2

    @property
    def spatial_ndim(self) -> int:
        return self.kernel.ndim - 2

    @classmethod
    def seeded(
        cls,
        rng: SeededRng,
        out_channels: int,
        in_channels: int,
        kernel_size: int,
        spatial_ndim: int = 2,
        stride: int = 1,
        scale: float = 1.0,
    ) -> "ConvSpec":
        shape = (out_channels, in_channels) + (kernel_size,) * spatial_ndim
        kernel = seeded_init(shape, rng.substream("kernel"), scale=scale)
        bias = np.zeros(out_channels, dtype=np.float64)
        return cls(kernel=kernel, bias=bias, stride=stride)


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate (C_in, H, W) -> (C_out, H', W'); H' == H at stride 1."""
    x = _as_float64(x, "conv2d input", ndim=3)
    if spec.spatial_ndim != 2:
        raise ValueError(f"conv2d needs a 4-d kernel, got shape {spec.kernel.shape}")
    if x.shape[0] != spec.kernel.shape[1]:
        raise ValueError(
            f"input channels {x.shape[0]} != kernel input channels {spec.kernel.shape[1]}"
        )
    p, s = spec.padding, spec.stride
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    k = spec.kernel.shape[2]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    out = np.einsum("ihwyx,oiyx->ohw", win, spec.kernel, optimize=True)
    out += spec.bias[:, None, None]
    return require_finite(out, "conv2d output")


def conv3d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate (C_in, D, H, W) -> (C_out, D', H', W'); dims kept at stride 1."""
    x = _as_float64(x, "conv3d input", ndim=4)
    if spec.spatial_ndim != 3:
        raise ValueError(f"conv3d needs a 5-d kernel, got shape {spec.kernel.shape}")
    if x.shape[0] != spec.kernel.shape[1]:
        raise ValueError(
            f"input channels {x.shape[0]} != kernel input channels {spec.kernel.shape[1]}"
        )
    p, s = spec.padding, spec.stride
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    k = spec.kernel.shape[2]
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))[:, ::s, ::s, ::s]
    out = np.einsum("idhwzyx,oizyx->odhw", win, spec.kernel, optimize=True)
    out += spec.bias[:, None, None, None]
    return require_finite(out, "conv3d output")


def _resize_axis_coords(src_len: int, dst_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel source coordinates for one axis, clamped to the valid range."""
    coords = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    coords = np.clip(coords, 0.0, src_len - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = coords - lo
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Resize (C, H, W) to (C, H', W') with half-pixel (align-corners-false) mapping.

    Border samples clamp to the edge row/column, so resizing to the same
    shape is an exact identity.
    """
    x = _as_float64(x, "bilinear_resize input", ndim=3)
    out_h, out_w = int(out_shape[0]), int(out_shape[1])
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output shape must be positive, got {out_shape}")
    _, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    y0, y1, wy = _resize_axis_coords(h, out_h)
    x0, x1, wx = _resize_axis_coords(w, out_w)
    rows = x[:, y0, :] * (1.0 - wy)[None, :, None] + x[:, y1, :] * wy[None, :, None]
    out = rows[:, :, x0] * (1.0 - wx)[None, None, :] + rows[:, :, x1] * wx[None, None, :]
    return require_finite(out, "bilinear_resize output")


def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Numerically stable softmax along one axis (max-subtraction form)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return require_finite(out, "softmax_axis output")


def phi(x: np.ndarray) -> np.ndarray:
    """Strictly positive attention feature map: x + 1 for x > 0, exp(x) otherwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))
