"""Linear-complexity attention over feature-map tokens.

The kernelised form replaces softmax attention with the feature map
phi(x) = x + 1 (x > 0) / exp(x) (x <= 0), which is strictly positive, so

    out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / (phi(q_i)^T sum_j phi(k_j))

can be evaluated by aggregating keys first: O(n * C^2) instead of the
O(n * m) pairwise form. quadratic_attention evaluates the same quantity
in the pairwise order and exists as the reference / benchmark twin; the
two must agree to float64 reassociation error.

A cascade stage interleaves two block kinds over tokenized view features:
intra-attention (each view attends to itself) and inter-attention (each
source view queries the reference, which is never modified). Stages may
run the blocks on a downsampled copy of the maps; the attention delta is
upsampled back and added residually, so cheap stages still touch every
pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, bilinear_resize, phi, require_finite, seeded_init

__all__ = [
    "TokenizedFeatureMap",
    "AttentionBlockParams",
    "AmtScheduleConfig",
    "linear_attention",
    "quadratic_attention",
    "intra_attention",
    "inter_attention",
    "amt_stage",
    "make_stage_params",
]

_ALLOWED_RATES = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class TokenizedFeatureMap:
    """Row-major flattening of a (C, H, W) feature map into (H*W, C) tokens."""

    tokens: np.ndarray
    height: int
    width: int
    view_id: int = 0

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be (n, C), got shape {tokens.shape}")
        if tokens.shape[0] != self.height * self.width:
            raise ValueError(
                f"{tokens.shape[0]} tokens != height*width = {self.height * self.width}"
            )
        object.__setattr__(self, "tokens", tokens)

    @classmethod
    def from_feature_map(cls, feature: np.ndarray, view_id: int = 0) -> "TokenizedFeatureMap":
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 3:
            raise ValueError(f"feature must be (C, H, W), got shape {feature.shape}")
        c, h, w = feature.shape
        return cls(tokens=feature.reshape(c, h * w).T.copy(), height=h, width=w, view_id=view_id)

    def to_feature_map(self) -> np.ndarray:
        return self.tokens.T.reshape(-1, self.height, self.width).copy()


@dataclass(frozen=True)
class AttentionBlockParams:
    """Square projection weights for one attention block."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray

    def __post_init__(self) -> None:
        shapes = {
            name: np.asarray(getattr(self, name)).shape
            for name in ("w_q", "w_k", "w_v", "w_out")
        }
        first = next(iter(shapes.values()))
        if any(len(s) != 2 or s[0] != s[1] or s != first for s in shapes.values()):
            raise ValueError(f"projection weights must share one square shape, got {shapes}")
        for name in shapes:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def seeded(cls, rng: SeededRng, channels: int) -> "AttentionBlockParams":
        return cls(
            w_q=seeded_init((channels, channels), rng.substream("w_q")),
            w_k=seeded_init((channels, channels), rng.substream("w_k")),
            w_v=seeded_init((channels, channels), rng.substream("w_v")),
            w_out=seeded_init((channels, channels), rng.substream("w_out")),
        )

    @classmethod
    def zeros(cls, channels: int) -> "AttentionBlockParams":
        z = np.zeros((channels, channels))
        return cls(w_q=z, w_k=z, w_v=z, w_out=z)


@dataclass(frozen=True)
class AmtScheduleConfig:
    """Per-stage block counts and sampling rates for the attention cascade.

    intra[s] / inter[s] give the number of blocks of each kind at stage
    s+1; rates[s] is the fraction of the stage resolution the blocks run
    at. Blocks interleave starting with intra; whichever kind remains
    after strict alternation runs consecutively.
    """

    intra: tuple[int, int, int] = (1, 1, 2)
    inter: tuple[int, int, int] = (2, 1, 1)
    rates: tuple[float, float, float] = (1.0, 0.5, 0.25)

    def __post_init__(self) -> None:
        intra = tuple(int(v) for v in self.intra)
        inter = tuple(int(v) for v in self.inter)
        rates = tuple(float(v) for v in self.rates)
        if len(intra) != len(inter) or len(intra) != len(rates):
            raise ValueError(
                f"intra/inter/rates must have equal length, got "
                f"{len(intra)}/{len(inter)}/{len(rates)}"
            )
        if any(v < 0 for v in intra + inter):
            raise ValueError(f"block counts must be non-negative, got {intra}, {inter}")
        if any(r not in _ALLOWED_RATES for r in rates):
            raise ValueError(f"sampling rates must be one of {_ALLOWED_RATES}, got {rates}")
        object.__setattr__(self, "intra", intra)
        object.__setattr__(self, "inter", inter)
        object.__setattr__(self, "rates", rates)

    @property
    def stages(self) -> int:
        return len(self.intra)

    def block_sequence(self, stage: int) -> list[str]:
        """Ordered block kinds for a 1-based stage, e.g. (1,2) -> intra,inter,inter."""
        if not 1 <= stage <= self.stages:
            raise ValueError(f"stage must be in [1, {self.stages}], got {stage}")
        n_intra, n_inter = self.intra[stage - 1], self.inter[stage - 1]
        seq: list[str] = []
        while n_intra or n_inter:
            if n_intra:
                seq.append("intra")
                n_intra -= 1
            if n_inter:
                seq.append("inter")
                n_inter -= 1
        return seq


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, ...]:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError(
            f"q, k, v must be 2-d token arrays, got {q.shape}, {k.shape}, {v.shape}"
        )
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q channels {q.shape[1]} != k channels {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"k tokens {k.shape[0]} != v tokens {v.shape[0]}")
    return q, k, v


def linear_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, normalized: bool = True
) -> np.ndarray:
    """Kernelised attention, keys aggregated first: O(n * C^2).

    With normalized=True each output token is a positive convex blend of
    value tokens; the literal unnormalized form omits the denominator.
    """
    q, k, v = _check_qkv(q, k, v)
    pq = phi(q)
    pk = phi(k)
    summary = pk.T @ v  # (C, C_v): value mass per key channel
    out = pq @ summary
    if normalized:
        z = pq @ pk.sum(axis=0)  # strictly positive: phi > 0
        out = out / z[:, None]
    return require_finite(out, "linear_attention output")


def quadratic_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, normalized: bool = True
) -> np.ndarray:
    """Same quantity in the pairwise O(n * m) order; reference and benchmark twin."""
    q, k, v = _check_qkv(q, k, v)
    weights = phi(q) @ phi(k).T  # (n, m), all positive
    out = weights @ v
    if normalized:
        out = out / weights.sum(axis=1, keepdims=True)
    return require_finite(out, "quadratic_attention output")


def _attend_tokens(
    query_tokens: np.ndarray,
    context_tokens: np.ndarray,
    params: AttentionBlockParams,
    normalized: bool,
) -> np.ndarray:
    """Residual update for query tokens against context tokens."""
    delta = linear_attention(
        query_tokens @ params.w_q,
        context_tokens @ params.w_k,
        context_tokens @ params.w_v,
        normalized=normalized,
    )
    return query_tokens + delta @ params.w_out


def intra_attention(
    fmap: TokenizedFeatureMap, params: AttentionBlockParams, normalized: bool = True
) -> TokenizedFeatureMap:
    """Self-attention over one view's tokens; all-zero weights are an exact identity."""
    tokens = _attend_tokens(fmap.tokens, fmap.tokens, params, normalized)
    return TokenizedFeatureMap(
        tokens=tokens, height=fmap.height, width=fmap.width, view_id=fmap.view_id
    )


def inter_attention(
    src: TokenizedFeatureMap,
    ref: TokenizedFeatureMap,
    params: AttentionBlockParams,
    normalized: bool = True,
) -> TokenizedFeatureMap:
    """Cross-attention: source queries the reference; the reference is not modified."""
    if src.tokens.shape[1] != ref.tokens.shape[1]:
        raise ValueError(
            f"source channels {src.tokens.shape[1]} != reference channels "
            f"{ref.tokens.shape[1]}"
        )
    tokens = _attend_tokens(src.tokens, ref.tokens, params, normalized)
    return TokenizedFeatureMap(
        tokens=tokens, height=src.height, width=src.width, view_id=src.view_id
    )


def make_stage_params(
    schedule: AmtScheduleConfig, stage: int, channels: int, rng: SeededRng
) -> list[AttentionBlockParams]:
    """One parameter set per scheduled block, keyed by stage and block index."""
    seq = schedule.block_sequence(stage)
    return [
        AttentionBlockParams.seeded(rng.substream(f"s{stage}.b{i}.{kind}"), channels)
        for i, kind in enumerate(seq)
    ]


def amt_stage(
    features: list[np.ndarray],
    stage: int,
    schedule: AmtScheduleConfig,
    params: list[AttentionBlockParams],
    normalized: bool = True,
) -> list[np.ndarray]:
    """Run one stage of the attention cascade over all views.

    features[0] is the reference view. Blocks run at the stage's
    sampling rate on bilinearly downsampled copies; intra blocks update
    every view, inter blocks update each source against the reference.
    The accumulated delta is upsampled back to the stage resolution and
    added to the original maps, so an empty schedule (or all-zero
    weights) leaves the inputs untouched and the reference is never
    modified by inter blocks.
    """
    if not features:
        raise ValueError("need at least one view")
    shapes = {f.shape for f in map(np.asarray, features)}
    if len(shapes) != 1:
        raise ValueError(f"all views must share one shape, got {sorted(shapes)}")
    c, h, w = next(iter(shapes))
    seq = schedule.block_sequence(stage)
    if len(params) != len(seq):
        raise ValueError(f"schedule has {len(seq)} blocks but {len(params)} param sets given")
    for i, p in enumerate(params):
        if p.channels != c:
            raise ValueError(f"block {i} expects {p.channels} channels, features have {c}")

    rate = schedule.rates[stage - 1]
    low_shape = (max(1, round(h * rate)), max(1, round(w * rate)))
    originals = [np.asarray(f, dtype=np.float64) for f in features]
    low = [bilinear_resize(f, low_shape) for f in originals]
    maps = [
        TokenizedFeatureMap.from_feature_map(f, view_id=i) for i, f in enumerate(low)
    ]

    for block_params, kind in zip(params, seq):
        if kind == "intra":
            maps = [intra_attention(m, block_params, normalized) for m in maps]
        else:
            ref = maps[0]
            maps = [ref] + [
                inter_attention(m, ref, block_params, normalized) for m in maps[1:]
            ]

    out = []
    for before, after, orig in zip(low, maps, originals):
        delta = after.to_feature_map() - before
        out.append(orig + bilinear_resize(delta, (h, w)))
    return out
