"""Wavelet mixing layer and the encoder block built around it.

The mixing layer replaces self-attention: it decomposes the input into a
full Haar pyramid, concatenates each level's four subbands, restores the
channel count with a per-level affine map and nonlinearity, upsamples each
level back to input resolution with chained 2x2 transposed convolutions,
fuses the levels, and adds the input back. Every constituent is linear in
pixel count, so the layer's cost scales with h*w instead of (h*w)^2.

The encoder block keeps the usual pre-norm transformer skeleton with the
mixing layer in the attention slot:

    y   = x + mixing(norm1(x))
    out = y + ffn(norm2(y))

``stage_forward`` composes one cascade stage: token construction, the
training-only enhanced branch (quantization enhancement, kind-partitioned
exchange, top-K selection for both branches), the encoder stack, and a
unit-norm mean-token embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hfqe import (
    QuantizationConfig,
    TopKSelection,
    concat_hf,
    downsample_tokens,
    hfqe_enhance,
    top_k_select,
)
from .numerics import ops
from .numerics.tensor import ShapeMismatchError, Tensor
from .tokens import SliceConvBank, TokenMap, build_token_map, exchange_tokens
from .wavelet import dhwt_multilevel


def _affine(rng, d_in: int, d_out: int, std: float | None = None):
    std = math.sqrt(2.0 / d_in) if std is None else std
    w = Tensor((rng.standard_normal((d_in, d_out)) * std).astype(np.float32), requires_grad=True)
    b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)
    return w, b


def pyramid_depth(h: int, w: int) -> int:
    depth = 0
    while h >= 2 and w >= 2 and h % 2 == 0 and w % 2 == 0:
        depth += 1
        h //= 2
        w //= 2
    return depth


@dataclass
class MixingLevelParams:
    mix_weight: Tensor  # (4c, c)
    mix_bias: Tensor  # (c,)
    upsample: list[tuple[Tensor, Tensor]]  # level l carries l (2,2,c,c) stages


@dataclass
class MixingLayerParams:
    levels: list[MixingLevelParams]
    fuse_weight: Tensor  # (depth * c, c)
    fuse_bias: Tensor  # (c,)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @staticmethod
    def create(channels: int, depth: int, rng: np.random.Generator) -> "MixingLayerParams":
        levels = []
        for level in range(1, depth + 1):
            mw, mb = _affine(rng, 4 * channels, channels)
            ups = []
            for _ in range(level):
                std = math.sqrt(2.0 / channels)
                w = Tensor(
                    (rng.standard_normal((2, 2, channels, channels)) * std).astype(np.float32),
                    requires_grad=True,
                )
                b = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
                ups.append((w, b))
            levels.append(MixingLevelParams(mix_weight=mw, mix_bias=mb, upsample=ups))
        fw, fb = _affine(rng, depth * channels, channels)
        return MixingLayerParams(levels=levels, fuse_weight=fw, fuse_bias=fb)


def mixing_layer_forward(x: Tensor, p: MixingLayerParams) -> Tensor:
    """Multi-level wavelet mixing with a residual connection; dims preserved."""
    x = ops.as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"mixing layer: expected (h, w, c), got {x.dims}")
    h, w, c = x.dims
    pyramid = dhwt_multilevel(x)
    if pyramid.depth != p.depth:
        raise ShapeMismatchError(
            f"mixing layer: pyramid depth {pyramid.depth} for {x.dims} but "
            f"{p.depth} level parameter sets"
        )
    outputs = []
    for level, params in zip(pyramid.levels, p.levels):
        cat = ops.concat([level.ll, level.lh, level.hl, level.hh], axis=2)
        mixed = ops.gelu(ops.linear(cat, params.mix_weight, params.mix_bias))
        for weight, bias in params.upsample:
            mixed = ops.conv_transpose2d(mixed, weight, bias)
        if mixed.dims != (h, w, c):
            raise ShapeMismatchError(
                f"mixing layer: upsampled level reached {mixed.dims}, want {(h, w, c)}"
            )
        outputs.append(mixed)
    stacked = ops.concat(outputs, axis=2) if len(outputs) > 1 else outputs[0]
    fused = ops.linear(stacked, p.fuse_weight, p.fuse_bias)
    return ops.add(fused, x)


@dataclass
class EncoderBlockParams:
    norm1_gain: Tensor
    norm1_bias: Tensor
    mixing: MixingLayerParams
    norm2_gain: Tensor
    norm2_bias: Tensor
    ffn_w1: Tensor  # (c, 4c)
    ffn_b1: Tensor
    ffn_w2: Tensor  # (4c, c)
    ffn_b2: Tensor

    @staticmethod
    def create(channels: int, depth: int, rng: np.random.Generator) -> "EncoderBlockParams":
        w1, b1 = _affine(rng, channels, 4 * channels)
        w2, b2 = _affine(rng, 4 * channels, channels)
        return EncoderBlockParams(
            norm1_gain=Tensor(np.ones(channels, dtype=np.float32), requires_grad=True),
            norm1_bias=Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True),
            mixing=MixingLayerParams.create(channels, depth, rng),
            norm2_gain=Tensor(np.ones(channels, dtype=np.float32), requires_grad=True),
            norm2_bias=Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True),
            ffn_w1=w1,
            ffn_b1=b1,
            ffn_w2=w2,
            ffn_b2=b2,
        )


def encoder_block_forward(x: Tensor, p: EncoderBlockParams) -> Tensor:
    y = ops.add(x, mixing_layer_forward(ops.layer_norm(x, p.norm1_gain, p.norm1_bias), p.mixing))
    hidden = ops.gelu(ops.linear(ops.layer_norm(y, p.norm2_gain, p.norm2_bias), p.ffn_w1, p.ffn_b1))
    return ops.add(y, ops.linear(hidden, p.ffn_w2, p.ffn_b2))


@dataclass(frozen=True)
class StageConfig:
    """Cascade stage flags: the re-identification machinery (enhanced branch,
    exchange, selections) runs only for stages past the first."""

    index: int
    reid_enabled: bool = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.index not in (1, 2, 3):
            raise ValueError(f"stage index {self.index} outside {{1, 2, 3}}")
        if self.reid_enabled is None:
            object.__setattr__(self, "reid_enabled", self.index > 1)


@dataclass
class StagePipelineParams:
    """Everything one stage needs: the (shared) token bank, the enhanced-
    branch downsampling projection, and this stage's encoder blocks."""

    bank: SliceConvBank
    downsample_weight: Tensor  # (3c, c)
    downsample_bias: Tensor
    blocks: list[EncoderBlockParams]


@dataclass
class StageAux:
    """Training-only side products routed to the loss layer."""

    original_maps: list[TokenMap]
    enhanced_maps: list[TokenMap]
    enhanced_tokens: list[Tensor]  # downsampled high-frequency token grids, (n, d)
    original_selections: list[TopKSelection]
    enhanced_selections: list[TopKSelection]


def _embed(tokens_grid: Tensor, blocks: Sequence[EncoderBlockParams]) -> Tensor:
    out = tokens_grid
    for block in blocks:
        out = encoder_block_forward(out, block)
    pooled = ops.mean(out, axis=(0, 1))
    norm = ops.l2_norm(pooled)
    return ops.div(pooled, ops.broadcast_to(ops.reshape(norm, (1,)), pooled.dims))


def stage_forward(
    features: Sequence[Tensor],
    params: StagePipelineParams,
    stage: StageConfig,
    training: bool,
    *,
    labels: Sequence[int | None] | None = None,
    k_ratio: float = 0.3,
    quant_interval: float = 15.0,
    exchange_ratio: float = 0.1,
    rng_seed: int = 0,
    enhanced_branch: bool = True,
) -> tuple[list[Tensor], StageAux | None]:
    """Run one cascade stage over a batch of (h, w, c) feature maps.

    Returns unit-norm embeddings for every input and, when ``training`` and
    the stage has re-identification enabled, the auxiliary token maps and
    top-K selections both losses consume. The enhanced branch never feeds
    the embeddings; it exists only to build loss targets.
    """
    if labels is None:
        labels = [None] * len(features)
    originals = [
        build_token_map(f, params.bank, "original", identity_label=lbl)
        for f, lbl in zip(features, labels)
    ]

    aux = None
    if training and stage.reid_enabled:
        if enhanced_branch:
            cfg = QuantizationConfig(q=quant_interval)
            enhanced = [
                build_token_map(
                    hfqe_enhance(f, cfg), params.bank, "enhanced", identity_label=lbl
                )
                for f, lbl in zip(features, labels)
            ]
        else:
            enhanced = []
        exchanged = exchange_tokens(originals + enhanced, exchange_ratio, rng_seed)
        originals = exchanged[: len(originals)]
        enhanced = exchanged[len(originals) :]

        enhanced_tokens: list[Tensor] = []
        enhanced_selections: list[TopKSelection] = []
        for m in enhanced:
            hf = concat_hf(m.as_grid())
            down = downsample_tokens(
                hf, params.downsample_weight, params.downsample_bias, m.grid
            )
            flat = ops.reshape(down, (m.count, m.dim))
            enhanced_tokens.append(flat)
            enhanced_selections.append(top_k_select(flat, k_ratio))
        aux = StageAux(
            original_maps=originals,
            enhanced_maps=enhanced,
            enhanced_tokens=enhanced_tokens,
            original_selections=[top_k_select(m, k_ratio) for m in originals],
            enhanced_selections=enhanced_selections,
        )

    embeddings = [_embed(m.as_grid(), params.blocks) for m in originals]
    return embeddings, aux
