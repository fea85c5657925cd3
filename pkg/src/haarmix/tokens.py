"""Token maps from feature maps, and intra-batch token exchange.

A feature map is sliced into contiguous channel groups, each group runs
through its own convolution (kernel sizes grow with the slice index so the
grid mixes several receptive-field scales), and the re-assembled map is
flattened into a grid of tokens. During training, token maps of the same
kind partially exchange token vectors within a batch to imitate occlusion;
original maps only ever trade with original maps, enhanced with enhanced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .numerics import ops
from .numerics.tensor import ShapeMismatchError, Tensor

TokenKind = Literal["original", "enhanced"]

UNLABELED = None


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class TokenMap:
    """A grid of d-dimensional tokens flattened row-major from (g_h, g_w)."""

    tokens: Tensor  # (n_tokens, d)
    grid: tuple[int, int]
    kind: TokenKind
    identity_label: int | None = UNLABELED

    def __post_init__(self):
        g_h, g_w = self.grid
        if self.tokens.data.ndim != 2 or self.tokens.dims[0] != g_h * g_w:
            raise ShapeMismatchError(
                f"token map: {self.tokens.dims} does not match grid {self.grid}"
            )
        if self.kind not in ("original", "enhanced"):
            raise ValueError(f"unknown token kind {self.kind!r}")

    @property
    def count(self) -> int:
        return self.tokens.dims[0]

    @property
    def dim(self) -> int:
        return self.tokens.dims[1]

    def as_grid(self) -> Tensor:
        g_h, g_w = self.grid
        return ops.reshape(self.tokens, (g_h, g_w, self.dim))


@dataclass
class SliceConv:
    weight: Tensor  # (k, k, c_slice, c_slice)
    bias: Tensor  # (c_slice,)


@dataclass
class SliceConvBank:
    """Per-slice convolutions: slice s uses kernel size 2s+1, same padding,
    and its own parameters (never shared across slices)."""

    slices: list[SliceConv]

    def __post_init__(self):
        seen = set()
        for s, conv in enumerate(self.slices):
            k = 2 * s + 1
            if conv.weight.dims[:2] != (k, k):
                raise ShapeMismatchError(
                    f"slice {s}: kernel {conv.weight.dims[:2]} != ({k}, {k})"
                )
            if id(conv.weight) in seen or id(conv.bias) in seen:
                raise ValueError(f"slice {s} shares parameters with another slice")
            seen.add(id(conv.weight))
            seen.add(id(conv.bias))

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def slice_channels(self) -> int:
        return self.slices[0].weight.dims[2]

    @staticmethod
    def create(channels: int, n_slices: int, rng: np.random.Generator) -> "SliceConvBank":
        if channels % n_slices:
            raise ShapeMismatchError(
                f"channels {channels} not divisible by {n_slices} slices"
            )
        c_slice = channels // n_slices
        slices = []
        for s in range(n_slices):
            k = 2 * s + 1
            std = math.sqrt(2.0 / (k * k * c_slice))
            weight = Tensor(
                (rng.standard_normal((k, k, c_slice, c_slice)) * std).astype(np.float32),
                requires_grad=True,
            )
            bias = Tensor(np.zeros(c_slice, dtype=np.float32), requires_grad=True)
            slices.append(SliceConv(weight=weight, bias=bias))
        return SliceConvBank(slices=slices)


def build_token_map(
    x: Tensor,
    bank: SliceConvBank,
    kind: TokenKind,
    identity_label: int | None = UNLABELED,
) -> TokenMap:
    """Slice channels, convolve each slice with its own kernel, re-assemble,
    and flatten the (h, w) grid into h*w tokens of dimension c."""
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"build_token_map: expected (h, w, c), got {x.dims}")
    h, w, c = x.dims
    n = bank.n_slices
    if c % n:
        raise ShapeMismatchError(f"channels {c} not divisible by {n} slices")
    c_slice = c // n
    if bank.slice_channels != c_slice:
        raise ShapeMismatchError(
            f"bank built for {bank.slice_channels}-channel slices, need {c_slice}"
        )
    parts = []
    for s, conv in enumerate(bank.slices):
        piece = ops.narrow(x, 2, s * c_slice, c_slice)
        parts.append(ops.conv2d(piece, conv.weight, conv.bias))
    merged = ops.concat(parts, axis=2) if len(parts) > 1 else parts[0]
    tokens = ops.reshape(merged, (h * w, c))
    return TokenMap(tokens=tokens, grid=(h, w), kind=kind, identity_label=identity_label)


def exchange_tokens(
    batch: Sequence[TokenMap], ratio: float, rng_seed: int
) -> list[TokenMap]:
    """Swap a random position set between adjacent same-kind pairs.

    Pairing is adjacent order of appearance within each kind (an odd leftover
    stays untouched). Both pair members swap the same positions, so the
    exchange is an involution and the per-kind token multiset over the batch
    is preserved. Deterministic given ``rng_seed``.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"exchange ratio {ratio} outside [0, 1]")
    maps = list(batch)
    if not maps:
        return []
    shape = maps[0].tokens.dims
    for m in maps[1:]:
        if m.tokens.dims != shape:
            raise ShapeMismatchError(
                f"exchange_tokens: token dims {m.tokens.dims} vs {shape}"
            )
    n_tokens, dim = shape
    n_swap = round_half_up(ratio * n_tokens)
    result: list[TokenMap | None] = [None] * len(maps)
    rng = np.random.default_rng(rng_seed)

    by_kind: dict[str, list[int]] = {}
    for i, m in enumerate(maps):
        by_kind.setdefault(m.kind, []).append(i)

    for kind in by_kind:
        indices = by_kind[kind]
        for a, b in zip(indices[0::2], indices[1::2]):
            if n_swap == 0:
                continue
            positions = rng.choice(n_tokens, size=n_swap, replace=False)
            keep = np.ones((n_tokens, 1), dtype=np.float32)
            keep[positions] = 0.0
            keep_m = Tensor(np.broadcast_to(keep, (n_tokens, dim)).copy())
            take_m = Tensor(np.broadcast_to(1.0 - keep, (n_tokens, dim)).copy())
            ta, tb = maps[a].tokens, maps[b].tokens
            new_a = ops.add(ops.mul(ta, keep_m), ops.mul(tb, take_m))
            new_b = ops.add(ops.mul(tb, keep_m), ops.mul(ta, take_m))
            result[a] = replace(maps[a], tokens=new_a)
            result[b] = replace(maps[b], tokens=new_b)

    return [r if r is not None else m for r, m in zip(result, maps)]
