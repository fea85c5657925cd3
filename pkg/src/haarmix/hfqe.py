"""High-frequency quantization enhancement and top-K token selection.

Enhancement decomposes a feature map with the single-level Haar transform,
quantizes the approximation (ll) subband onto a coarse grid, and reconstructs.
Detail subbands pass through untouched, so the result keeps every high
frequency of the input while most low-frequency content collapses onto
multiples of the quantization interval.

The floor in the quantizer has zero derivative almost everywhere, so the
whole enhancement is treated as constant with respect to gradients: its
output carries no gradient lineage. Enhanced tokens act as loss targets,
never as part of the embedding path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ops
from .numerics.tensor import ShapeMismatchError, Tensor
from .tokens import TokenMap, round_half_up
from .wavelet import SubbandSet, dhwt_forward, dhwt_inverse


@dataclass(frozen=True)
class QuantizationConfig:
    """Quantization interval for the ll subband; best-performing default 15."""

    q: float = 15.0

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"quantization interval must be positive, got {self.q}")


def quantize_ll(ll: Tensor, q: float) -> Tensor:
    """Elementwise ``floor((v + 0.5) / q) * q``: exact integer multiples of q.

    Not differentiable; the output is detached by construction.
    """
    if not q > 0:
        raise ValueError(f"quantization interval must be positive, got {q}")
    return Tensor(np.floor((ll.data + 0.5) / q) * q)


def hfqe_enhance(x: Tensor, cfg: QuantizationConfig) -> Tensor:
    """Reconstruct ``x`` with its ll subband quantized; dims are preserved
    and the detail subbands are exactly those of the input."""
    x = ops.as_tensor(x)
    s = dhwt_forward(x.detach())
    quantized = SubbandSet(
        ll=quantize_ll(s.ll, cfg.q),
        lh=s.lh.detach(),
        hl=s.hl.detach(),
        hh=s.hh.detach(),
    )
    return dhwt_inverse(quantized)


def concat_hf(x: Tensor) -> Tensor:
    """Channel concatenation of the three detail subbands, in the order
    lh, hl, hh: (h, w, c) -> (h/2, w/2, 3c). Discards the approximation."""
    s = dhwt_forward(x)
    return ops.concat([s.lh, s.hl, s.hh], axis=2)


def downsample_tokens(
    hf: Tensor, weight: Tensor, bias: Tensor | None, target_hw: tuple[int, int]
) -> Tensor:
    """Map concatenated detail channels back to token shape: a learned
    channel projection followed by nearest-neighbor resize to the target
    grid. Deterministic given the parameters."""
    h_t, w_t = target_hw
    if h_t <= 0 or w_t <= 0:
        raise ShapeMismatchError(f"downsample_tokens: target ({h_t}, {w_t})")
    projected = ops.linear(hf, weight, bias)
    return ops.nearest_resize(projected, h_t, w_t)


@dataclass(frozen=True)
class TopKSelection:
    """Rank-ordered positions of the K largest-norm tokens.

    ``indices[0]`` is the highest-norm token; ties break toward the lower
    index. K = round(k_ratio * token_count), never below 1.
    """

    indices: tuple[int, ...]
    k_ratio: float
    k: int

    def __post_init__(self):
        if len(self.indices) != self.k or len(set(self.indices)) != self.k:
            raise ValueError("selection indices must be k distinct positions")


def top_k_select(tokens: TokenMap | Tensor, k_ratio: float) -> TopKSelection:
    """Select the top-K tokens by L2 norm, rank-ordered."""
    if not 0.0 < k_ratio <= 1.0:
        raise ValueError(f"k_ratio {k_ratio} outside (0, 1]")
    mat = tokens.tokens if isinstance(tokens, TokenMap) else ops.as_tensor(tokens)
    if mat.data.ndim != 2 or mat.dims[0] == 0:
        raise ShapeMismatchError(f"top_k_select: need a non-empty (n, d) map, got {mat.dims}")
    n = mat.dims[0]
    k = max(1, round_half_up(k_ratio * n))
    norms = np.linalg.norm(mat.data.astype(np.float64), axis=1)
    order = np.argsort(-norms, kind="stable")[:k]
    return TopKSelection(indices=tuple(int(i) for i in order), k_ratio=k_ratio, k=k)
