"""Orthonormal 2D discrete Haar wavelet transform.

Single-level forward/inverse plus the recursive multi-level decomposition.
The normalization puts a factor 1/2 on every 2D coefficient, which makes the
transform orthonormal: energy is preserved exactly (Parseval) and the
inverse is both the exact left-inverse and the transpose, so the gradient of
each direction is simply the other direction applied to the output grads.

Per 2x2 block [[a, b], [c, d]] (a top-left, b top-right, c bottom-left,
d bottom-right), per channel:

    LL = (a + b + c + d) / 2        (approximation)
    LH = (a + b - c - d) / 2        (vertical detail)
    HL = (a - b + c - d) / 2        (horizontal detail)
    HH = (a - b - c + d) / 2        (diagonal detail)

Odd spatial dimensions are an error, never padded: silent padding would
corrupt the perfect-reconstruction property everything downstream relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.ops import _prep, apply_op, as_tensor
from .numerics.tensor import ShapeMismatchError, Tensor


def _split_blocks(x: np.ndarray):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return a, b, c, d


def _forward_arrays(x: np.ndarray):
    a, b, c, d = _split_blocks(x)
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def _inverse_arrays(ll, lh, hl, hh):
    h2, w2 = ll.shape[0], ll.shape[1]
    out = np.empty((2 * h2, 2 * w2) + ll.shape[2:], dtype=ll.dtype)
    out[0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    out[1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    out[1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


@dataclass(frozen=True)
class SubbandSet:
    """The four subbands of one decomposition level, each half the spatial
    size of the source: ll approximation, lh vertical detail, hl horizontal
    detail, hh diagonal detail."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        dims = self.ll.dims
        for name in ("lh", "hl", "hh"):
            if getattr(self, name).dims != dims:
                raise ShapeMismatchError(
                    f"subband {name} dims {getattr(self, name).dims} != ll dims {dims}"
                )

    @property
    def dims(self) -> tuple[int, ...]:
        return self.ll.dims


@dataclass(frozen=True)
class WaveletPyramid:
    """Recursive decomposition: level l is derived from level l-1's ll."""

    levels: tuple[SubbandSet, ...]

    @property
    def depth(self) -> int:
        return len(self.levels)


def _require_even(dims, op: str) -> None:
    if len(dims) != 3:
        raise ShapeMismatchError(f"{op}: expected (h, w, c) input, got dims {dims}")
    h, w, _ = dims
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"{op}: odd spatial dimension in dims {dims}")
    if h < 2 or w < 2:
        raise ShapeMismatchError(f"{op}: spatial dims must be >= 2, got {dims}")


def dhwt_forward(x) -> SubbandSet:
    """Single-level 2D Haar decomposition of a (h, w, c) tensor."""
    x = as_tensor(x)
    _require_even(x.dims, "dhwt_forward")
    (xa,) = _prep(x)
    out = _forward_arrays(xa)

    def backward(gs):
        return (_inverse_arrays(*gs),)

    ll, lh, hl, hh = apply_op("dhwt_forward", (x,), out, backward)
    return SubbandSet(ll=ll, lh=lh, hl=hl, hh=hh)


def dhwt_inverse(s: SubbandSet) -> Tensor:
    """Exact left-inverse of :func:`dhwt_forward`."""
    inputs = (s.ll, s.lh, s.hl, s.hh)
    arrays = _prep(*inputs)

    def backward(gs):
        return _forward_arrays(gs[0])

    return apply_op("dhwt_inverse", inputs, (_inverse_arrays(*arrays),), backward)


def dhwt_multilevel(x, max_depth: int | None = None) -> WaveletPyramid:
    """Decompose recursively on the ll subband until a spatial dim turns odd
    or drops below 2 (or ``max_depth`` levels, when given)."""
    x = as_tensor(x)
    _require_even(x.dims, "dhwt_multilevel")
    levels: list[SubbandSet] = []
    current = x
    while True:
        h, w, _ = current.dims
        if h < 2 or w < 2 or h % 2 or w % 2:
            break
        if max_depth is not None and len(levels) >= max_depth:
            break
        level = dhwt_forward(current)
        levels.append(level)
        current = level.ll
    return WaveletPyramid(levels=tuple(levels))
