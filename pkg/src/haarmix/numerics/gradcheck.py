"""Finite-difference gradient checking.

Compares reverse-accumulated gradients against central differences. All
arithmetic inside a check runs at 64-bit precision regardless of the inputs'
storage dtype, so the finite differences have enough headroom to certify
analytic gradients to 1e-6 and better.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import GradTape, NonFiniteError, ShapeMismatchError, Tensor, force_float64


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued. The error at each coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``; the maximum over
    coordinates is returned.
    """
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("gradcheck: input contains non-finite values")
    with force_float64():
        x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
        with GradTape() as tape:
            out = f(x64)
        if out.size != 1:
            raise ShapeMismatchError(
                f"gradcheck: f must be scalar-valued, got dims {out.dims}"
            )
        if not np.isfinite(out.item()):
            raise NonFiniteError("gradcheck: f produced a non-finite value")
        analytic = tape.backward(out, [x64])[x64].reshape(-1)

        flat = x64.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + eps
            hi = f(Tensor(bumped.reshape(x.dims))).item()
            bumped[i] = flat[i] - eps
            lo = f(Tensor(bumped.reshape(x.dims))).item()
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError(
                    f"gradcheck: non-finite intermediate at coordinate {i}"
                )
            numeric[i] = (hi - lo) / (2.0 * eps)

    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if flat.size else 0.0
