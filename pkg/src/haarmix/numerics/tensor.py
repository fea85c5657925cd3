"""Dense tensor type and the reverse-mode gradient tape.

Tensors wrap a row-major numpy array plus a ``requires_grad`` flag. They are
value-like: nothing mutates a tensor's payload once built, with the single
documented exception of :meth:`Tensor.assign_`, used by optimizers between
tapes. A :class:`GradTape` is an ordered record of executed operations; it is
confined to the thread that opened it, and replaying it in reverse yields
exactly one gradient contribution per use of each input.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf while checks are enabled."""


class GradTapeError(ValueError):
    """Raised on invalid backward requests (non-scalar loss, detached graph)."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def force_float64_enabled() -> bool:
    return getattr(_state, "force64", False)


class force_float64:
    """Context manager promoting all op arithmetic to 64-bit.

    Used by the gradient checker so finite differences are trustworthy; the
    default compute precision everywhere else is 32-bit.
    """

    def __enter__(self):
        self._prev = force_float64_enabled()
        _state.force64 = True
        return self

    def __exit__(self, *exc):
        _state.force64 = self._prev
        return False


_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every operation (off by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """Dense row-major n-dimensional real array.

    The universal value type for features, tokens, parameters and gradients.
    Data is float32 by default; float64 is used inside gradcheck mode.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        elif (
            dtype is None
            and arr.dtype == np.float64
            and not isinstance(data, (np.ndarray, np.generic))
        ):
            # python scalars/lists land at the 32-bit default; explicit
            # float64 arrays and numpy scalars (gradcheck mode) keep precision
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite values")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"item() needs a single-element tensor, got dims {self.dims}"
            )
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values with no gradient lineage."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def assign_(self, data: np.ndarray) -> None:
        """Replace the payload in place. Optimizer-only: never call while a
        tape recorded against this tensor is still live."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeMismatchError(
                f"assign_ shape {arr.shape} != tensor dims {self.data.shape}"
            )
        self.data = arr

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype.name}{grad})"

    # Arithmetic sugar is attached by haarmix.numerics.ops at import time so
    # the op registry stays in one module.


class _TapeEntry:
    __slots__ = ("name", "inputs", "outputs", "backward")

    def __init__(self, name, inputs, outputs, backward):
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class GradTape:
    """Ordered record of executed operations for reverse accumulation.

    Use as a context manager around the forward computation, then call
    :meth:`backward` (or the module-level :func:`backward`) on a scalar loss.
    A tape belongs to the thread that entered it; run independent tapes for
    parallel work, never one tape across threads.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise GradTapeError("GradTape exited out of order")
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(
        self,
        name: str,
        inputs: Sequence[Tensor],
        outputs: Sequence[Tensor],
        backward: Callable,
    ) -> None:
        """Append one executed op. ``backward`` maps the tuple of output
        gradients (ndarrays, never None) to per-input gradients (ndarray or
        None for inputs that need none)."""
        self._entries.append(_TapeEntry(name, tuple(inputs), tuple(outputs), backward))
        for out in outputs:
            self._output_ids.add(id(out))

    def backward(
        self, loss: Tensor, params: Iterable[Tensor] | None = None
    ) -> dict[Tensor, np.ndarray]:
        """Reverse-accumulate d(loss)/d(x) for every reachable input.

        Returns a map over parameters: the given ``params`` (unreached ones
        get zeros), or every reachable requires-grad leaf when ``params`` is
        omitted. ``loss`` must be scalar and produced on this tape.
        """
        if loss.size != 1:
            raise GradTapeError(f"loss must be scalar, got dims {loss.dims}")
        if not loss.requires_grad or id(loss) not in self._output_ids:
            raise GradTapeError(
                "loss is detached: not produced by operations recorded on this tape"
            )

        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        leaves: dict[int, Tensor] = {}
        for entry in reversed(self._entries):
            out_grads = tuple(grads.get(id(o)) for o in entry.outputs)
            if all(g is None for g in out_grads):
                continue
            out_grads = tuple(
                g if g is not None else np.zeros_like(o.data)
                for g, o in zip(out_grads, entry.outputs)
            )
            in_grads = entry.backward(out_grads)
            for tensor, grad in zip(entry.inputs, in_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ShapeMismatchError(
                        f"{entry.name}: gradient shape {grad.shape} != input dims "
                        f"{tensor.data.shape}"
                    )
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if key not in self._output_ids:
                    leaves[key] = tensor

        if params is None:
            return {t: grads[key] for key, t in leaves.items()}
        result: dict[Tensor, np.ndarray] = {}
        for p in params:
            g = grads.get(id(p))
            result[p] = g if g is not None else np.zeros_like(p.data)
        return result


def backward(
    loss: Tensor, params: Iterable[Tensor] | None = None, tape: GradTape | None = None
) -> dict[Tensor, np.ndarray]:
    """Module-level convenience for ``tape.backward``; defaults to the
    innermost active tape."""
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise GradTapeError("no active GradTape to backward through")
    return tape.backward(loss, params)
