"""Model checkpoints: a directory of named tensor files plus a manifest.

The manifest is plain text, one ``name dim0xdim1x...`` line per tensor.
Loading reads the manifest, validates every entry against the expected
shapes (the live model built from config), and fails on missing, extra, or
reshaped entries. Parameter names come from walking dataclass containers.
"""

from __future__ import annotations

import dataclasses
import os
from typing import Iterator

from .numerics.tensor import ShapeMismatchError, Tensor
from .numerics.tensorfile import read_tensor, write_tensor

MANIFEST_NAME = "manifest.txt"


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses / lists / tuples / dicts, yielding dotted tensor names."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(value, name)
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            yield from named_tensors(value, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key, value in obj.items():
            yield from named_tensors(value, f"{prefix}.{key}" if prefix else str(key))


def parameters(obj) -> list[Tensor]:
    """All requires-grad tensors reachable from ``obj``."""
    return [t for _, t in named_tensors(obj) if t.requires_grad]


def _shape_str(dims: tuple[int, ...]) -> str:
    return "x".join(str(d) for d in dims) if dims else "scalar"


def save_checkpoint(directory, model) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name, tensor in named_tensors(model):
        write_tensor(os.path.join(directory, f"{name}.htns"), tensor)
        lines.append(f"{name} {_shape_str(tensor.dims)}\n")
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        fh.writelines(lines)


def load_checkpoint(directory, model) -> None:
    """Load saved tensors into ``model`` in place, validating names and
    shapes against the manifest and the model structure."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    listed: dict[str, str] = {}
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape = line.rsplit(" ", 1)
            listed[name] = shape

    expected = dict(named_tensors(model))
    missing = sorted(set(expected) - set(listed))
    extra = sorted(set(listed) - set(expected))
    if missing or extra:
        raise ShapeMismatchError(
            f"checkpoint does not match model: missing={missing[:5]} extra={extra[:5]}"
        )
    for name, tensor in expected.items():
        if listed[name] != _shape_str(tensor.dims):
            raise ShapeMismatchError(
                f"checkpoint entry {name}: shape {listed[name]} != model "
                f"{_shape_str(tensor.dims)}"
            )
        loaded = read_tensor(os.path.join(directory, f"{name}.htns"))
        if loaded.dims != tensor.dims:
            raise ShapeMismatchError(
                f"checkpoint file {name}: dims {loaded.dims} != manifest {tensor.dims}"
            )
        tensor.assign_(loaded.data)
