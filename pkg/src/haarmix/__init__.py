"""Haar-wavelet token mixing and high-frequency augmentation at toy scale.

A self-contained differentiable numerics library plus the building blocks it
exists to host: the 2D Haar transform, high-frequency quantization
enhancement, token maps with intra-batch exchange, the wavelet mixing
encoder that replaces self-attention, proxy/queue contrastive losses, a
synthetic-identity training harness, and a linear-vs-quadratic scaling
benchmark. All capabilities are exposed through the ``haarmix`` CLI.
"""

from .numerics import GradTape, Tensor, gradcheck, ops

__version__ = "0.1.0"

__all__ = ["GradTape", "Tensor", "gradcheck", "ops", "__version__"]
