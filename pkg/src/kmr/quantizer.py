"""Uniform weight quantizer.

Kept dependency-free (numpy only) so the tensor core can simulate
quantization in its forward pass without importing the method modules.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

BITWIDTHS = (1, 2, 4, 8, 16, 32)


def step_size(values: np.ndarray, bits: int) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float((values.max() - values.min()) / (2**bits - 1))


def quantize_uniform(values, bits: int) -> np.ndarray:
    """Snap ``values`` onto multiples of ``delta = (max - min) / (2**bits - 1)``.

    Rounding is half-to-even. A constant array (``delta == 0``) is returned
    unchanged. The grid is not offset by ``min``, so it is symmetric around 0.
    """
    if bits not in BITWIDTHS:
        raise DomainError(f"bits must be one of {BITWIDTHS}, got {bits!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DomainError("cannot quantize an empty array")
    delta = step_size(values, bits)
    if delta == 0.0:
        return values.copy()
    return delta * np.round(values / delta)


def quantize_alive(weights: np.ndarray, mask: np.ndarray, bits: int) -> np.ndarray:
    """Quantize only the unmasked entries; masked entries are returned as stored."""
    out = np.array(weights, dtype=np.float64, copy=True)
    alive = mask != 0
    if alive.any():
        out[alive] = quantize_uniform(out[alive], bits)
    return out
