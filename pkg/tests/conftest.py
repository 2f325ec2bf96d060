from __future__ import annotations

import numpy as np
import pytest

from kmr.data import DatasetSpec, generate_dataset
from kmr.tensor import build_model, train_sgd


def central_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


@pytest.fixture(scope="session")
def blobs():
    return generate_dataset(DatasetSpec(n=150, noise=0.4), seed=0)


@pytest.fixture(scope="session")
def trained(blobs):
    return train_sgd(build_model([2, 8, 8, 3], 0), blobs.train, 20, 0.1, 32, 0)
