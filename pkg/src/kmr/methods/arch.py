"""Architectural and parameter-sharing rules.

Low-rank factorization, adapter injection, width/depth rebuilds, k-means
weight sharing, and adapter-only fine-tuning.
"""

from __future__ import annotations

import numpy as np

from ..core import Instantiation, Knob, PositiveInteger, Rule
from ..errors import ConfigurationError, DomainError, StructuralError
from ..tensor import Dataset, Model, build_model, init_matrix, snap_quantized, train_sgd
from .svd import truncated_factors

KMEANS_ITERS = 20


def _layer(model: Model, index: int):
    if not 0 <= index < len(model.layers):
        raise StructuralError(f"model has no layer {index}")
    return model.layers[index]


def lowrank_factorize(model: Model, layer_index: int, rank: int) -> Model:
    """Replace the layer's weight path by its best rank-``rank`` approximation.

    The dense matrix stays on the layer for provenance only; meters and the
    forward pass use ``U @ V``. Re-factorizing a factorized layer is allowed.
    """
    out = model.copy()
    layer = _layer(out, layer_index)
    if not 1 <= rank <= min(layer.out_dim, layer.in_dim):
        raise DomainError(f"rank {rank} outside [1, {min(layer.out_dim, layer.in_dim)}]")
    base = layer.lowrank[0] @ layer.lowrank[1] if layer.lowrank is not None else layer.weights * layer.mask
    layer.lowrank = truncated_factors(base, rank)
    layer.share = None
    return snap_quantized(out, only=[layer_index])


def inject_adapter(model: Model, layer_index: int, rank: int, seed: int = 0) -> Model:
    """Attach a trainable ``B @ A`` pathway (B zero-initialized) and freeze the base."""
    out = model.copy()
    layer = _layer(out, layer_index)
    if not 1 <= rank <= min(layer.out_dim, layer.in_dim):
        raise DomainError(f"adapter rank {rank} outside [1, {min(layer.out_dim, layer.in_dim)}]")
    if layer.adapter is not None:
        raise StructuralError(f"layer {layer_index} already has an adapter")
    rng = np.random.default_rng(seed)
    layer.adapter = (init_matrix(rng, rank, layer.in_dim), np.zeros((layer.out_dim, rank)))
    layer.frozen = True
    return out


def _hidden_shape(model: Model) -> tuple[int, int]:
    hidden = [layer.out_dim for layer in model.layers[:-1]]
    return len(hidden), (hidden[0] if hidden else model.output_dim)


def resize(model: Model, depth: int, width: int, seed: int = 0) -> Model:
    """Rebuild with ``depth`` hidden layers of ``width`` units; weights are re-initialized."""
    if depth < 1 or width < 1:
        raise DomainError("depth and width must be >= 1")
    return build_model([model.input_dim, *([width] * depth), model.output_dim], seed)


def kmeans_1d(values: np.ndarray, k: int, iters: int = KMEANS_ITERS) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on scalars. Centers start at the inverted-CDF quantiles
    ``(j + 0.5) / k``; ties in assignment go to the lower center index; empty
    clusters keep their center."""
    values = np.asarray(values, dtype=np.float64)
    centers = np.quantile(values, (np.arange(k) + 0.5) / k, method="inverted_cdf")
    codes = np.zeros(len(values), dtype=np.int64)
    for _ in range(iters):
        codes = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        sums = np.bincount(codes, weights=values, minlength=k)
        counts = np.bincount(codes, minlength=k)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        if np.array_equal(new, centers):
            break
        centers = new
    codes = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
    return centers, codes


def weight_share(model: Model, layer_index: int, clusters: int) -> Model:
    """Cluster the layer's alive weights into ``clusters`` shared values."""
    out = model.copy()
    layer = _layer(out, layer_index)
    if layer.lowrank is not None:
        raise StructuralError("cannot share weights of a factorized layer")
    alive = layer.mask != 0
    if not 1 <= clusters <= int(alive.sum()):
        raise DomainError(f"clusters {clusters} outside [1, {int(alive.sum())}]")
    values = layer.weights[alive]
    centers, codes = kmeans_1d(values, clusters)
    full_codes = np.zeros(layer.weights.shape, dtype=np.int64)
    full_codes[alive] = codes
    layer.weights = layer.weights.copy()
    layer.weights[alive] = centers[codes]
    layer.share = (centers, full_codes)
    return snap_quantized(out, only=[layer_index])


def peft_finetune(model: Model, data: Dataset, epochs: int, lr: float,
                  batch_size: int = 32, seed: int = 0) -> Model:
    """Train adapters and low-rank factors only; all base weights and biases stay put."""
    trainable = any(layer.adapter is not None or layer.lowrank is not None for layer in model.layers)
    if not trainable:
        raise ConfigurationError("model has no adapters or low-rank factors to train")
    return train_sgd(model, data, epochs, lr, batch_size, seed, simulate_quant=True, freeze_base=True)


def _layer_knob_max(model: Model, i: int) -> int:
    layer = model.layers[i]
    return min(layer.out_dim, layer.in_dim)


def arch_instantiation(model: Model, seed: int = 0, max_width: int = 1024, max_depth: int = 16) -> Instantiation:
    """Knobs ``rank.<i>``, ``adapter.<i>``, ``width`` and ``depth`` for ``model``'s layout."""
    knobs, rules = [], []
    for i in range(len(model.layers)):
        cap = PositiveInteger(_layer_knob_max(model, i))
        knobs += [Knob(f"rank.{i}", cap), Knob(f"adapter.{i}", cap)]
        rules += [
            Rule(f"lowrank_{i}", f"rank.{i}", lambda m, v, i=i: lowrank_factorize(m, i, int(v))),
            Rule(f"adapter_{i}", f"adapter.{i}", lambda m, v, i=i: inject_adapter(m, i, int(v), seed)),
        ]
    knobs += [Knob("width", PositiveInteger(max_width)), Knob("depth", PositiveInteger(max_depth))]
    rules += [
        Rule("resize_width", "width",
             lambda m, v: resize(m, max(1, _hidden_shape(m)[0]), int(v), seed)),
        Rule("resize_depth", "depth",
             lambda m, v: resize(m, int(v), _hidden_shape(m)[1], seed)),
    ]
    return Instantiation.build("arch", knobs, rules,
                               cost_meters=("param_count", "flops"), quality_meters=("val_accuracy",))


def other_instantiation(model: Model) -> Instantiation:
    """Knobs ``share.<i>`` (codebook size) and ``tensor_rank.<i>`` (matrix SVD)."""
    knobs, rules = [], []
    for i, layer in enumerate(model.layers):
        knobs += [Knob(f"share.{i}", PositiveInteger(layer.weights.size)),
                  Knob(f"tensor_rank.{i}", PositiveInteger(_layer_knob_max(model, i)))]
        rules += [
            Rule(f"share_{i}", f"share.{i}", lambda m, v, i=i: weight_share(m, i, int(v))),
            Rule(f"tensor_lowrank_{i}", f"tensor_rank.{i}",
                 lambda m, v, i=i: lowrank_factorize(m, i, int(v))),
        ]
    return Instantiation.build("other", knobs, rules,
                               cost_meters=("memory_bytes",), quality_meters=("val_accuracy",))
