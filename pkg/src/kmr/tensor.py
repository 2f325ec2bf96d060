"""Dense feed-forward substrate: layers, models, datasets, forward/backward, SGD.

Every weight lives in a float64 numpy array. Quantization is value snapping;
``quant_bits`` is metadata the meters read. Masks are stored as float 0/1
arrays of the weight shape.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import DomainError, StructuralError
from .quantizer import BITWIDTHS, quantize_alive, quantize_uniform

KL_FLOOR = 1e-12


class Activation(str, enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"
    # Marks the logit layer: forward emits pre-softmax values, the softmax
    # is folded into the losses.
    SOFTMAX_OUTPUT = "softmax_output"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mse"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    mask: np.ndarray  # (out, in), entries in {0, 1}
    activation: Activation = Activation.RELU
    quant_bits: int | None = None
    lowrank: tuple[np.ndarray, np.ndarray] | None = None  # U (out, r), V (r, in)
    adapter: tuple[np.ndarray, np.ndarray] | None = None  # A (r, in), B (out, r)
    share: tuple[np.ndarray, np.ndarray] | None = None  # centers (k,), codes (out, in)
    frozen: bool = False  # base weights/bias excluded from SGD

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.activation = Activation(self.activation)
        self.check()

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def alive(self) -> int:
        return int(np.count_nonzero(self.mask))

    def check(self) -> None:
        if self.weights.ndim != 2:
            raise StructuralError("weights must be a 2-D matrix")
        out, inp = self.weights.shape
        if self.bias.shape != (out,):
            raise StructuralError(f"bias shape {self.bias.shape} != ({out},)")
        if self.mask.shape != self.weights.shape:
            raise StructuralError("mask shape differs from weights shape")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise StructuralError("mask entries must be 0 or 1")
        if self.quant_bits is not None and self.quant_bits not in BITWIDTHS:
            raise DomainError(f"quant_bits must be one of {BITWIDTHS}")
        if self.lowrank is not None:
            u, v = self.lowrank
            if u.shape[0] != out or v.shape[1] != inp or u.shape[1] != v.shape[0]:
                raise StructuralError("lowrank factors do not match layer shape")
        if self.adapter is not None:
            a, b = self.adapter
            if a.shape[1] != inp or b.shape[0] != out or a.shape[0] != b.shape[1]:
                raise StructuralError("adapter factors do not match layer shape")
        if self.share is not None:
            centers, codes = self.share
            if codes.shape != self.weights.shape:
                raise StructuralError("share codes must match weights shape")
            if codes.size and (codes.min() < 0 or codes.max() >= len(centers)):
                raise StructuralError("share code out of codebook range")


@dataclass
class Model:
    layers: list[DenseLayer]
    input_dim: int
    output_dim: int

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            layer.check()
            if layer.in_dim != width:
                raise StructuralError(
                    f"layer {i} expects {layer.in_dim} inputs but receives {width}"
                )
            width = layer.out_dim
        if width != self.output_dim:
            raise StructuralError(f"model emits {width} outputs, declared {self.output_dim}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def copy(self) -> Model:
        return copy.deepcopy(self)


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: Split = Split.TRAIN

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = Split(self.split)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise StructuralError("inputs must be (n, d) with one label per row")

    def __len__(self) -> int:
        return len(self.labels)


class Splits(NamedTuple):
    train: Dataset
    val: Dataset


@dataclass
class LayerGrads:
    bias: np.ndarray
    weights: np.ndarray | None = None
    U: np.ndarray | None = None
    V: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    effective: np.ndarray | None = None  # dL/dW_eff, for importance scoring


Gradients = list[LayerGrads]


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


def build_model(sizes: list[int], seed: int = 0) -> Model:
    """Fresh ReLU network ``sizes[0] -> ... -> sizes[-1]`` with a logit output layer."""
    if len(sizes) < 2 or min(sizes) < 1:
        raise DomainError(f"need at least input and output sizes >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(
            DenseLayer(
                weights=init_matrix(rng, n_out, n_in),
                bias=np.zeros(n_out),
                mask=np.ones((n_out, n_in)),
                activation=Activation.SOFTMAX_OUTPUT if last else Activation.RELU,
            )
        )
    return Model(layers, sizes[0], sizes[-1])


# -- effective weights -------------------------------------------------------


class _Used(NamedTuple):
    W: np.ndarray  # effective (out, in)
    U: np.ndarray | None
    V: np.ndarray | None
    A: np.ndarray | None
    B: np.ndarray | None


def _q(mat: np.ndarray, bits: int | None) -> np.ndarray:
    return mat if bits is None or mat.size == 0 else quantize_uniform(mat, bits)


def _used(layer: DenseLayer, simulate_quant: bool) -> _Used:
    bits = layer.quant_bits if simulate_quant else None
    u = v = a = b = None
    if layer.lowrank is not None:
        u, v = (_q(m, bits) for m in layer.lowrank)
        w = u @ v
    elif bits is not None:
        w = quantize_alive(layer.weights, layer.mask, bits) * layer.mask
    else:
        w = layer.weights * layer.mask
    if layer.adapter is not None:
        a, b = (_q(m, bits) for m in layer.adapter)
        w = w + b @ a
    return _Used(w, u, v, a, b)


def effective_weight(layer: DenseLayer) -> np.ndarray:
    return _used(layer, simulate_quant=False).W


# -- forward / backward ------------------------------------------------------


@dataclass
class _Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    used: list[_Used] = field(default_factory=list)


def _forward(model: Model, batch, simulate_quant: bool) -> tuple[np.ndarray, _Cache]:
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise StructuralError(
            f"batch shape {h.shape} incompatible with input_dim {model.input_dim}"
        )
    cache = _Cache()
    for layer in model.layers:
        used = _used(layer, simulate_quant)
        z = h @ used.W.T + layer.bias
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.used.append(used)
        h = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
    return h, cache


def forward(model: Model, batch, simulate_quant: bool = False) -> np.ndarray:
    """Logits for ``batch`` (n, input_dim).

    With ``simulate_quant`` every layer carrying ``quant_bits`` is evaluated at
    quantized weights (the training-time view used by QAT and fine-tuning).
    """
    return _forward(model, batch, simulate_quant)[0]


def _backprop(model: Model, cache: _Cache, dlogits: np.ndarray) -> Gradients:
    grads: Gradients = [None] * len(model.layers)  # type: ignore[list-item]
    d = dlogits
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        used = cache.used[i]
        if layer.activation is Activation.RELU:
            d = d * (cache.pre[i] > 0)
        g_eff = d.T @ cache.inputs[i]
        g = LayerGrads(bias=d.sum(axis=0), effective=g_eff)
        if layer.lowrank is not None:
            g.U = g_eff @ used.V.T
            g.V = used.U.T @ g_eff
        else:
            # straight-through: rounding contributes an identity Jacobian
            g.weights = g_eff * layer.mask
        if layer.adapter is not None:
            g.B = g_eff @ used.A.T
            g.A = used.B.T @ g_eff
        grads[i] = g
        if i > 0:
            d = d @ used.W
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_temp(logits, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / temperature`` along the last axis."""
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(p, q) -> float | np.ndarray:
    """KL(p || q) along the last axis, with q floored at 1e-12 and 0·log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise StructuralError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    logq = np.log(np.maximum(q, KL_FLOOR))
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - logq), 0.0)
    out = np.maximum(terms.sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def _targets(targets, n_out: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1:
        return one_hot(t.astype(np.int64), n_out)
    return t.astype(np.float64)


def loss_and_dlogits(logits, targets, kind: LossKind) -> tuple[float, np.ndarray]:
    n = len(logits)
    if n == 0:
        raise DomainError("loss over an empty batch")
    if LossKind(kind) is LossKind.CROSS_ENTROPY:
        labels = np.asarray(targets, dtype=np.int64)
        p = softmax_temp(logits)
        d = (p - one_hot(labels, logits.shape[1])) / n
        return cross_entropy(logits, labels), d
    t = _targets(targets, logits.shape[1])
    if t.shape != logits.shape:
        raise StructuralError(f"target shape {t.shape} != logits shape {logits.shape}")
    diff = logits - t
    return float((diff**2).sum(axis=1).mean()), 2.0 * diff / n


def loss(model: Model, data: Dataset, kind: LossKind = LossKind.CROSS_ENTROPY) -> float:
    """Mean per-example loss over ``data``."""
    if len(data) == 0:
        raise DomainError("loss over an empty dataset")
    return loss_and_dlogits(forward(model, data.inputs), data.labels, kind)[0]


def backward(
    model: Model,
    batch,
    targets,
    kind: LossKind = LossKind.CROSS_ENTROPY,
    simulate_quant: bool = False,
) -> Gradients:
    """Gradients of the mean loss w.r.t. every parameter.

    ``targets`` are integer labels, or for MSE a float matrix of the logit shape.
    """
    logits, cache = _forward(model, batch, simulate_quant)
    if len(np.asarray(targets)) != len(logits):
        raise StructuralError("targets and batch lengths differ")
    _, d = loss_and_dlogits(logits, targets, kind)
    return _backprop(model, cache, d)


def backward_from_logits(
    model: Model, batch, dloss_dlogits_fn: Callable, simulate_quant: bool = False
) -> tuple[float, Gradients]:
    """Backprop an arbitrary scalar loss given ``fn(logits) -> (loss, dlogits)``."""
    logits, cache = _forward(model, batch, simulate_quant)
    value, d = dloss_dlogits_fn(logits)
    return value, _backprop(model, cache, d)


# -- updates -----------------------------------------------------------------


def _check_grads(model: Model, grads: Gradients) -> None:
    if len(grads) != len(model.layers):
        raise StructuralError("gradient list length differs from layer count")
    for layer, g in zip(model.layers, grads):
        if g.bias.shape != layer.bias.shape:
            raise StructuralError("bias gradient shape mismatch")
        if g.weights is not None and g.weights.shape != layer.weights.shape:
            raise StructuralError("weight gradient shape mismatch")


def _sgd_inplace(model: Model, grads: Gradients, lr: float, freeze_base: bool) -> None:
    for layer, g in zip(model.layers, grads):
        if layer.adapter is not None:
            a, b = layer.adapter
            layer.adapter = (a - lr * g.A, b - lr * g.B)
        if layer.lowrank is not None and not layer.frozen:
            u, v = layer.lowrank
            layer.lowrank = (u - lr * g.U, v - lr * g.V)
        if layer.frozen or freeze_base:
            continue
        layer.bias -= lr * g.bias
        if layer.lowrank is not None:
            continue  # dense weights are provenance only
        if layer.share is not None:
            centers, codes = layer.share
            alive = layer.mask != 0
            step = np.bincount(codes[alive], weights=g.weights[alive], minlength=len(centers))
            centers = centers - lr * step
            layer.weights[alive] = centers[codes[alive]]
            layer.share = (centers, codes)
        else:
            layer.weights -= lr * g.weights


def sgd_step(model: Model, grads: Gradients, lr: float, freeze_base: bool = False) -> Model:
    """Return a copy with ``p <- p - lr * g`` applied to trainable parameters.

    Frozen layers only move their adapters. ``freeze_base`` additionally pins
    every dense weight and bias, leaving adapters and low-rank factors. Shared
    layers update their codebook with the summed member gradients.
    """
    if lr < 0:
        raise DomainError(f"learning rate must be non-negative, got {lr}")
    _check_grads(model, grads)
    out = model.copy()
    _sgd_inplace(out, grads, lr, freeze_base)
    return out


def snap_quantized(model: Model, only: Iterable[int] | None = None) -> Model:
    """Re-snap quantized layers (all, or the indices in ``only``) onto their grid."""
    out = model.copy()
    picked = set(range(len(out.layers)) if only is None else only)
    for i, layer in enumerate(out.layers):
        bits = layer.quant_bits if i in picked else None
        if bits is None:
            continue
        if layer.lowrank is not None:
            layer.lowrank = tuple(_q(m, bits) for m in layer.lowrank)
        else:
            layer.weights = quantize_alive(layer.weights, layer.mask, bits)
            if layer.share is not None:
                centers, codes = layer.share
                centers = centers.copy()
                alive = layer.mask != 0
                centers[codes[alive]] = layer.weights[alive]
                layer.share = (centers, codes)
        if layer.adapter is not None:
            layer.adapter = tuple(_q(m, bits) for m in layer.adapter)
    return out


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_sgd(
    model: Model,
    data: Dataset,
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
    kind: LossKind = LossKind.CROSS_ENTROPY,
    simulate_quant: bool = True,
    freeze_base: bool = False,
) -> Model:
    """Mini-batch SGD. Quantized layers train through the straight-through
    estimator and are snapped back onto their grid at the end."""
    if epochs < 0:
        raise DomainError("epochs must be >= 0")
    if epochs == 0:
        return model.copy()
    if len(data) == 0:
        raise DomainError("training split is empty")
    if lr < 0 or batch_size < 1:
        raise DomainError("lr must be >= 0 and batch_size >= 1")
    out = model.copy()
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in minibatches(len(data), batch_size, rng):
            grads = backward(out, data.inputs[idx], data.labels[idx], kind, simulate_quant)
            _sgd_inplace(out, grads, lr, freeze_base)
    return snap_quantized(out) if simulate_quant else out


# -- comparison --------------------------------------------------------------


def _arrays_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_arrays_equal(x, y) for x, y in zip(a, b))
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


def model_equal(a: Model, b: Model) -> bool:
    """Structural and bit-level equality of two models."""
    if (a.input_dim, a.output_dim, len(a.layers)) != (b.input_dim, b.output_dim, len(b.layers)):
        return False
    for x, y in zip(a.layers, b.layers):
        if (x.activation, x.quant_bits, x.frozen) != (y.activation, y.quant_bits, y.frozen):
            return False
        for name in ("weights", "bias", "mask", "lowrank", "adapter", "share"):
            if not _arrays_equal(getattr(x, name), getattr(y, name)):
                return False
    return True
