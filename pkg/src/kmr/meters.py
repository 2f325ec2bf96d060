"""Cost and quality meters.

Cost meters are analytic functions of model structure (never timed). Quality
meters read a held-out validation split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError
from .tensor import Dataset, DenseLayer, LossKind, Model, Split, forward, loss

FULL_PRECISION_BITS = 64


@dataclass(frozen=True)
class MeterReading:
    cost: float
    quality: float
    cost_meter_id: str
    quality_meter_id: str

    def __post_init__(self):
        if self.cost < 0:
            raise DomainError(f"cost must be non-negative, got {self.cost}")

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "quality": self.quality,
            "cost_meter_id": self.cost_meter_id,
            "quality_meter_id": self.quality_meter_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MeterReading:
        return cls(d["cost"], d["quality"], d["cost_meter_id"], d["quality_meter_id"])


@dataclass(frozen=True)
class AggregateSpec:
    cost_weights: dict[str, float] = field(default_factory=dict)
    quality_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, weights in (("cost", self.cost_weights), ("quality", self.quality_weights)):
            if any(w < 0 for w in weights.values()):
                raise ConfigurationError(f"{name} weights must be >= 0")
            if not any(w > 0 for w in weights.values()):
                raise ConfigurationError(f"{name} weights need at least one nonzero entry")


def _layer_weight_params(layer: DenseLayer) -> int:
    if layer.lowrank is not None:
        return sum(m.size for m in layer.lowrank)
    return layer.alive


def param_count(model: Model) -> int:
    total = 0
    for layer in model.layers:
        total += _layer_weight_params(layer) + layer.bias.size
        if layer.adapter is not None:
            total += sum(m.size for m in layer.adapter)
    return total


def flops(model: Model) -> int:
    """2 x multiply-accumulates per example. Masks do not reduce the dense count;
    only structural shrinking and factorization do."""
    macs = 0
    for layer in model.layers:
        if layer.lowrank is not None:
            u, v = layer.lowrank
            macs += u.size + v.size
        else:
            macs += layer.weights.size
        if layer.adapter is not None:
            macs += sum(m.size for m in layer.adapter)
    return 2 * macs


def layer_weight_bits(layer: DenseLayer) -> int:
    bits = layer.quant_bits or FULL_PRECISION_BITS
    if layer.lowrank is not None:
        total = sum(m.size for m in layer.lowrank) * bits
    elif layer.share is not None:
        k = len(layer.share[0])
        total = k * bits + layer.alive * math.ceil(math.log2(k))
    else:
        total = layer.alive * bits
    if layer.adapter is not None:
        total += sum(m.size for m in layer.adapter) * bits
    return total


def memory_bytes(model: Model) -> float:
    """Storage footprint; biases always count at 64 bits."""
    bits = 0
    for layer in model.layers:
        bits += layer_weight_bits(layer) + layer.bias.size * FULL_PRECISION_BITS
    return bits / 8


def _require_val(data: Dataset) -> None:
    if len(data) == 0:
        raise DomainError("quality meters need a nonempty dataset")
    if data.split is not Split.VALIDATION:
        raise DomainError("quality is measured on the validation split only")


def accuracy(model: Model, data: Dataset) -> float:
    _require_val(data)
    pred = np.argmax(forward(model, data.inputs), axis=1)  # ties -> lowest index
    return float(np.mean(pred == data.labels))


def neg_val_loss(model: Model, data: Dataset) -> float:
    _require_val(data)
    return -loss(model, data, LossKind.CROSS_ENTROPY)


COST_METERS: dict[str, Callable[[Model], float]] = {
    "param_count": param_count,
    "flops": flops,
    "memory_bytes": memory_bytes,
}

QUALITY_METERS: dict[str, Callable[[Model, Dataset], float]] = {
    "val_accuracy": accuracy,
    "neg_val_loss": neg_val_loss,
}


def cost_meter(meter_id: str) -> Callable[[Model], float]:
    try:
        return COST_METERS[meter_id]
    except KeyError:
        raise ConfigurationError(f"unknown cost meter {meter_id!r}") from None


def quality_meter(meter_id: str) -> Callable[[Model, Dataset], float]:
    try:
        return QUALITY_METERS[meter_id]
    except KeyError:
        raise ConfigurationError(f"unknown quality meter {meter_id!r}") from None


def aggregate(readings: list[MeterReading], spec: AggregateSpec) -> MeterReading:
    """Weighted sums of cost and quality meters, looked up by meter id."""

    def pick(meter_id: str, attr: str):
        for r in readings:
            if getattr(r, f"{attr}_meter_id") == meter_id:
                return getattr(r, attr)
        raise ConfigurationError(f"no reading for {attr} meter {meter_id!r}")

    cost = sum(w * pick(m, "cost") for m, w in spec.cost_weights.items())
    quality = sum(w * pick(m, "quality") for m, w in spec.quality_weights.items())

    def label(weights: dict[str, float]) -> str:
        live = [(m, w) for m, w in weights.items() if w != 0]
        return live[0][0] if len(live) == 1 and live[0][1] == 1 else "aggregate"

    return MeterReading(cost, quality, label(spec.cost_weights), label(spec.quality_weights))


@dataclass
class MeterSuite:
    """Binds meter ids (or an aggregate) to a validation split."""

    val: Dataset
    cost_meter_id: str = "param_count"
    quality_meter_id: str = "val_accuracy"
    aggregate_spec: AggregateSpec | None = None

    def __post_init__(self):
        for m in self._cost_ids():
            cost_meter(m)
        for m in self._quality_ids():
            quality_meter(m)

    def _cost_ids(self) -> list[str]:
        if self.aggregate_spec is not None:
            return list(self.aggregate_spec.cost_weights)
        return [self.cost_meter_id]

    def _quality_ids(self) -> list[str]:
        if self.aggregate_spec is not None:
            return list(self.aggregate_spec.quality_weights)
        return [self.quality_meter_id]

    def cost(self, model: Model) -> float:
        if self.aggregate_spec is None:
            return cost_meter(self.cost_meter_id)(model)
        return sum(w * cost_meter(m)(model) for m, w in self.aggregate_spec.cost_weights.items())

    def measure(self, model: Model) -> MeterReading:
        if self.aggregate_spec is None:
            return MeterReading(
                cost_meter(self.cost_meter_id)(model),
                quality_meter(self.quality_meter_id)(model, self.val),
                self.cost_meter_id,
                self.quality_meter_id,
            )
        costs = {m: cost_meter(m)(model) for m in self._cost_ids()}
        quals = {m: quality_meter(m)(model, self.val) for m in self._quality_ids()}
        q0, c0 = next(iter(quals)), next(iter(costs))
        readings = [MeterReading(c, quals[q0], m, q0) for m, c in costs.items()]
        readings += [MeterReading(costs[c0], q, c0, m) for m, q in quals.items()]
        return aggregate(readings, self.aggregate_spec)
