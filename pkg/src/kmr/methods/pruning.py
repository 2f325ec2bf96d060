"""Importance scoring plus unstructured (mask) and structured (unit) pruning.

Fractions are relative to what is currently alive, so repeated pruning
compounds. Counts use floor; ties go to the lowest flat index.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import Instantiation, Interval, Knob, Rule
from ..errors import DomainError, StructuralError
from ..tensor import Dataset, Model, backward, effective_weight

log = logging.getLogger(__name__)


class Criterion(str, enum.Enum):
    MAGNITUDE = "magnitude"
    GRADIENT_MAGNITUDE = "gradient_magnitude"


class Scope(str, enum.Enum):
    GLOBAL = "global"
    PER_LAYER = "per_layer"


@dataclass(frozen=True)
class PruneCriterion:
    kind: Criterion = Criterion.MAGNITUDE
    scope: Scope = Scope.PER_LAYER

    def __post_init__(self):
        object.__setattr__(self, "kind", Criterion(self.kind))
        object.__setattr__(self, "scope", Scope(self.scope))


def _effective_grads(model: Model, data: Dataset | None) -> list[np.ndarray]:
    if data is None or len(data) == 0:
        raise DomainError("gradient criterion needs a nonempty calibration batch")
    return [g.effective for g in backward(model, data.inputs, data.labels)]


def importance_scores(
    model: Model, criterion: PruneCriterion = PruneCriterion(), data: Dataset | None = None
) -> list[np.ndarray | None]:
    """Per-weight scores of every dense layer; ``None`` for factorized layers.

    Magnitude gives ``|w|`` of the masked weights, the gradient criterion
    ``|w * dL/dw|`` on ``data``. Masked-out entries score 0.
    """
    grads = _effective_grads(model, data) if criterion.kind is Criterion.GRADIENT_MAGNITUDE else None
    scores = []
    for i, layer in enumerate(model.layers):
        if layer.lowrank is not None:
            scores.append(None)
            continue
        w = layer.weights * layer.mask
        scores.append(np.abs(w) if grads is None else np.abs(w * grads[i] * layer.mask))
    return scores


def unit_scores(
    model: Model, criterion: PruneCriterion = PruneCriterion(), data: Dataset | None = None
) -> list[np.ndarray]:
    """Scores of the hidden units of every non-output layer.

    A unit's member weights are its incoming row and its outgoing column in
    the next layer (effective weights, so factors and adapters count).
    """
    grads = _effective_grads(model, data) if criterion.kind is Criterion.GRADIENT_MAGNITUDE else None
    per_weight = []
    for i, layer in enumerate(model.layers):
        w = effective_weight(layer)
        per_weight.append(np.abs(w) if grads is None else np.abs(w * grads[i]))
    return [per_weight[i].sum(axis=1) + per_weight[i + 1].sum(axis=0)
            for i in range(len(model.layers) - 1)]


def _lowest(scores: np.ndarray, alive: np.ndarray, count: int) -> np.ndarray:
    """Flat indices of the ``count`` lowest-scoring alive entries (stable ties)."""
    idx = np.flatnonzero(alive)
    order = np.argsort(scores.ravel()[idx], kind="stable")
    return idx[order[:count]]


def prune_unstructured(
    model: Model,
    fraction: float,
    criterion: PruneCriterion = PruneCriterion(),
    data: Dataset | None = None,
) -> Model:
    """Mask ``floor(fraction * alive)`` more weights with the lowest scores."""
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"prune fraction must lie in [0, 1], got {fraction}")
    out = model.copy()
    if fraction == 0.0:
        return out
    scores = importance_scores(out, criterion, data)
    dense = [i for i, s in enumerate(scores) if s is not None]
    if criterion.scope is Scope.PER_LAYER:
        for i in dense:
            layer = out.layers[i]
            k = math.floor(fraction * layer.alive)
            drop = _lowest(scores[i], layer.mask != 0, k)
            layer.mask.flat[drop] = 0.0
        return out
    flat_scores = np.concatenate([scores[i].ravel() for i in dense])
    flat_alive = np.concatenate([out.layers[i].mask.ravel() != 0 for i in dense])
    drop = _lowest(flat_scores, flat_alive, math.floor(fraction * int(flat_alive.sum())))
    offset = 0
    for i in dense:
        mask = out.layers[i].mask
        local = drop[(drop >= offset) & (drop < offset + mask.size)] - offset
        mask.flat[local] = 0.0
        offset += mask.size
    return out


def _remove_units(model: Model, layer_index: int, keep: np.ndarray) -> None:
    """Drop rows of layer ``layer_index`` and the matching inputs of the next layer."""
    layer = model.layers[layer_index]
    nxt = model.layers[layer_index + 1]
    layer.weights = layer.weights[keep]
    layer.mask = layer.mask[keep]
    layer.bias = layer.bias[keep]
    if layer.lowrank is not None:
        u, v = layer.lowrank
        layer.lowrank = (u[keep], v)
    if layer.adapter is not None:
        a, b = layer.adapter
        layer.adapter = (a, b[keep])
    if layer.share is not None:
        centers, codes = layer.share
        layer.share = (centers, codes[keep])
    nxt.weights = nxt.weights[:, keep]
    nxt.mask = nxt.mask[:, keep]
    if nxt.lowrank is not None:
        u, v = nxt.lowrank
        nxt.lowrank = (u, v[:, keep])
    if nxt.adapter is not None:
        a, b = nxt.adapter
        nxt.adapter = (a[:, keep], b)
    if nxt.share is not None:
        centers, codes = nxt.share
        nxt.share = (centers, codes[:, keep])


def prune_structured(
    model: Model,
    fraction: float,
    criterion: PruneCriterion = PruneCriterion(),
    data: Dataset | None = None,
) -> Model:
    """Remove ``floor(fraction * units)`` lowest-scoring units from each hidden
    layer, shrinking that layer's rows and the next layer's columns.

    At least one unit per hidden layer is always kept.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"prune fraction must lie in [0, 1], got {fraction}")
    if len(model.layers) < 2:
        raise StructuralError("structured pruning needs at least one hidden layer")
    out = model.copy()
    if fraction == 0.0:
        return out
    scores = unit_scores(out, criterion, data)
    for i in range(len(out.layers) - 1):
        units = out.layers[i].out_dim
        k = math.floor(fraction * units)
        if k >= units:
            log.info("layer %d: clipping unit removal %d -> %d to keep one unit", i, k, units - 1)
            k = units - 1
        if k == 0:
            continue
        drop = np.argsort(scores[i], kind="stable")[:k]
        keep = np.setdiff1d(np.arange(units), drop)
        _remove_units(out, i, keep)
    out.check()
    return out


def make_instantiation(
    criterion: PruneCriterion = PruneCriterion(),
    calib: Dataset | None = None,
    structured: bool = True,
) -> Instantiation:
    """Knobs ``prune_frac`` (mask weights) and, optionally, ``prune_units``."""
    knobs = [Knob("prune_frac", Interval(0.0, 1.0))]
    rules = [Rule("unstructured_prune", "prune_frac",
                  lambda m, v: prune_unstructured(m, v, criterion, calib))]
    if structured:
        knobs.append(Knob("prune_units", Interval(0.0, 1.0)))
        rules.append(Rule("structured_prune", "prune_units",
                          lambda m, v: prune_structured(m, v, criterion, calib)))
    return Instantiation.build("prune", knobs, rules,
                               cost_meters=("param_count", "flops"), quality_meters=("val_accuracy",))
