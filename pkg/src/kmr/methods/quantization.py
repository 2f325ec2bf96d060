"""Weight quantization: one-shot snapping (PTQ) and quantization-aware training.

Every weight-like matrix of a layer (dense weights or low-rank factors, plus
adapter factors) gets its own min/max range. Biases stay at full precision and
activations are never quantized.
"""

from __future__ import annotations

import logging

from ..core import DiscreteSet, Instantiation, Knob, Rule
from ..errors import DomainError, StructuralError
from ..meters import accuracy, cost_meter
from ..quantizer import BITWIDTHS, quantize_uniform, step_size
from ..tensor import Dataset, Model, snap_quantized, train_sgd

log = logging.getLogger(__name__)

__all__ = [
    "BITWIDTHS", "make_instantiation", "ptq", "qat", "quantize_layers",
    "quantize_model", "quantize_uniform", "step_size",
]


def _check_bits(bits) -> int:
    if bits not in BITWIDTHS:
        raise DomainError(f"bits must be one of {BITWIDTHS}, got {bits!r}")
    return int(bits)


def quantize_layers(model: Model, bits_by_layer: dict[int, int]) -> Model:
    """Set ``quant_bits`` on the given layers and snap their weights."""
    out = model.copy()
    for i, bits in bits_by_layer.items():
        if not 0 <= i < len(out.layers):
            raise StructuralError(f"no layer {i}")
        out.layers[i].quant_bits = _check_bits(bits)
    return snap_quantized(out, only=bits_by_layer)


def quantize_model(model: Model, bits: int) -> Model:
    return quantize_layers(model, {i: bits for i in range(len(model.layers))})


def ptq(model: Model, bits: int, calib: Dataset, budget: float,
        meter: str = "memory_bytes") -> Model | None:
    """One-shot quantization; ``None`` when the quantized model is over budget.

    ``calib`` must be a held-out (validation-tagged) split; its accuracy is
    logged for inspection but does not gate the result.
    """
    if len(calib) == 0:
        raise DomainError("calibration split is empty")
    mq = quantize_model(model, bits)
    log.info("ptq %d-bit calibration accuracy %.4f", bits, accuracy(mq, calib))
    if cost_meter(meter)(mq) <= budget:
        return mq
    return None


def qat(model: Model, bits: int, data: Dataset, epochs: int, lr: float,
        batch_size: int = 32, seed: int = 0) -> Model:
    """Train latent full-precision weights against a quantized forward pass
    (straight-through gradients), then snap once at the end."""
    bits = _check_bits(bits)
    if epochs < 0:
        raise DomainError("epochs must be >= 0")
    latent = model.copy()
    for layer in latent.layers:
        layer.quant_bits = bits
    if epochs == 0:
        return snap_quantized(latent)
    # train_sgd ends with the final snap
    return train_sgd(latent, data, epochs, lr, batch_size, seed, simulate_quant=True)


def make_instantiation(n_layers: int = 0, bits: tuple[int, ...] = BITWIDTHS) -> Instantiation:
    """Knob ``quant_bits`` for all layers; ``quant_bits.<i>`` per layer when
    ``n_layers`` is given."""
    domain = DiscreteSet(tuple(bits))
    knobs = [Knob("quant_bits", domain)]
    rules = [Rule("quantize", "quant_bits", lambda m, v: quantize_model(m, int(v)))]
    for i in range(n_layers):
        knobs.append(Knob(f"quant_bits.{i}", domain))
        rules.append(Rule(f"quantize_layer_{i}", f"quant_bits.{i}",
                          lambda m, v, i=i: quantize_layers(m, {i: int(v)})))
    return Instantiation.build("quant", knobs, rules,
                               cost_meters=("memory_bytes",), quality_meters=("val_accuracy",))
