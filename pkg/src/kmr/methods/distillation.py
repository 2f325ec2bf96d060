"""Logit distillation into a freshly initialized student.

The combined loss is ``(1 - w) * CE(student, y) + w * KL(p_s || p_t)`` with
``p = softmax(logits / T)``. No T**2 rescaling is applied to the KL term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DiscreteSet, Instantiation, Interval, Knob, Rule, validate_value
from ..errors import ConfigurationError, DomainError, StructuralError
from ..tensor import (
    Dataset,
    Model,
    _sgd_inplace,
    backward_from_logits,
    build_model,
    cross_entropy,
    forward,
    kl_div,
    log_softmax,
    minibatches,
    softmax_temp,
)

TEMPERATURE = Knob("k_temp", Interval(1e-6, 1e6))
LOSS_WEIGHT = Knob("k_loss", Interval(0.0, 1.0))


@dataclass(frozen=True)
class DistillKnobs:
    student_spec: tuple[int, ...]  # hidden layer sizes
    temperature: float = 2.0
    loss_weight: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "student_spec", tuple(int(s) for s in self.student_spec))
        if any(s < 1 for s in self.student_spec):
            raise DomainError("student layer sizes must be >= 1")
        if not validate_value(TEMPERATURE, self.temperature):
            raise DomainError(f"temperature must be > 0, got {self.temperature}")
        if not validate_value(LOSS_WEIGHT, self.loss_weight):
            raise DomainError(f"loss_weight must lie in [0, 1], got {self.loss_weight}")


def kd_terms(student_logits, teacher_logits, labels, temperature):
    """Batch-mean cross-entropy and temperature-scaled KL."""
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2 or len(labels) != len(s):
        raise StructuralError(f"logit shapes {s.shape} / {t.shape} / labels {len(labels)} disagree")
    ce = cross_entropy(s, np.asarray(labels, dtype=np.int64))
    kl = float(np.mean(kl_div(softmax_temp(s, temperature), softmax_temp(t, temperature))))
    return ce, kl


def kd_loss(student_logits, teacher_logits, labels, temperature: float, loss_weight: float) -> float:
    if not 0.0 <= loss_weight <= 1.0:
        raise DomainError("loss_weight must lie in [0, 1]")
    ce, kl = kd_terms(student_logits, teacher_logits, labels, temperature)
    return (1.0 - loss_weight) * ce + loss_weight * kl


def kd_loss_grad(student_logits, teacher_logits, labels, temperature: float,
                 loss_weight: float) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the student logits."""
    s = np.asarray(student_logits, dtype=np.float64)
    n, c = s.shape
    value = kd_loss(s, teacher_logits, labels, temperature, loss_weight)
    p1 = softmax_temp(s)
    onehot = np.zeros_like(s)
    onehot[np.arange(n), labels] = 1.0
    d_ce = (p1 - onehot) / n
    ps = softmax_temp(s, temperature)
    log_ps = log_softmax(s / temperature)
    log_pt = np.log(np.maximum(softmax_temp(teacher_logits, temperature), 1e-12))
    diff = log_ps - log_pt
    kl_rows = (ps * diff).sum(axis=1, keepdims=True)
    d_kl = ps * (diff - kl_rows) / (temperature * n)
    return value, (1.0 - loss_weight) * d_ce + loss_weight * d_kl


def distill(teacher: Model, knobs: DistillKnobs, data: Dataset, epochs: int, lr: float,
            seed: int = 0, batch_size: int = 32) -> Model:
    """Train a new student of shape ``[in, *student_spec, out]`` against a frozen teacher."""
    if epochs < 0:
        raise DomainError("epochs must be >= 0")
    student = build_model([teacher.input_dim, *knobs.student_spec, teacher.output_dim], seed)
    if student.output_dim != teacher.output_dim:
        raise ConfigurationError("student and teacher output sizes differ")
    if epochs == 0:
        return student
    if len(data) == 0:
        raise DomainError("training split is empty")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in minibatches(len(data), batch_size, rng):
            x, y = data.inputs[idx], data.labels[idx]
            teacher_logits = forward(teacher, x)
            _, grads = backward_from_logits(
                student, x,
                lambda z: kd_loss_grad(z, teacher_logits, y, knobs.temperature, knobs.loss_weight),
            )
            _sgd_inplace(student, grads, lr, freeze_base=False)
    return student


@dataclass(frozen=True)
class DistillContext:
    data: Dataset
    temperature: float = 2.0
    loss_weight: float = 0.5
    epochs: int = 20
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 0


def distill_rule_adapter(model: Model, student_spec, ctx: DistillContext) -> Model:
    """Engine-facing rule: the current model is the teacher, the result the student."""
    knobs = DistillKnobs(tuple(student_spec), ctx.temperature, ctx.loss_weight)
    return distill(model, knobs, ctx.data, ctx.epochs, ctx.lr, ctx.seed, ctx.batch_size)


def make_instantiation(ctx: DistillContext, students: list) -> Instantiation:
    """Knob ``student`` ranges over the given hidden-size lists."""
    DistillKnobs((1,), ctx.temperature, ctx.loss_weight)  # validates k_temp / k_loss
    knob = Knob("student", DiscreteSet(tuple(tuple(s) for s in students)))
    rule = Rule("distill", "student", lambda m, v: distill_rule_adapter(m, v, ctx))
    return Instantiation.build("distill", [knob], [rule],
                               cost_meters=("param_count",), quality_meters=("val_accuracy",))
