"""Knobs, rules, instantiations and transformation records."""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .errors import ConfigurationError, DomainError, RuleError, StructuralError
from .meters import MeterReading, cost_meter
from .tensor import Model, model_equal


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigurationError(f"interval lo {self.lo} > hi {self.hi}")

    def contains(self, value) -> bool:
        return (
            isinstance(value, numbers.Real)
            and not isinstance(value, bool)
            and math.isfinite(value)
            and self.lo <= value <= self.hi
        )


@dataclass(frozen=True)
class DiscreteSet:
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ConfigurationError("discrete domain must be nonempty")
        object.__setattr__(self, "values", tuple(_freeze(v) for v in self.values))

    def contains(self, value) -> bool:
        value = _freeze(value)
        return any(type(v) is type(value) and v == value or _num_eq(v, value) for v in self.values)


@dataclass(frozen=True)
class PositiveInteger:
    max: int | None = None

    def contains(self, value) -> bool:
        if isinstance(value, bool) or not isinstance(value, numbers.Integral):
            return False
        return value >= 1 and (self.max is None or value <= self.max)


KnobDomain = Interval | DiscreteSet | PositiveInteger


def _freeze(v):
    return tuple(_freeze(x) for x in v) if isinstance(v, (list, tuple)) else v


def _num_eq(a, b) -> bool:
    real = (numbers.Real,)
    return (
        isinstance(a, real) and isinstance(b, real)
        and not isinstance(a, bool) and not isinstance(b, bool)
        and a == b
    )


@dataclass(frozen=True)
class Knob:
    id: str
    domain: KnobDomain


@dataclass(frozen=True)
class Rule:
    """Deterministic ``(model, value) -> model`` transformation for one knob."""

    id: str
    knob_id: str
    transform: Callable[[Model, Any], Model] = field(compare=False)


def validate_value(knob: Knob, value) -> bool:
    return knob.domain.contains(value)


def get_rule(knob_id: str, rules: Iterable[Rule]) -> Rule:
    matches = [r for r in rules if r.knob_id == knob_id]
    if len(matches) != 1:
        raise ConfigurationError(
            f"expected exactly one rule for knob {knob_id!r}, found {len(matches)}"
        )
    return matches[0]


def apply_rule(rule: Rule, model: Model, knob: Knob, value) -> Model:
    """Apply ``rule`` to a private copy of ``model``; the input is never touched."""
    if rule.knob_id != knob.id:
        raise ConfigurationError(f"rule {rule.id!r} does not drive knob {knob.id!r}")
    if not validate_value(knob, value):
        raise DomainError(f"value {value!r} outside Dom({knob.id})")
    try:
        out = rule.transform(model.copy(), _freeze(value))
        out.check()
    except (StructuralError, DomainError) as exc:
        raise RuleError(f"rule {rule.id!r} failed at {knob.id}={value!r}: {exc}") from exc
    return out


def is_feasible(model: Model, budget: float, meter: str | Callable[[Model], float]) -> bool:
    if budget < 0:
        raise DomainError("budget must be >= 0")
    fn = cost_meter(meter) if isinstance(meter, str) else meter
    return fn(model) <= budget


@dataclass
class Instantiation:
    """A packaged method family: knobs, one rule per knob, meter ids."""

    name: str
    knobs: dict[str, Knob] = field(default_factory=dict)
    rules: dict[str, Rule] = field(default_factory=dict)
    cost_meters: tuple[str, ...] = ("param_count",)
    quality_meters: tuple[str, ...] = ("val_accuracy",)

    @classmethod
    def build(cls, name: str, knobs: Iterable[Knob], rules: Iterable[Rule], **meters) -> Instantiation:
        inst = cls(name, **meters)
        for knob in knobs:
            if knob.id in inst.knobs:
                raise ConfigurationError(f"duplicate knob id {knob.id!r}")
            inst.knobs[knob.id] = knob
        for rule in rules:
            inst.register(rule)
        return inst

    def register(self, rule: Rule) -> None:
        if rule.knob_id not in self.knobs:
            raise ConfigurationError(f"rule {rule.id!r} targets unknown knob {rule.knob_id!r}")
        if rule.knob_id in self.rules:
            raise ConfigurationError(f"knob {rule.knob_id!r} already has a rule")
        self.rules[rule.knob_id] = rule

    def knob(self, knob_id: str) -> Knob:
        try:
            return self.knobs[knob_id]
        except KeyError:
            raise ConfigurationError(f"unknown knob id {knob_id!r}") from None


def combine(insts: list[Instantiation]) -> tuple[Instantiation, dict[str, str]]:
    """Union of knob and rule sets; returns the union and knob -> source name."""
    if not insts:
        raise ConfigurationError("need at least one instantiation")
    union = Instantiation("+".join(i.name for i in insts))
    origin: dict[str, str] = {}
    for inst in insts:
        for knob_id, knob in inst.knobs.items():
            if knob_id in union.knobs:
                raise ConfigurationError(
                    f"knob id {knob_id!r} appears in both {origin[knob_id]!r} and {inst.name!r}"
                )
            union.knobs[knob_id] = knob
            origin[knob_id] = inst.name
        for rule in inst.rules.values():
            union.register(rule)
    return union, origin


@dataclass
class TransformationRecord:
    step: int
    knob_id: str
    value: Any
    rule_id: str
    pre_meters: MeterReading
    post_meters: MeterReading
    rule_seconds: float = 0.0
    finetune_seconds: float = 0.0
    overhead_seconds: float = 0.0
    instantiation: str = ""
    policy_info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "type": "step",
            "step": self.step,
            "instantiation": self.instantiation,
            "knob_id": self.knob_id,
            "value": _jsonable(self.value),
            "rule_id": self.rule_id,
            "pre": self.pre_meters.to_dict(),
            "post": self.post_meters.to_dict(),
            "policy": self.policy_info,
            "timing": {
                "rule_seconds": self.rule_seconds,
                "finetune_seconds": self.finetune_seconds,
                "overhead_seconds": self.overhead_seconds,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> TransformationRecord:
        timing = d.get("timing", {})
        return cls(
            step=d["step"],
            knob_id=d["knob_id"],
            value=_freeze(d["value"]),
            rule_id=d["rule_id"],
            pre_meters=MeterReading.from_dict(d["pre"]),
            post_meters=MeterReading.from_dict(d["post"]),
            instantiation=d.get("instantiation", ""),
            policy_info=d.get("policy", {}),
            **timing,
        )


def _jsonable(v):
    return [_jsonable(x) for x in v] if isinstance(v, tuple) else v


def check_steps(records: list[TransformationRecord]) -> None:
    for i, rec in enumerate(records, start=1):
        if rec.step != i:
            raise ConfigurationError(f"record {i} carries step index {rec.step}")


def replay(
    m0: Model,
    records: list[TransformationRecord],
    inst: Instantiation,
    after_step: Callable[[Model, int], Model] | None = None,
) -> Model:
    """Re-apply a record list from ``m0``; ``after_step`` re-runs any fine-tuning."""
    check_steps(records)
    model = m0
    for rec in records:
        rule = inst.rules.get(rec.knob_id)
        if rule is None or rule.id != rec.rule_id:
            raise ConfigurationError(f"cannot resolve rule {rec.rule_id!r} for {rec.knob_id!r}")
        model = apply_rule(rule, model, inst.knob(rec.knob_id), rec.value)
        if after_step is not None:
            model = after_step(model, rec.step)
    return model


__all__ = [
    "DiscreteSet", "Instantiation", "Interval", "Knob", "PositiveInteger", "Rule",
    "TransformationRecord", "apply_rule", "check_steps", "combine", "get_rule",
    "is_feasible", "model_equal", "replay", "validate_value",
]
