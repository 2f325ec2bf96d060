"""Budgeted iterative optimization loop and its composed variant.

The loop keeps applying the policy's choice while the model is over budget
and fewer than ``max_iterations`` steps have been accepted. A step whose rule
does not strictly lower the cost ends the run without being accepted.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass
from typing import Protocol

from .core import Instantiation, TransformationRecord, apply_rule, combine, get_rule
from .errors import ConfigurationError, DomainError
from .meters import AggregateSpec, MeterReading, MeterSuite
from .policies import Policy, SelectionContext
from .tensor import Dataset, LossKind, Model, Split, Splits, train_sgd

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 1
    lr: float = 0.05
    batch_size: int = 32


@dataclass(frozen=True)
class EngineConfig:
    budget: float
    max_iterations: int = 10
    cost_meter: str = "param_count"
    quality_meter: str = "val_accuracy"
    finetune: FineTuneConfig | None = None
    aggregate: AggregateSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigurationError("budget must be >= 0")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass
class RunResult:
    outcome: Outcome
    model: Model  # final state; on FAILURE it is the best-effort model, not a solution
    log: list[TransformationRecord]
    initial: MeterReading
    final: MeterReading
    budget: float
    rejected: dict | None = None  # last attempted-but-unaccepted step, if any
    stop_reason: str = ""

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS


class RecordSink(Protocol):
    def write_record(self, record: TransformationRecord) -> None: ...


def fine_tune(
    model: Model,
    data: Dataset,
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
    freeze_base: bool = False,
) -> Model:
    """Structure-preserving retraining: masks, bit widths, ranks and codebook
    assignments are untouched, so every cost meter is invariant."""
    if epochs > 0 and len(data) == 0:
        raise DomainError("fine-tuning needs a nonempty training split")
    return train_sgd(model, data, epochs, lr, batch_size, seed, LossKind.CROSS_ENTROPY,
                     simulate_quant=True, freeze_base=freeze_base)


def _check_splits(data: Splits) -> None:
    train, val = data
    if train.split is not Split.TRAIN or val.split is not Split.VALIDATION:
        raise ConfigurationError("engine data must be (train, validation) splits")


def make_finetune_hook(cfg: EngineConfig, train: Dataset):
    """The per-step fine-tuning used by the engine (and by replay)."""
    if cfg.finetune is None:
        return None
    ft = cfg.finetune

    def hook(model: Model, step: int) -> Model:
        return fine_tune(model, train, ft.epochs, ft.lr, ft.batch_size, seed=cfg.seed + step)

    return hook


def composed_budgeted_kmr(
    m0: Model,
    cfg: EngineConfig,
    insts: list[Instantiation],
    policy: Policy,
    data: Splits,
    sink: RecordSink | None = None,
) -> RunResult:
    _check_splits(data)
    inst, origin = combine(insts)
    policy.validate(inst)
    policy.reset()
    meters = MeterSuite(data.val, cfg.cost_meter, cfg.quality_meter, cfg.aggregate)
    ctx = SelectionContext(inst, meters.measure, cfg.budget)
    finetune = make_finetune_hook(cfg, data.train)

    model = m0
    current = initial = meters.measure(model)
    records: list[TransformationRecord] = []
    rejected = None
    stop = "budget met" if current.cost <= cfg.budget else ""
    it = 0
    while current.cost > cfg.budget and it < cfg.max_iterations:
        t0 = time.perf_counter()
        choice = policy.select(model, current, ctx)
        if choice is None:
            stop = "policy exhausted"
            break
        if choice.knob_id not in inst.knobs:
            raise ConfigurationError(f"policy chose unknown knob {choice.knob_id!r}")
        knob = inst.knobs[choice.knob_id]
        if not knob.domain.contains(choice.value):
            raise ConfigurationError(f"policy chose {choice.value!r} outside Dom({knob.id})")
        rule = get_rule(knob.id, inst.rules.values())
        candidate = apply_rule(rule, model, knob, choice.value)
        t1 = time.perf_counter()
        post = meters.measure(candidate)
        if post.cost >= current.cost:
            rejected = {"knob_id": knob.id, "value": choice.value, "rule_id": rule.id,
                        "cost": post.cost, "current_cost": current.cost}
            stop = "no cost reduction"
            break
        model = candidate
        t2 = time.perf_counter()
        ft_seconds = 0.0
        if finetune is not None:
            model = finetune(model, it + 1)
            ft_seconds = time.perf_counter() - t2
            rule_cost = post.cost
            post = meters.measure(model)
            if post.cost != rule_cost:
                raise RuntimeError("fine-tuning changed the model's cost")
        it += 1
        rec = TransformationRecord(
            step=it,
            knob_id=knob.id,
            value=choice.value,
            rule_id=rule.id,
            pre_meters=current,
            post_meters=post,
            rule_seconds=t1 - t0,
            finetune_seconds=ft_seconds,
            overhead_seconds=time.perf_counter() - t1 - ft_seconds,
            instantiation=origin[knob.id],
            policy_info=choice.info,
        )
        records.append(rec)
        if sink is not None:
            sink.write_record(rec)
        log.debug("step %d: %s=%r cost %s -> %s", it, knob.id, choice.value, current.cost, post.cost)
        current = post
    else:
        if not stop:
            stop = "budget met" if current.cost <= cfg.budget else "iteration limit"

    outcome = Outcome.SUCCESS if current.cost <= cfg.budget else Outcome.FAILURE
    return RunResult(outcome, model, records, initial, current, cfg.budget, rejected, stop)


def budgeted_kmr(
    m0: Model,
    cfg: EngineConfig,
    inst: Instantiation,
    policy: Policy,
    data: Splits,
    sink: RecordSink | None = None,
) -> RunResult:
    """Single-instantiation run; identical to the composed loop over ``[inst]``."""
    return composed_budgeted_kmr(m0, cfg, [inst], policy, data, sink)


def cost_column(result: RunResult) -> list[float]:
    return [result.initial.cost] + [r.post_meters.cost for r in result.log]
