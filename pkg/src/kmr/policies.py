"""Knob-selection policies: greedy ratio, fixed schedule, dual controller.

Each policy maps the current model and its meter reading to the next
``(knob_id, value)``. Returning ``None`` signals exhaustion; the engine then
stops selecting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .core import Instantiation, apply_rule, validate_value
from .errors import ConfigurationError, RuleError
from .meters import MeterReading
from .tensor import Model

CandidateGrid = dict[str, list]


@dataclass
class Selection:
    knob_id: str
    value: Any
    info: dict = field(default_factory=dict)


@dataclass
class Candidate:
    knob_id: str
    value: Any
    reading: MeterReading
    delta_cost: float  # C(M) - C(M'), > 0 means cheaper
    delta_quality: float  # Q(M') - Q(M)


@dataclass
class SelectionContext:
    inst: Instantiation
    measure: Callable[[Model], MeterReading]
    budget: float


def validate_grid(grid: CandidateGrid, inst: Instantiation) -> None:
    if not grid:
        raise ConfigurationError("candidate grid is empty")
    for knob_id, values in grid.items():
        knob = inst.knob(knob_id)
        if not values:
            raise ConfigurationError(f"grid for knob {knob_id!r} is empty")
        for v in values:
            if not validate_value(knob, v):
                raise ConfigurationError(f"grid value {v!r} outside Dom({knob_id})")


def simulate(model: Model, current: MeterReading, grid: CandidateGrid, ctx: SelectionContext) -> list[Candidate]:
    """Apply every grid entry to a copy (no fine-tuning) and measure it.

    Candidates whose rule fails structurally on this model are skipped.
    """
    out = []
    for knob_id in sorted(grid):
        knob = ctx.inst.knob(knob_id)
        rule = ctx.inst.rules[knob_id]
        for value in grid[knob_id]:
            try:
                trial = apply_rule(rule, model, knob, value)
            except RuleError:
                continue
            reading = ctx.measure(trial)
            out.append(
                Candidate(
                    knob_id,
                    value,
                    reading,
                    current.cost - reading.cost,
                    reading.quality - current.quality,
                )
            )
    return out


def _value_key(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def greedy_pick(candidates: list[Candidate]) -> tuple[Candidate, float] | None:
    """Best dQ/dC among cost-reducing candidates.

    Ties: larger dC, then smaller knob id, then smaller value.
    """
    reducing = [c for c in candidates if c.delta_cost > 0]
    if not reducing:
        return None
    best = min(
        reducing,
        key=lambda c: (-(c.delta_quality / c.delta_cost), -c.delta_cost, c.knob_id, _value_key(c.value)),
    )
    return best, best.delta_quality / best.delta_cost


def greedy_select(model, meters, inst, grid, measure, budget=0.0) -> Selection | None:
    ctx = SelectionContext(inst, measure, budget)
    pick = greedy_pick(simulate(model, meters, grid, ctx))
    if pick is None:
        return None
    best, score = pick
    return Selection(best.knob_id, best.value, {"score": score, "delta_cost": best.delta_cost})


def dual_pick(candidates: list[Candidate], lam: float) -> tuple[Candidate, float] | None:
    """Best ``Q(M') - lam * C(M')`` among cost-reducing candidates (same tie-break)."""
    reducing = [c for c in candidates if c.delta_cost > 0]
    if not reducing:
        return None

    def utility(c: Candidate) -> float:
        return c.reading.quality - lam * c.reading.cost

    best = min(reducing, key=lambda c: (-utility(c), -c.delta_cost, c.knob_id, _value_key(c.value)))
    return best, utility(best)


class Policy:
    """Base class; ``select`` is called once per engine iteration."""

    seed: int = 0

    def reset(self) -> None:
        pass

    def validate(self, inst: Instantiation) -> None:
        pass

    def select(self, model: Model, current: MeterReading, ctx: SelectionContext) -> Selection | None:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class GreedyPolicy(Policy):
    def __init__(self, grid: CandidateGrid, seed: int = 0):
        if not grid:
            raise ConfigurationError("greedy policy needs a nonempty grid")
        self.grid = {k: list(v) for k, v in grid.items()}
        self.seed = seed

    def validate(self, inst: Instantiation) -> None:
        validate_grid(self.grid, inst)

    def select(self, model, current, ctx):
        return greedy_select(model, current, ctx.inst, self.grid, ctx.measure, ctx.budget)

    def to_dict(self) -> dict:
        return {"kind": "greedy", "grid": self.grid, "seed": self.seed}


class ScheduledPolicy(Policy):
    def __init__(self, schedule: list[tuple[str, Any]], seed: int = 0):
        if not schedule:
            raise ConfigurationError("schedule must be nonempty")
        self.schedule = [(k, v) for k, v in schedule]
        self.seed = seed
        self.cursor = 0

    def reset(self) -> None:
        self.cursor = 0

    def validate(self, inst: Instantiation) -> None:
        for knob_id, value in self.schedule:
            if not validate_value(inst.knob(knob_id), value):
                raise ConfigurationError(f"scheduled value {value!r} outside Dom({knob_id})")

    def scheduled_select(self) -> Selection | None:
        if self.cursor >= len(self.schedule):
            return None
        knob_id, value = self.schedule[self.cursor]
        self.cursor += 1
        return Selection(knob_id, value, {"cursor": self.cursor})

    def select(self, model, current, ctx):
        return self.scheduled_select()

    def to_dict(self) -> dict:
        return {"kind": "scheduled", "schedule": [list(p) for p in self.schedule], "seed": self.seed}


class DualControllerPolicy(Policy):
    """Maximizes ``Q - lam * C``; ``lam`` grows by ``(1 + lam_step)`` while over budget."""

    def __init__(self, grid: CandidateGrid, lam0: float = 0.0, lam_step: float = 0.5, seed: int = 0):
        if lam0 < 0 or lam_step < 0:
            raise ConfigurationError("lam0 and lam_step must be >= 0")
        if not grid:
            raise ConfigurationError("dual policy needs a nonempty grid")
        self.grid = {k: list(v) for k, v in grid.items()}
        self.lam0 = lam0
        self.lam_step = lam_step
        self.seed = seed
        self.lam = lam0

    def reset(self) -> None:
        self.lam = self.lam0

    def validate(self, inst: Instantiation) -> None:
        validate_grid(self.grid, inst)

    def select(self, model, current, ctx):
        sel, self.lam = dual_select(model, current, ctx.inst, self.grid, self.lam, ctx.measure,
                                    ctx.budget, self.lam_step)
        return sel

    def to_dict(self) -> dict:
        return {"kind": "dual", "grid": self.grid, "lam0": self.lam0,
                "lam_step": self.lam_step, "seed": self.seed}


def dual_select(model, meters, inst, grid, lam, measure, budget=0.0, lam_step=0.5):
    """Returns ``(selection or None, next lam)``."""
    if lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    ctx = SelectionContext(inst, measure, budget)
    pick = dual_pick(simulate(model, meters, grid, ctx), lam)
    next_lam = lam * (1.0 + lam_step) if meters.cost > budget else lam
    if pick is None:
        return None, next_lam
    best, utility = pick
    return Selection(best.knob_id, best.value, {"utility": utility, "lambda": lam}), next_lam


def policy_from_dict(d: dict) -> Policy:
    kind = d.get("kind")
    seed = d.get("seed", 0)
    if kind == "greedy":
        return GreedyPolicy(d.get("grid", {}), seed)
    if kind == "scheduled":
        return ScheduledPolicy([tuple(p) for p in d.get("schedule", [])], seed)
    if kind == "dual":
        return DualControllerPolicy(d.get("grid", {}), d.get("lam0", 0.0), d.get("lam_step", 0.5), seed)
    raise ConfigurationError(f"unknown policy kind {kind!r}")
