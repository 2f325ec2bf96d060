"""Budgeted knob/meter/rule model optimization on small numpy MLPs."""

from .core import Instantiation, Knob, Rule, TransformationRecord, apply_rule, combine, replay
from .engine import EngineConfig, FineTuneConfig, Outcome, RunResult, budgeted_kmr, composed_budgeted_kmr
from .errors import ConfigurationError, DomainError, KMRError, RuleError, StructuralError
from .meters import AggregateSpec, MeterReading, MeterSuite
from .policies import DualControllerPolicy, GreedyPolicy, ScheduledPolicy
from .tensor import Dataset, Model, Splits, build_model, forward

__all__ = [
    "AggregateSpec", "ConfigurationError", "Dataset", "DomainError", "DualControllerPolicy",
    "EngineConfig", "FineTuneConfig", "GreedyPolicy", "Instantiation", "KMRError", "Knob",
    "MeterReading", "MeterSuite", "Model", "Outcome", "Rule", "RuleError", "RunResult",
    "ScheduledPolicy", "Splits", "StructuralError", "TransformationRecord", "apply_rule",
    "budgeted_kmr", "build_model", "combine", "composed_budgeted_kmr", "forward", "replay",
]
