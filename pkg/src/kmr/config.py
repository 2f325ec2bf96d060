"""Experiment configuration: parsing, validation, and a full run.

A config is a JSON object::

    {
      "seed": 0,
      "dataset": {"kind": "GaussianBlobs", "n": 300, "dims": 2, "classes": 3, "noise": 0.5},
      "model": {"hidden": [16, 16], "train": {"epochs": 30, "lr": 0.1, "batch_size": 32}},
      "instantiations": [{"kind": "prune", "grid": {"prune_frac": [0.1, 0.3, 0.5]}}],
      "policy": {"kind": "greedy"},
      "engine": {"budget_fraction": 0.5, "max_iterations": 10, "cost_meter": "param_count"},
      "output": {"run_log": "runs/prune.jsonl", "checkpoint": "runs/prune.ckpt.json"}
    }

``engine.budget`` is absolute; ``engine.budget_fraction`` is relative to the
pretrained model's initial cost. Greedy and dual policies default to the union
of the instantiations' grids.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import save_model
from .core import Instantiation, combine
from .data import DatasetSpec, generate_dataset
from .engine import EngineConfig, FineTuneConfig, RunResult, composed_budgeted_kmr
from .errors import ConfigurationError
from .meters import AggregateSpec, MeterSuite
from .methods import arch, distillation, pruning, quantization
from .policies import Policy, policy_from_dict
from .runlog import RunLogWriter
from .tensor import Model, Splits, build_model, train_sgd

log = logging.getLogger(__name__)

INSTANTIATION_KINDS = ("prune", "quant", "distill", "arch", "other")


@dataclass
class ExperimentConfig:
    seed: int
    dataset: DatasetSpec
    hidden: list[int]
    pretrain: FineTuneConfig
    instantiations: list[dict]
    policy: dict
    engine: dict
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        try:
            model = d.get("model", {})
            insts = d["instantiations"]
            for spec in insts:
                if spec.get("kind") not in INSTANTIATION_KINDS:
                    raise ConfigurationError(f"unknown instantiation kind {spec.get('kind')!r}")
            return cls(
                seed=int(d.get("seed", 0)),
                dataset=DatasetSpec(**d.get("dataset", {})),
                hidden=[int(h) for h in model.get("hidden", [16])],
                pretrain=FineTuneConfig(**model.get("train", {"epochs": 30, "lr": 0.1, "batch_size": 32})),
                instantiations=insts,
                policy=d["policy"],
                engine=d["engine"],
                output=d.get("output", {}),
                raw=d,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def build_instantiation(spec: dict, model: Model, data: Splits, seed: int) -> Instantiation:
    kind = spec["kind"]
    if kind == "prune":
        criterion = pruning.PruneCriterion(spec.get("criterion", "magnitude"), spec.get("scope", "per_layer"))
        return pruning.make_instantiation(criterion, data.train, spec.get("structured", True))
    if kind == "quant":
        n_layers = len(model.layers) if spec.get("per_layer", False) else 0
        return quantization.make_instantiation(n_layers)
    if kind == "distill":
        ctx = distillation.DistillContext(
            data=data.train,
            temperature=spec.get("temperature", 2.0),
            loss_weight=spec.get("loss_weight", 0.5),
            epochs=spec.get("epochs", 20),
            lr=spec.get("lr", 0.1),
            batch_size=spec.get("batch_size", 32),
            seed=seed,
        )
        students = spec.get("students") or spec.get("grid", {}).get("student")
        if not students:
            raise ConfigurationError("distill instantiation needs a students list")
        return distillation.make_instantiation(ctx, students)
    if kind == "arch":
        return arch.arch_instantiation(model, seed)
    return arch.other_instantiation(model)


def build_policy(cfg: ExperimentConfig) -> Policy:
    spec = dict(cfg.policy)
    spec.setdefault("seed", cfg.seed)
    if spec.get("kind") in ("greedy", "dual") and "grid" not in spec:
        grid: dict = {}
        for inst in cfg.instantiations:
            grid.update(inst.get("grid", {}))
        spec["grid"] = grid
    return policy_from_dict(spec)


def engine_config(cfg: ExperimentConfig, initial_cost: float | None = None) -> EngineConfig:
    e = cfg.engine
    if "budget" in e:
        budget = float(e["budget"])
    elif "budget_fraction" in e:
        if initial_cost is None:
            budget = 0.0  # placeholder for validation
        else:
            budget = float(e["budget_fraction"]) * initial_cost
    else:
        raise ConfigurationError("engine needs 'budget' or 'budget_fraction'")
    agg = e.get("aggregate")
    ft = e.get("finetune")
    return EngineConfig(
        budget=budget,
        max_iterations=int(e.get("max_iterations", 10)),
        cost_meter=e.get("cost_meter", "param_count"),
        quality_meter=e.get("quality_meter", "val_accuracy"),
        finetune=FineTuneConfig(**ft) if ft else None,
        aggregate=AggregateSpec(agg.get("cost_weights", {}), agg.get("quality_weights", {})) if agg else None,
        seed=cfg.seed,
    )


@dataclass
class Prepared:
    data: Splits
    model: Model
    insts: list[Instantiation]
    policy: Policy
    engine: EngineConfig


def prepare(cfg: ExperimentConfig, pretrain: bool = True) -> Prepared:
    """Generate data, (pre)train the base model, and resolve every id."""
    data = generate_dataset(cfg.dataset, cfg.seed)
    model = build_model([cfg.dataset.dims, *cfg.hidden, cfg.dataset.classes], cfg.seed)
    if pretrain:
        p = cfg.pretrain
        model = train_sgd(model, data.train, p.epochs, p.lr, p.batch_size, cfg.seed)
    insts = [build_instantiation(spec, model, data, cfg.seed) for spec in cfg.instantiations]
    union, _ = combine(insts)
    policy = build_policy(cfg)
    policy.validate(union)
    for spec in cfg.instantiations:
        for knob_id in spec.get("grid", {}):
            union.knob(knob_id)
    engine = engine_config(cfg)
    if "budget_fraction" in cfg.engine:
        meters = MeterSuite(data.val, engine.cost_meter, engine.quality_meter, engine.aggregate)
        engine = engine_config(cfg, meters.cost(model))
    return Prepared(data, model, insts, policy, engine)


def validate(cfg: ExperimentConfig) -> None:
    """Raise :class:`ConfigurationError` on any unresolved id; trains nothing."""
    prepare(cfg, pretrain=False)


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> RunResult:
    prep = prepare(cfg)
    out_dir = Path(out_dir) if out_dir is not None else Path(".")
    log_path = out_dir / cfg.output.get("run_log", "run.jsonl")
    ckpt_path = out_dir / cfg.output.get("checkpoint", "final.ckpt.json")
    with RunLogWriter(log_path, cfg.raw, cfg.seed) as writer:
        result = composed_budgeted_kmr(prep.model, prep.engine, prep.insts, prep.policy, prep.data, writer)
        writer.write_summary(result)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(result.model, ckpt_path)
    return result
