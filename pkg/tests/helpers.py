"""Shared builders: every method family on one model, and random knob values."""

from __future__ import annotations

import functools

import numpy as np

from kmr.core import DiscreteSet, Instantiation, Interval, Knob, PositiveInteger, Rule
from kmr.meters import MeterReading
from kmr.methods import arch, distillation, pruning, quantization
from kmr.tensor import Splits, build_model

STUDENTS = [(4,), (3, 2), (2,)]


def all_instantiations(model, data: Splits, seed: int = 0, distill_epochs: int = 2) -> list[Instantiation]:
    ctx = distillation.DistillContext(data.train, temperature=2.0, loss_weight=0.5,
                                      epochs=distill_epochs, lr=0.1, seed=seed)
    return [
        pruning.make_instantiation(pruning.PruneCriterion(), data.train, structured=True),
        quantization.make_instantiation(len(model.layers)),
        distillation.make_instantiation(ctx, STUDENTS),
        arch.arch_instantiation(model, seed, max_width=12, max_depth=3),
        arch.other_instantiation(model),
    ]


def random_value(knob: Knob, rng: np.random.Generator, cap: int = 12):
    d = knob.domain
    if isinstance(d, Interval):
        return float(rng.uniform(d.lo, d.hi))
    if isinstance(d, DiscreteSet):
        return d.values[rng.integers(len(d.values))]
    if isinstance(d, PositiveInteger):
        hi = cap if d.max is None else min(d.max, cap)
        return int(rng.integers(1, hi + 1))
    raise TypeError(d)


def random_model(rng: np.random.Generator, in_dim: int = 2, out_dim: int = 3):
    hidden = [int(h) for h in rng.integers(2, 9, size=rng.integers(1, 3))]
    m = build_model([in_dim, *hidden, out_dim], int(rng.integers(1 << 30)))
    for layer in m.layers:
        layer.bias = rng.normal(size=layer.bias.shape) * 0.1
        if rng.random() < 0.3:
            layer.mask[rng.random(layer.mask.shape) < 0.3] = 0.0
    return m


# A table-driven toy: rule "k" stamps (k, v) into the bias so a fake meter can
# look up a preset (cost, quality) for each candidate.


def toy(table: dict, knob_ids):
    codes = {key: float(i + 1) for i, key in enumerate(sorted(table))}
    decode = {c: key for key, c in codes.items()}

    def stamp(k):
        def transform(m, v):
            m.layers[0].bias[0] = codes[(k, v)]
            return m
        return transform

    inst = Instantiation.build(
        "toy", [Knob(k, Interval(0, 100)) for k in knob_ids], [Rule(f"r_{k}", k, stamp(k)) for k in knob_ids]
    )

    def measure(m):
        key = decode.get(m.layers[0].bias[0])
        cost, quality = table[key] if key else (100.0, 0.0)
        return MeterReading(cost, quality, "param_count", "val_accuracy")

    model = build_model([1, 1], 0)
    return inst, measure, model, measure(model)


def oracle(table, current):
    """Exhaustive argmax written independently with a comparator."""
    cands = []
    for (k, v), (c, q) in table.items():
        dc = current.cost - c
        if dc > 0:
            cands.append((k, v, (q - current.quality) / dc, dc))

    def cmp(a, b):
        for x, y, larger_first in ((a[2], b[2], True), (a[3], b[3], True), (a[0], b[0], False), (a[1], b[1], False)):
            if x != y:
                better = x > y if larger_first else x < y
                return -1 if better else 1
        return 0

    return sorted(cands, key=functools.cmp_to_key(cmp))[0][:2] if cands else None
