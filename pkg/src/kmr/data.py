"""Synthetic classification tasks with a stratified 80/20 split."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor import Dataset, Split, Splits, build_model, forward

VAL_FRACTION = 0.2


class DatasetKind(str, enum.Enum):
    GAUSSIAN_BLOBS = "GaussianBlobs"
    CONCENTRIC_RINGS = "ConcentricRings"
    TEACHER_LABELED = "TeacherLabeled"


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind = DatasetKind.GAUSSIAN_BLOBS
    n: int = 300
    dims: int = 2
    classes: int = 3
    noise: float = 0.5
    separation: float = 3.0  # scale of the blob means

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", DatasetKind(self.kind))
        except ValueError:
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}") from None
        if self.classes < 2 or self.dims < 1:
            raise ConfigurationError("need classes >= 2 and dims >= 1")
        if self.n < 2 * self.classes:
            raise ConfigurationError(f"n={self.n} must be >= 2 * classes")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")
        if self.kind is DatasetKind.CONCENTRIC_RINGS and self.dims < 2:
            raise ConfigurationError("rings need dims >= 2")


def _blobs(spec: DatasetSpec, rng: np.random.Generator):
    labels = np.arange(spec.n) % spec.classes
    means = rng.normal(size=(spec.classes, spec.dims)) * spec.separation
    x = means[labels] + spec.noise * rng.normal(size=(spec.n, spec.dims))
    return x, labels


def _rings(spec: DatasetSpec, rng: np.random.Generator):
    labels = np.arange(spec.n) % spec.classes
    theta = rng.uniform(0, 2 * np.pi, spec.n)
    radius = labels + 1.0
    x = np.zeros((spec.n, spec.dims))
    x[:, 0] = radius * np.cos(theta)
    x[:, 1] = radius * np.sin(theta)
    x += spec.noise * rng.normal(size=x.shape)
    return x, labels


def _teacher(spec: DatasetSpec, rng: np.random.Generator):
    teacher = build_model([spec.dims, 16, spec.classes], seed=int(rng.integers(2**31)))
    x = rng.normal(size=(spec.n, spec.dims))
    logits = forward(teacher, x) + spec.noise * rng.normal(size=(spec.n, spec.classes))
    return x, np.argmax(logits, axis=1)


def stratified_split(x: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> Splits:
    val_idx = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = int(round(len(members) * VAL_FRACTION))
        val_idx.extend(rng.permutation(members)[:take])
    val_mask = np.zeros(len(labels), dtype=bool)
    val_mask[np.asarray(val_idx, dtype=np.int64)] = True
    return Splits(
        Dataset(x[~val_mask], labels[~val_mask], Split.TRAIN),
        Dataset(x[val_mask], labels[val_mask], Split.VALIDATION),
    )


def generate_dataset(spec: DatasetSpec, seed: int = 0) -> Splits:
    rng = np.random.default_rng(seed)
    make = {
        DatasetKind.GAUSSIAN_BLOBS: _blobs,
        DatasetKind.CONCENTRIC_RINGS: _rings,
        DatasetKind.TEACHER_LABELED: _teacher,
    }[spec.kind]
    x, labels = make(spec, rng)
    return stratified_split(x, labels.astype(np.int64), rng)
