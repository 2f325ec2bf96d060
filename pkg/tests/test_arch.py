from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmr.errors import ConfigurationError, DomainError, StructuralError
from kmr.meters import memory_bytes, param_count
from kmr.methods.arch import (
    arch_instantiation,
    inject_adapter,
    kmeans_1d,
    lowrank_factorize,
    other_instantiation,
    peft_finetune,
    resize,
    weight_share,
)
from kmr.methods.svd import svd_jacobi, truncated_factors
from kmr.tensor import LossKind, build_model, effective_weight, forward, loss, model_equal


def fro(a):
    return float(np.sqrt((a**2).sum()))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_svd_full_rank_reconstruction(rows, cols, seed):
    a = np.random.default_rng(seed).normal(size=(rows, cols))
    u, s, vt = svd_jacobi(a)
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert fro(u @ np.diag(s) @ vt - a) < 1e-8
    np.testing.assert_allclose(s, np.linalg.svd(a, compute_uv=False), atol=1e-10)
    U, V = truncated_factors(a, min(rows, cols))
    assert fro(U @ V - a) < 1e-8


def test_rank_one_outer_product_is_exact():
    rng = np.random.default_rng(2)
    a = np.outer(rng.normal(size=5), rng.normal(size=4))
    U, V = truncated_factors(a, 1)
    assert fro(U @ V - a) < 1e-8


def test_beats_random_same_rank_candidates():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 6))
    U, V = truncated_factors(a, 3)
    best = fro(a - U @ V)
    for _ in range(1000):
        cand = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 6))
        assert best <= fro(a - cand)


def test_lowrank_rule(trained):
    m = lowrank_factorize(trained, 1, 8)
    layer = m.layers[1]
    assert fro(effective_weight(layer) - trained.layers[1].weights) < 1e-8
    np.testing.assert_array_equal(layer.weights, trained.layers[1].weights)
    with pytest.raises(DomainError):
        lowrank_factorize(trained, 1, 9)
    with pytest.raises(DomainError):
        lowrank_factorize(trained, 1, 0)
    with pytest.raises(StructuralError):
        lowrank_factorize(trained, 7, 1)


def test_adapter_is_transparent_and_counted():
    m = build_model([5, 6, 3], 1)
    out = inject_adapter(m, 0, 2, seed=9)
    x = np.random.default_rng(0).normal(size=(20, 5))
    assert np.max(np.abs(forward(out, x) - forward(m, x))) < 1e-12
    assert param_count(out) - param_count(m) == 2 * (5 + 6)
    with pytest.raises(DomainError):
        inject_adapter(m, 0, 6)
    with pytest.raises(StructuralError):
        inject_adapter(out, 0, 1)


def test_peft_trains_only_adapters(blobs, trained):
    m = inject_adapter(inject_adapter(trained, 0, 2, 0), 2, 2, 1)
    tuned = peft_finetune(m, blobs.train, 10, 0.1, 16, 0)
    for a, b in zip(m.layers, tuned.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)
    assert not np.array_equal(m.layers[0].adapter[1], tuned.layers[0].adapter[1])
    assert model_equal(peft_finetune(m, blobs.train, 0, 0.1), m)
    with pytest.raises(ConfigurationError):
        peft_finetune(trained, blobs.train, 1, 0.1)


def test_peft_reduces_validation_loss(blobs):
    weak = build_model([2, 8, 3], 2)
    m = inject_adapter(inject_adapter(weak, 0, 2, 0), 1, 2, 1)
    tuned = peft_finetune(m, blobs.train, 30, 0.1, 16, 0)
    assert loss(tuned, blobs.val, LossKind.CROSS_ENTROPY) < loss(m, blobs.val, LossKind.CROSS_ENTROPY)


def test_resize_examples():
    m = build_model([3, 8, 8, 2], 0)
    same = resize(m, 2, 8, seed=5)
    assert same.sizes == m.sizes and not model_equal(same, m)
    assert param_count(resize(m, 2, 4)) < param_count(m)
    assert param_count(resize(m, 1, 1)) == 3 * 1 + 1 + 1 * 2 + 2
    with pytest.raises(DomainError):
        resize(m, 0, 4)


def test_kmeans_two_clusters():
    centers, codes = kmeans_1d(np.array([1, 1, 1, 5, 5, 5.0]), 2)
    assert sorted(centers) == [1.0, 5.0]
    assert len(set(codes[:3])) == 1 and len(set(codes[3:])) == 1


def best_two_partition(values):
    """Exhaustive oracle: minimum within-cluster squared error over all 2-splits."""
    best = None
    for labels in itertools.product([0, 1], repeat=len(values)):
        if len(set(labels)) < 2:
            continue
        err = 0.0
        for c in (0, 1):
            g = values[np.array(labels) == c]
            err += ((g - g.mean()) ** 2).sum()
        best = err if best is None else min(best, err)
    return best


def test_kmeans_two_clusters_matches_exhaustive_oracle():
    v = np.array([1, 1, 1, 5, 5, 5.0])
    centers, codes = kmeans_1d(v, 2)
    assert ((v - centers[codes]) ** 2).sum() == pytest.approx(best_two_partition(v))


def test_weight_share_examples(trained):
    layer = trained.layers[1]
    full = weight_share(trained, 1, layer.alive)
    np.testing.assert_array_equal(full.layers[1].weights, layer.weights)
    one = weight_share(trained, 1, 1)
    np.testing.assert_allclose(one.layers[1].weights, layer.weights.mean())
    with pytest.raises(DomainError):
        weight_share(trained, 1, layer.alive + 1)
    with pytest.raises(StructuralError):
        weight_share(lowrank_factorize(trained, 1, 2), 1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_sharing_bounds_distinct_values_and_memory(seed, k):
    m = build_model([4, 6, 2], seed)
    out = weight_share(m, 0, min(k, 24))
    alive = out.layers[0].weights[out.layers[0].mask != 0]
    assert len(np.unique(alive)) <= min(k, 24)
    assert memory_bytes(out) <= memory_bytes(m)


def test_instantiation_knobs(trained):
    arch = arch_instantiation(trained)
    assert {"rank.0", "adapter.2", "width", "depth"} <= set(arch.knobs)
    other = other_instantiation(trained)
    assert {"share.1", "tensor_rank.1"} <= set(other.knobs)
    assert "k_hybrid" not in other.knobs
