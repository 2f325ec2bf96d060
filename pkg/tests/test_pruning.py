from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff
from kmr.errors import DomainError, StructuralError
from kmr.meters import param_count
from kmr.methods.pruning import (
    PruneCriterion,
    importance_scores,
    prune_structured,
    prune_unstructured,
    unit_scores,
)
from kmr.tensor import Activation, DenseLayer, LossKind, Model, build_model, forward, loss_and_dlogits, model_equal


def row_model(w):
    w = np.atleast_2d(np.asarray(w, float))
    return Model([DenseLayer(w, np.zeros(len(w)), np.ones_like(w), Activation.IDENTITY)], w.shape[1], len(w))


def test_magnitude_scores():
    np.testing.assert_array_equal(importance_scores(row_model([-3, 1, 2]))[0], [[3, 1, 2]])
    s = importance_scores(row_model(np.full((2, 3), 0.7)))[0]
    assert np.all(s == s.flat[0])


def test_gradient_scores_match_finite_differences(blobs):
    m = build_model([2, 5, 3], 11)
    m.layers[0].mask[0, 1] = 0
    x, y = blobs.train.inputs[:20], blobs.train.labels[:20]
    calib = type(blobs.train)(x, y, blobs.train.split)
    scores = importance_scores(m, PruneCriterion("gradient_magnitude"), calib)

    def f():
        return loss_and_dlogits(forward(m, x), y, LossKind.CROSS_ENTROPY)[0]

    for layer, s in zip(m.layers, scores):
        fd = central_diff(f, layer.weights)
        expected = np.abs(layer.weights * layer.mask) * np.abs(fd)
        np.testing.assert_allclose(s, expected, rtol=1e-4, atol=1e-10)
    with pytest.raises(DomainError):
        importance_scores(m, PruneCriterion("gradient_magnitude"), None)


def test_fraction_zero_and_one():
    m = build_model([3, 4, 2], 0)
    assert model_equal(prune_unstructured(m, 0.0), m)
    gone = prune_unstructured(m, 1.0)
    assert all(not layer.mask.any() for layer in gone.layers)
    with pytest.raises(DomainError):
        prune_unstructured(m, -0.1)


def test_ten_alive_quarter_drops_two_smallest():
    w = np.array([[5.0, -0.1, 3.0, 0.2, -4.0, 9.0, 0.05, 7.0, -6.0, 8.0, 1.0, 2.0]])
    m = row_model(w)
    m.layers[0].mask[0, [0, 5]] = 0  # 10 alive
    out = prune_unstructured(m, 0.25)
    newly = np.flatnonzero((m.layers[0].mask != 0) & (out.layers[0].mask == 0))
    assert sorted(newly) == [1, 6]


def test_ties_go_to_lowest_index_and_no_resurrection():
    m = row_model(np.ones((1, 6)))
    m.layers[0].mask[0, 1] = 0
    out = prune_unstructured(m, 0.4)  # floor(0.4 * 5) = 2
    np.testing.assert_array_equal(out.layers[0].mask, [[0, 0, 0, 1, 1, 1]])


def sort_oracle(weights, masks, f, scope):
    """Indices (layer, flat) to drop, computed with a plain Python sort."""
    if scope == "per_layer":
        out = []
        for li, (w, mk) in enumerate(zip(weights, masks)):
            alive = [(abs(w.flat[j]), j) for j in range(w.size) if mk.flat[j] != 0]
            alive.sort()
            out += [(li, j) for _, j in alive[: math.floor(f * len(alive))]]
        return sorted(out)
    alive, offset = [], 0
    for li, (w, mk) in enumerate(zip(weights, masks)):
        alive += [(abs(w.flat[j]), offset + j, li, j) for j in range(w.size) if mk.flat[j] != 0]
        offset += w.size
    alive.sort()
    return sorted((li, j) for _, _, li, j in alive[: math.floor(f * len(alive))])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.sampled_from(["per_layer", "global"]))
def test_exact_count_and_selection_match_oracle(seed, f, scope):
    rng = np.random.default_rng(seed)
    m = build_model([int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4))], seed)
    for layer in m.layers:
        layer.mask[rng.random(layer.mask.shape) < 0.3] = 0
        if rng.random() < 0.3:
            layer.weights = np.round(layer.weights, 1)  # force ties
    out = prune_unstructured(m, f, PruneCriterion(scope=scope))
    dropped = sorted(
        (li, int(j))
        for li, (a, b) in enumerate(zip(m.layers, out.layers))
        for j in np.flatnonzero((a.mask.ravel() != 0) & (b.mask.ravel() == 0))
    )
    assert dropped == sort_oracle([x.weights for x in m.layers], [x.mask for x in m.layers], f, scope)
    for a, b in zip(m.layers, out.layers):
        assert np.all(b.mask <= a.mask)
    assert model_equal(prune_unstructured(out, 0.0), out)
    assert model_equal(prune_unstructured(m, f, PruneCriterion(scope=scope)), out)
    if dropped:
        assert param_count(out) < param_count(m)


def test_structured_halves_units():
    m = build_model([3, 8, 2], 0)
    out = prune_structured(m, 0.5)
    assert out.sizes == [3, 4, 2] and out.layers[1].in_dim == 4
    assert prune_structured(m, 0.0).sizes == [3, 8, 2]


def test_structured_keeps_one_unit_and_needs_hidden_layer():
    assert prune_structured(build_model([3, 3, 4, 2], 0), 1.0).sizes == [3, 1, 1, 2]
    with pytest.raises(StructuralError):
        prune_structured(build_model([3, 2], 0), 0.5)


def test_removing_dead_unit_preserves_outputs():
    m = build_model([3, 8, 4, 2], 5)
    m.layers[0].weights[3] = 1e-3  # weakest unit
    m.layers[1].weights[:, 3] = 0.0  # with no outgoing effect
    out = prune_structured(m, 1 / 8)
    x = np.random.default_rng(0).normal(size=(16, 3))
    # layer 2 also loses floor(4/8) = 0 units, so only unit 3 went
    assert out.sizes == [3, 7, 4, 2]
    np.testing.assert_allclose(forward(out, x), forward(m, x), atol=1e-12)


def test_unit_scores_sum_member_weights():
    m = build_model([2, 3, 2], 1)
    s = unit_scores(m)[0]
    expected = np.abs(m.layers[0].weights).sum(axis=1) + np.abs(m.layers[1].weights).sum(axis=0)
    np.testing.assert_allclose(s, expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_structured_chains_dimensions(seed, f):
    m = build_model([3, 7, 5, 2], seed)
    out = prune_structured(m, f)
    out.check()
    assert out.sizes[1] == max(1, 7 - math.floor(f * 7)) and out.sizes[2] == max(1, 5 - math.floor(f * 5))
