from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_err
from kmr.errors import DomainError
from kmr.meters import accuracy, memory_bytes
from kmr.methods.quantization import ptq, qat, quantize_model
from kmr.quantizer import BITWIDTHS, quantize_uniform, step_size
from kmr.tensor import LossKind, backward, build_model, forward, loss_and_dlogits, model_equal, train_sgd

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_constant_array_unchanged():
    for bits in BITWIDTHS:
        np.testing.assert_array_equal(quantize_uniform(np.full(5, 0.37), bits), 0.37)


def test_two_values_one_bit():
    assert step_size(np.array([0.0, 1.0]), 1) == 1.0
    np.testing.assert_array_equal(quantize_uniform([0.0, 1.0], 1), [0.0, 1.0])


def test_half_to_even_rounding():
    # delta = 1 on [0, 3] at 2 bits: 0.5 -> 0, 1.5 -> 2, 2.5 -> 2
    np.testing.assert_array_equal(quantize_uniform([0.0, 0.5, 1.5, 2.5, 3.0], 2), [0, 0, 2, 2, 3])


def test_bad_input():
    with pytest.raises(DomainError):
        quantize_uniform([1.0, 2.0], 3)
    with pytest.raises(DomainError):
        quantize_uniform([], 8)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=finite), st.sampled_from(BITWIDTHS))
def test_error_bound_codebook_and_idempotence(w, bits):
    q = quantize_uniform(w, bits)
    delta = step_size(w, bits)
    assert np.all(np.abs(w - q) <= delta / 2 + 1e-12 * max(1.0, np.abs(w).max()))
    assert len(np.unique(q)) <= 2**bits + 1
    if delta > 0:
        assert np.allclose(q / delta, np.round(q / delta))
        # q(q(w)) stays within the same grid up to float slack
        np.testing.assert_allclose(quantize_uniform(q, bits), q, atol=1e-9 * max(1.0, np.abs(w).max()))


def test_quantization_is_deterministic():
    w = np.random.default_rng(0).normal(size=100)
    np.testing.assert_array_equal(quantize_uniform(w, 4), quantize_uniform(w, 4))


def test_per_layer_ranges_and_bounds(trained):
    for bits in BITWIDTHS:
        mq = quantize_model(trained, bits)
        for before, after in zip(trained.layers, mq.layers):
            delta = step_size(before.weights, bits)
            assert after.quant_bits == bits
            assert np.all(np.abs(after.weights - before.weights) <= delta / 2 + 1e-12)
            assert len(np.unique(after.weights)) <= 2**bits + 1
            np.testing.assert_array_equal(after.bias, before.bias)


def test_memory_nonincreasing_in_bits(trained):
    costs = [memory_bytes(quantize_model(trained, b)) for b in sorted(BITWIDTHS, reverse=True)]
    assert costs == sorted(costs, reverse=True)


def test_ptq_32_bits_keeps_accuracy(trained, blobs):
    mq = ptq(trained, 32, blobs.val, budget=1e9)
    assert abs(accuracy(mq, blobs.val) - accuracy(trained, blobs.val)) < 1e-6


def test_ptq_budget_failure_and_memory_arithmetic(trained, blobs):
    weights = sum(layer.weights.size for layer in trained.layers)
    biases = sum(layer.bias.size for layer in trained.layers)
    m8 = ptq(trained, 8, blobs.val, budget=1e9)
    assert memory_bytes(m8) == weights * 1 + biases * 8
    assert ptq(trained, 8, blobs.val, budget=memory_bytes(m8) - 1) is None


def test_qat_zero_epochs_equals_one_shot(trained, blobs):
    assert model_equal(qat(trained, 4, blobs.train, 0, 0.1), quantize_model(trained, 4))


def test_qat_latent_moves_iff_gradient_nonzero(trained, blobs):
    latent = trained.copy()
    for layer in latent.layers:
        layer.quant_bits = 4
    stepped = train_sgd(latent, blobs.train, 1, 0.05, len(blobs.train), 0, simulate_quant=False)
    assert not np.array_equal(stepped.layers[0].weights, latent.layers[0].weights)
    still = train_sgd(latent, blobs.train, 1, 0.0, len(blobs.train), 0, simulate_quant=False)
    np.testing.assert_array_equal(still.layers[0].weights, latent.layers[0].weights)


def test_qat_beats_ptq_at_four_bits(blobs):
    base = train_sgd(build_model([2, 8, 8, 3], 0), blobs.train, 20, 0.1, 32, 0)
    p = accuracy(quantize_model(base, 4), blobs.val)
    q = accuracy(qat(base, 4, blobs.train, 10, 0.05, 32, 0), blobs.val)
    assert q >= p


def test_straight_through_gradient():
    rng = np.random.default_rng(5)
    latent = build_model([3, 4, 2], 5)
    for layer in latent.layers:
        layer.quant_bits = 4
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 2, 6)
    ste = backward(latent, x, y, LossKind.CROSS_ENTROPY, simulate_quant=True)
    # the same network evaluated at its quantized weights, no rounding in the loop
    frozen_q = quantize_model(latent, 4)
    for layer in frozen_q.layers:
        layer.quant_bits = None

    def f():
        return loss_and_dlogits(forward(frozen_q, x), y, LossKind.CROSS_ENTROPY)[0]

    for g, layer in zip(ste, frozen_q.layers):
        assert rel_err(g.weights, central_diff(f, layer.weights)) < 1e-4
        assert rel_err(g.bias, central_diff(f, layer.bias)) < 1e-4
