""" Tests for the tensor primitives, the gradient tape and the FLOP counter. """
# BSD 3-Clause License
#
# Copyright (c) 2025 - 2026, NewTec GmbH
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
#
# 1. Redistributions of source code must retain the above copyright notice, this
#    list of conditions and the following disclaimer.
#
# 2. Redistributions in binary form must reproduce the above copyright notice,
#    this list of conditions and the following disclaimer in the documentation
#    and/or other materials provided with the distribution.
#
# 3. Neither the name of the copyright holder nor the names of its
#    contributors may be used to endorse or promote products derived from
#    this software without specific prior written permission.
#
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO, THE
# IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR PURPOSE ARE
# DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS BE LIABLE
# FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY, OR CONSEQUENTIAL
# DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT OF SUBSTITUTE GOODS OR
# SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS INTERRUPTION) HOWEVER
# CAUSED AND ON ANY THEORY OF LIABILITY, WHETHER IN CONTRACT, STRICT LIABILITY,
# OR TORT (INCLUDING NEGLIGENCE OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE
# OF THIS SOFTWARE, EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

################################################################################
# Imports
################################################################################

import numpy as np
import pytest

from pyEditCtrl.dit_backbone import attention
from pyEditCtrl.ret import ShapeError
from pyEditCtrl.tensor import (FlopCounter, GradTape, RngState, Tensor, add, backward, concat, finite_difference_check,
                               flop_component, gelu, layer_norm, linear, matmul, mean, mul, parameter, reshape, scale,
                               silu, softmax_rows, sub, swapaxes, take_rows, tensor_sum)

################################################################################
# Variables
################################################################################

PRIMITIVE_TOLERANCE = 1e-5

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def _param(shape: tuple, seed: int, name: str = "p") -> Tensor:
    return parameter(RngState(seed).normal(shape, dtype=np.float64), name)


def _weighted_sum(out: Tensor, seed: int) -> Tensor:
    """ Scalar loss sum(out * w) with fixed random w, so every output entry matters. """
    weights = RngState(seed, 99).normal(out.shape, dtype=np.float64)
    return tensor_sum(mul(out, Tensor(weights)))


def test_matmul_matches_loop_oracle():
    """ Matrix product against a triple loop. """
    a = RngState(1).normal((5, 4), dtype=np.float64)
    b = RngState(2).normal((4, 3), dtype=np.float64)

    # TC: 5x4 @ 4x3 equals the explicit sum of products.
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(Tensor(a), Tensor(b)).data, expected, atol=1e-6, rtol=0.0)

    # TC: Inner extents must agree.
    with pytest.raises(ShapeError):
        matmul(Tensor(a), Tensor(a))


def test_softmax_and_layer_norm_values():
    """ Forward values of the normalising primitives. """
    row = RngState(3).normal((1, 7), dtype=np.float64)

    # TC: Softmax equals exp / sum.
    expected = np.exp(row) / np.exp(row).sum()
    assert np.allclose(softmax_rows(Tensor(row)).data, expected, atol=1e-6, rtol=0.0)

    # TC: -inf entries get probability exactly zero.
    masked = row.copy()
    masked[0, 2] = -np.inf
    assert softmax_rows(Tensor(masked)).data[0, 2] == 0.0

    # TC: A fully masked row is rejected.
    with pytest.raises(ShapeError):
        softmax_rows(Tensor(np.full((1, 3), -np.inf)))

    # TC: Two-point standardisation maps [1, 3] to about [-1, 1].
    gain = Tensor(np.ones(2, dtype=np.float64))
    bias = Tensor(np.zeros(2, dtype=np.float64))
    out = layer_norm(Tensor(np.array([[1.0, 3.0]])), gain, bias).data
    assert np.allclose(out, [[-1.0, 1.0]], atol=1e-4)

    # TC: Normalised rows have zero mean and unit variance.
    wide = RngState(4).normal((6, 32), dtype=np.float64) * 3.0 + 2.0
    normed = layer_norm(Tensor(wide), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    assert np.all(np.abs(normed.mean(axis=1)) <= 1e-6)
    assert np.all(np.abs(normed.var(axis=1) - 1.0) <= 1e-4)


@pytest.mark.parametrize("name", ["add", "sub", "mul", "scale", "matmul", "batched_matmul", "swapaxes_reshape",
                                  "concat", "take_rows", "sum_axis", "mean", "softmax", "layer_norm", "gelu",
                                  "silu", "linear"])
def test_primitive_gradients(name):
    """ Analytic gradients of every primitive against central differences in 64-bit. """
    a = _param((3, 4), 10, "a")
    b = _param((3, 4), 11, "b")
    row = _param((4,), 12, "row")
    w = _param((4, 5), 13, "w")
    batch = _param((2, 3, 4), 14, "batch")
    gain = _param((4,), 15, "gain")
    bias = _param((5,), 16, "bias")

    builders = {
        "add": (lambda: add(a, row), [a, row]),
        "sub": (lambda: sub(a, b), [a, b]),
        "mul": (lambda: mul(a, b), [a, b]),
        "scale": (lambda: scale(a, -2.5), [a]),
        "matmul": (lambda: matmul(a, w), [a, w]),
        "batched_matmul": (lambda: matmul(batch, w), [batch, w]),
        "swapaxes_reshape": (lambda: reshape(swapaxes(batch, 0, 2), (4, 6)), [batch]),
        "concat": (lambda: concat([a, b], axis=1), [a, b]),
        "take_rows": (lambda: take_rows(a, np.array([2, 0, 2])), [a]),
        "sum_axis": (lambda: tensor_sum(batch, axis=1), [batch]),
        "mean": (lambda: mean(a, axis=0, keepdims=True), [a]),
        "softmax": (lambda: softmax_rows(a), [a]),
        "layer_norm": (lambda: layer_norm(a, gain, row), [a, gain, row]),
        "gelu": (lambda: gelu(a), [a]),
        "silu": (lambda: silu(a), [a]),
        "linear": (lambda: linear(a, swapaxes(w, 0, 1), bias), [a, w, bias]),
    }
    forward, params = builders[name]

    # TC: Relative error of every entry stays below the primitive tolerance.
    error = finite_difference_check(lambda: _weighted_sum(forward(), 1), params)
    assert error <= PRIMITIVE_TOLERANCE


def test_attention_gradient():
    """ A single multi-head attention with an additive bias. """
    queries = _param((4, 8), 20, "q")
    keys = _param((6, 8), 21, "k")
    values = _param((6, 8), 22, "v")
    bias = np.zeros((4, 6))
    bias[0, 1] = -np.inf
    bias[2, 5] = -np.inf

    # TC: Attention passes the finite difference check.
    error = finite_difference_check(lambda: _weighted_sum(attention(queries, keys, values, 2, bias), 2),
                                    [queries, keys, values])
    assert error <= PRIMITIVE_TOLERANCE


def test_quadratic_bowl_gradient():
    """ sum(w * w) has gradient 2w. """
    weights = _param((6,), 30, "w")

    # TC: Near-exact agreement on a quadratic.
    error = finite_difference_check(lambda: tensor_sum(mul(weights, weights)), [weights])
    assert error <= 1e-8

    # TC: The analytic gradient is 2w.
    with GradTape() as tape:
        loss = tensor_sum(mul(weights, weights))
    grads = backward(loss, tape)
    assert np.allclose(grads[weights], 2.0 * weights.data)


def test_frozen_and_tape_rules():
    """ Frozen leaves get zero gradients; backward checks its inputs. """
    trainable = _param((3,), 40, "trainable")
    frozen = parameter(RngState(41).normal((3,), dtype=np.float64), "frozen", frozen=True)

    with GradTape() as tape:
        loss = tensor_sum(mul(trainable, frozen))
    grads = backward(loss, tape)

    # TC: The frozen leaf reports an all-zero gradient.
    assert np.array_equal(grads[frozen], np.zeros(3))
    assert np.array_equal(frozen.grad, np.zeros(3))

    # TC: The trainable leaf gets d(sum(a*b))/da = b.
    assert np.allclose(grads[trainable], frozen.data)

    # TC: A non-scalar loss is rejected.
    with GradTape() as tape:
        vector = mul(trainable, frozen)
    with pytest.raises(ShapeError):
        backward(vector, tape)

    # TC: A loss from another tape is rejected.
    with GradTape() as other:
        tensor_sum(trainable)
    with pytest.raises(ValueError):
        backward(loss, other)

    # TC: Outside a tape nothing is recorded.
    out = mul(trainable, trainable)
    assert not out.requires_grad


def test_flop_counter():
    """ Per-kind and per-component FLOP bookkeeping. """
    a = Tensor(np.ones((5, 4)))
    b = Tensor(np.ones((4, 3)))
    batch = Tensor(np.ones((2, 5, 4)))

    # TC: 2*m*k*n for a matrix product, nothing for elementwise ops.
    with FlopCounter() as counter:
        matmul(a, b)
        add(a, a)
    assert counter.total == 2 * 5 * 4 * 3
    assert counter.by_kind["matmul"] == 120
    assert counter.by_component["backbone"] == 120

    # TC: Batched products count every leading index; nonlinearities cost 5 per element.
    with FlopCounter() as counter:
        matmul(batch, b)
        gelu(a)
    assert counter.by_kind["matmul"] == 2 * 2 * 5 * 4 * 3
    assert counter.by_kind["gelu"] == 5 * 20

    # TC: Nested counters both receive the counts, the component context attributes them.
    with FlopCounter() as outer:
        with flop_component("control"):
            with FlopCounter() as inner:
                matmul(a, b)
        matmul(a, b)
    assert inner.total == 120
    assert outer.total == 240
    assert outer.by_component["control"] == 120
    assert outer.by_component["backbone"] == 120

    # TC: Counts are kept until reset.
    outer.reset()
    assert outer.total == 0


def test_rng_state_is_reproducible():
    """ Counter-based streams depend only on seed and keys. """
    # TC: Same seed, same draws.
    assert np.array_equal(RngState(5).normal((4,)), RngState(5).normal((4,)))

    # TC: Derived streams depend on the keys only.
    parent = RngState(5)
    parent.normal((10,))
    assert np.array_equal(parent.derive(3).normal((4,)), RngState(5, 3).normal((4,)))
    assert not np.array_equal(RngState(5, 3).normal((4,)), RngState(5, 4).normal((4,)))

    # TC: Seeds outside the unsigned 64-bit range are rejected.
    with pytest.raises(ValueError):
        RngState(-1)
