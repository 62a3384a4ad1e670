""" Dense tensor arithmetic with a reverse-mode gradient tape and FLOP instrumentation.

    Every model in pyEditCtrl is built from the primitives of this module. A
    primitive computes its result with numpy, reports its analytic FLOP count to
    all active FlopCounter scopes and, if a GradTape is active and any input is
    tracked, appends a record that knows how to push the output gradient back to
    the inputs.

    FLOP convention: one multiply-add = 2 FLOPs (matmul 2*m*k*n); softmax, layer
    norm, GELU and SiLU 5 FLOPs per element; elementwise arithmetic, reshapes
    and row gathers are not counted.
"""
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

import contextlib
import logging
from collections import Counter
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from pyEditCtrl.ret import ShapeError

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

NORM_EPSILON = 1e-5
NONLINEAR_FLOPS_PER_ELEMENT = 5

_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715

_ACTIVE_TAPE: ContextVar[Optional["GradTape"]] = ContextVar("active_tape", default=None)
_ACTIVE_COUNTERS: ContextVar[tuple] = ContextVar("active_counters", default=())
_COMPONENT: ContextVar[str] = ContextVar("flop_component", default="backbone")

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], tuple]

################################################################################
# Classes
################################################################################


class Tensor:
    """ A dense row-major array with gradient bookkeeping.

        Leaves created with requires_grad=True are trainable parameters. A leaf
        flagged frozen takes part in forward computation but is never tracked;
        after a backward pass its gradient is reported as exactly zero.
    """

    __slots__ = ("data", "requires_grad", "frozen", "grad", "name")

    def __init__(self,
                 data: ArrayLike,
                 requires_grad: bool = False,
                 frozen: bool = False,
                 name: str = "",
                 dtype: Optional[np.dtype] = None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = np.float32
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.frozen = frozen
        self.grad: Optional[np.ndarray] = None
        self.name = name

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape}, dtype={self.dtype}, " \
               f"requires_grad={self.requires_grad}, frozen={self.frozen})"

    @property
    def shape(self) -> tuple:
        """ The extents of the tensor. """
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        """ The element type of the tensor. """
        return self.data.dtype

    @property
    def size(self) -> int:
        """ The number of elements. """
        return int(self.data.size)

    @property
    def tracked(self) -> bool:
        """ True if gradients flow into this tensor. """
        return self.requires_grad and not self.frozen

    def numpy(self) -> np.ndarray:
        """ Gets the underlying array (no copy). """
        return self.data

    def cast_(self, dtype: np.dtype) -> "Tensor":
        """ Converts the data in place, used to switch a model into 64-bit mode. """
        self.data = self.data.astype(dtype)
        return self

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __radd__(self, other) -> "Tensor":
        return add(other, self)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)


@dataclass
class TapeRecord:
    """ One executed primitive as seen by the gradient tape. """
    kind: str
    inputs: tuple
    output: Tensor
    backward_fn: BackwardFn


class GradTape:
    """ Ordered record of executed primitives, replayed in reverse by backward().

        Use as a context manager; only primitives executed inside the context are
        recorded. A tape belongs to one thread of execution.
    """

    def __init__(self):
        self.records: list[TapeRecord] = []
        self._tokens: list = []

    def __enter__(self) -> "GradTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def record(self, kind: str, inputs: tuple, output: Tensor, backward_fn: BackwardFn) -> None:
        """ Appends a primitive to the tape. """
        self.records.append(TapeRecord(kind, inputs, output, backward_fn))

    def leaves(self) -> list[Tensor]:
        """ Gets every parameter-like leaf (requires_grad) read by a recorded primitive. """
        produced = {id(rec.output) for rec in self.records}
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for tensor in rec.inputs:
                if tensor.requires_grad and id(tensor) not in produced:
                    seen.setdefault(id(tensor), tensor)
        return list(seen.values())

    def backward(self, loss: Tensor) -> dict:
        """ See the module level backward(). """
        return backward(loss, self)


class FlopCounter:
    """ Accumulates analytic FLOP counts per operation kind and per model component.

        Counts are monotone within a scope and only cleared by reset(). Nested and
        parallel scopes on the same thread all receive every count.
    """

    def __init__(self):
        self.by_kind: Counter = Counter()
        self.by_component: Counter = Counter()
        self._tokens: list = []

    def __enter__(self) -> "FlopCounter":
        self._tokens.append(_ACTIVE_COUNTERS.set(_ACTIVE_COUNTERS.get() + (self,)))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_COUNTERS.reset(self._tokens.pop())

    @property
    def total(self) -> int:
        """ Gets the total number of FLOPs counted. """
        return int(sum(self.by_kind.values()))

    def add(self, kind: str, component: str, flops: int) -> None:
        """ Adds a FLOP count. """
        self.by_kind[kind] += int(flops)
        self.by_component[component] += int(flops)

    def reset(self) -> None:
        """ Clears all counts. """
        self.by_kind.clear()
        self.by_component.clear()


class RngState:
    """ Counter-based (Philox) random stream.

        The stream depends only on the seed and the derivation keys, so identical
        seeds and call sequences give identical output on every platform.
    """

    def __init__(self, seed: int, *keys: int):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"Seed {seed} is not an unsigned 64-bit integer.")
        self.seed = int(seed)
        self.keys = tuple(int(key) for key in keys)
        self._generator = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, *self.keys])))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, keys={self.keys})"

    def derive(self, *keys: int) -> "RngState":
        """ Gets an independent child stream that depends only on (seed, keys). """
        return RngState(self.seed, *self.keys, *keys)

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        """ Draws standard normal values. """
        return self._generator.standard_normal(shape, dtype=dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        """ Draws uniform values in [low, high). """
        return self._generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """ Draws integers in [low, high). """
        return self._generator.integers(low, high, size)

    def random(self) -> float:
        """ Draws one uniform value in [0, 1). """
        return float(self._generator.random())


################################################################################
# Functions
################################################################################

@contextlib.contextmanager
def flop_component(name: str) -> Iterator[None]:
    """ Attributes all FLOPs counted inside the context to the given component. """
    token = _COMPONENT.set(name)
    try:
        yield
    finally:
        _COMPONENT.reset(token)


def _count(kind: str, flops: int) -> None:
    counters = _ACTIVE_COUNTERS.get()
    if counters and flops:
        component = _COMPONENT.get()
        for counter in counters:
            counter.add(kind, component, flops)


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float32))


def _emit(kind: str, out_data: np.ndarray, inputs: tuple, backward_fn: BackwardFn, flops: int = 0) -> Tensor:
    _count(kind, flops)
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(tensor.tracked for tensor in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def parameter(data: np.ndarray, name: str, frozen: bool = False) -> Tensor:
    """ Creates a trainable leaf tensor. """
    return Tensor(data, requires_grad=True, frozen=frozen, name=name)


def add(a, b) -> Tensor:
    """ Elementwise a + b with broadcasting. """
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _emit("add", a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    """ Elementwise a - b with broadcasting. """
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _backward(grad):
        return _unbroadcast(grad, a.shape), -_unbroadcast(grad, b.shape)

    return _emit("sub", a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    """ Elementwise a * b with broadcasting. """
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _emit("mul", a.data * b.data, (a, b), _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """ Multiplies by a Python scalar. """
    factor_cast = a.dtype.type(factor)

    def _backward(grad):
        return (grad * factor_cast,)

    return _emit("scale", a.data * factor_cast, (a,), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """ Matrix product over the last two axes, leading axes broadcast.

    Args:
        a (Tensor): Shape [..., m, k].
        b (Tensor): Shape [..., k, n].

    Returns:
        Tensor: Shape [..., m, n]; 2*m*k*n FLOPs per leading index are recorded.

    Raises:
        ShapeError: If the inner extents differ or an operand is not at least 2-D.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}.")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}.")

    out_data = np.matmul(a.data, b.data)
    rows, inner, cols = a.shape[-2], a.shape[-1], b.shape[-1]
    batch = int(np.prod(out_data.shape[:-2], dtype=np.int64)) if out_data.ndim > 2 else 1

    def _backward(grad):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _emit("matmul", out_data, (a, b), _backward, flops=2 * batch * rows * inner * cols)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    """ Exchanges two axes. """
    def _backward(grad):
        return (np.swapaxes(grad, axis1, axis2),)

    return _emit("swapaxes", np.swapaxes(a.data, axis1, axis2), (a,), _backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    """ Changes the extents keeping row-major order. """
    def _backward(grad):
        return (grad.reshape(a.shape),)

    return _emit("reshape", a.data.reshape(shape), (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """ Joins tensors along an axis. """
    tensors = tuple(tensors)
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def _backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    return _emit("concat", np.concatenate([tensor.data for tensor in tensors], axis=axis), tensors, _backward)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """ Gathers rows (first axis) by index; the gradient scatter-adds back. """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[0]):
        raise ShapeError(f"Row index out of range for {a.shape[0]} rows.")

    def _backward(grad):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, grad)
        return (full,)

    return _emit("take_rows", a.data[indices], (a,), _backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """ Sums over the given axes (all by default). """
    out_data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def _backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).astype(a.dtype),)

    return _emit("sum", out_data, (a,), _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """ Averages over the given axes (all by default). """
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax_rows(x: Tensor) -> Tensor:
    """ Softmax over the last axis with max subtraction.

        Entries may be -inf to mask them out; their probability is exactly zero.

    Raises:
        ShapeError: If a row is masked completely.
    """
    row_max = x.data.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise ShapeError("softmax over a fully masked row.")
    exps = np.exp(x.data - row_max)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def _backward(grad):
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", probs, (x,), _backward, flops=NONLINEAR_FLOPS_PER_ELEMENT * x.size)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """ Normalises the last axis to zero mean / unit variance, then applies gain and bias.

    Raises:
        ShapeError: If the last axis is shorter than 2 or gain/bias do not match it.
    """
    width = x.shape[-1]
    if width < 2 or gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm shape mismatch: x {x.shape}, gain {gain.shape}, bias {bias.shape}.")

    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + x.dtype.type(NORM_EPSILON))
    normed = centered * inv_std
    out_data = normed * gain.data + bias.data

    def _backward(grad):
        grad_normed = grad * gain.data
        grad_x = inv_std * (grad_normed
                            - grad_normed.mean(axis=-1, keepdims=True)
                            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(x.data.ndim - 1))
        return grad_x, (grad * normed).sum(axis=reduce_axes), grad.sum(axis=reduce_axes)

    return _emit("layer_norm", out_data, (x, gain, bias), _backward,
                 flops=NONLINEAR_FLOPS_PER_ELEMENT * x.size)


def gelu(x: Tensor) -> Tensor:
    """ GELU, tanh approximation. """
    k = x.dtype.type(_GELU_K)
    c = x.dtype.type(_GELU_C)
    inner = k * (x.data + c * x.data ** 3)
    tanh_inner = np.tanh(inner)
    out_data = 0.5 * x.data * (1.0 + tanh_inner)

    def _backward(grad):
        d_inner = k * (1.0 + 3.0 * c * x.data ** 2)
        local = 0.5 * (1.0 + tanh_inner) + 0.5 * x.data * (1.0 - tanh_inner ** 2) * d_inner
        return (grad * local,)

    return _emit("gelu", out_data.astype(x.dtype), (x,), _backward,
                 flops=NONLINEAR_FLOPS_PER_ELEMENT * x.size)


def silu(x: Tensor) -> Tensor:
    """ SiLU (x * sigmoid(x)). """
    sig = 1.0 / (1.0 + np.exp(-x.data))

    def _backward(grad):
        return (grad * sig * (1.0 + x.data * (1.0 - sig)),)

    return _emit("silu", (x.data * sig).astype(x.dtype), (x,), _backward,
                 flops=NONLINEAR_FLOPS_PER_ELEMENT * x.size)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """ x @ weight^T (+ bias), weight stored as [d_out, d_in]. """
    out = matmul(x, swapaxes(weight, 0, 1))
    if bias is not None:
        out = add(out, bias)
    return out


def backward(loss: Tensor, tape: GradTape) -> dict:
    """ Replays the tape in reverse and accumulates gradients.

        Each record is visited exactly once. The gradients of all tracked leaves
        are stored in their .grad attribute (overwriting earlier values); frozen
        leaves read by the tape get an all-zero gradient.

    Args:
        loss (Tensor): A scalar produced by a primitive recorded on the tape.
        tape (GradTape): The tape the loss was computed under.

    Returns:
        dict: Leaf tensor -> gradient array, for every requires_grad leaf on the tape.

    Raises:
        ShapeError: If the loss is not scalar.
        ValueError: If the loss was not produced on this tape.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}.")
    if not any(rec.output is loss for rec in tape.records):
        raise ValueError("The loss tensor is not on the given tape.")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}

    for rec in reversed(tape.records):
        grad = pending.pop(id(rec.output), None)
        if grad is None:
            continue
        input_grads = rec.backward_fn(grad)
        for tensor, input_grad in zip(rec.inputs, input_grads):
            if input_grad is None or not tensor.tracked:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + input_grad
            else:
                pending[key] = np.asarray(input_grad, dtype=tensor.dtype)
                tensors[key] = tensor

    result = {}
    for leaf in tape.leaves():
        if leaf.frozen:
            leaf.grad = np.zeros_like(leaf.data)
        else:
            leaf.grad = pending.get(id(leaf), np.zeros_like(leaf.data))
        result[leaf] = leaf.grad

    return result


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: Sequence[Tensor],
                            h: float = 1e-5,
                            max_entries: Optional[int] = None,
                            rng: Optional[RngState] = None,
                            denominator_floor: float = 1e-3) -> float:
    """ Compares backward() against central differences.

        The relative error of one entry is |analytic - numeric| divided by
        max(|analytic|, |numeric|, denominator_floor). loss_fn must be
        deterministic; it is evaluated once under a tape and twice per checked
        entry without one.

    Args:
        loss_fn: Builds the scalar loss from the current parameter values.
        params: Leaves to perturb.
        h: Central-difference step.
        max_entries: If given, at most this many entries (over all params) are
            sampled uniformly with rng; otherwise every entry is checked.
        rng: Sampling stream, required with max_entries.
        denominator_floor: Lower bound of the relative-error denominator.

    Returns:
        float: The maximum relative error over all checked entries.
    """
    with GradTape() as tape:
        loss = loss_fn()
    grads = backward(loss, tape)

    entries = [(param, flat) for param in params for flat in range(param.size)]
    if max_entries is not None and len(entries) > max_entries:
        if rng is None:
            raise ValueError("Sampling entries needs an RngState.")
        picks = np.sort(rng.integers(0, len(entries), size=max_entries))
        entries = [entries[pick] for pick in picks]

    worst = 0.0
    for param, flat in entries:
        analytic = float(grads.get(param, np.zeros_like(param.data)).reshape(-1)[flat])
        view = param.data.reshape(-1)
        original = view[flat]
        view[flat] = original + h
        loss_plus = float(loss_fn().data)
        view[flat] = original - h
        loss_minus = float(loss_fn().data)
        view[flat] = original
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), denominator_floor)
        worst = max(worst, error)

    LOG.debug("finite difference check over %d entries: max relative error %.3e", len(entries), worst)
    return worst
