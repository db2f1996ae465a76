"""
The MIT License (MIT)

Copyright (c) 2021-present the waitk.py developers

Permission is hereby granted, free of charge, to any person obtaining a
copy of this software and associated documentation files (the "Software"),
to deal in the Software without restriction, including without limitation
the rights to use, copy, modify, merge, publish, distribute, sublicense,
and/or sell copies of the Software, and to permit persons to whom the
Software is furnished to do so, subject to the following conditions:
The above copyright notice and this permission notice shall be included in
all copies or substantial portions of the Software.
THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS
OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING
FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
DEALINGS IN THE SOFTWARE.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from typing_extensions import TypeAlias

from .abc import Object
from .errors import ConfigError, NonDeterministicError, NumericError, ShapeMismatch
from .utils import simple_repr

__all__: Tuple[str, ...] = (
    'Tensor',
    'AdamState',
    'softmax',
    'log_softmax',
    'logsumexp',
    'layer_norm',
    'adam_step',
    'finite_diff_check',
    'xavier_uniform',
)

log = logging.getLogger(__name__)

Array: TypeAlias = np.ndarray
TensorLike = Union['Tensor', Array, float, int]
Backward = Callable[[Array], Tuple[Optional[Array], ...]]
LossFn = Callable[[Mapping[str, Array]], Tuple[float, Mapping[str, Array]]]


def _ensure_finite(data: Array, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f'non-finite value produced by {op}')


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    # Undo numpy broadcasting by summing over the axes that were expanded.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@simple_repr
class Tensor(Object):
    """A dense 64-bit tensor that records the operations applied to it so
    gradients can be pulled back with :meth:`backward`.

    Tensors are values: every operation returns a new tensor and never
    touches ``data`` in place. A graph is only recorded when at least one
    input has ``requires_grad`` set, so inference code can run through the
    same operations without paying for it.

    .. container:: operations

        .. describe:: x + y

            Elementwise sum with numpy broadcasting.

        .. describe:: x * y

            Elementwise product with numpy broadcasting.

        .. describe:: x @ y

            Batched matrix product.

    Attributes
    ----------
    data: :class:`numpy.ndarray`
        The row-major values.
    grad: Optional[:class:`numpy.ndarray`]
        The accumulated gradient after :meth:`backward`, for leaves that require it.
    requires_grad: :class:`bool`
        Whether gradients flow into this tensor.
    """

    __slots__: Tuple[str, ...] = ('data', 'grad', 'requires_grad', '_parents', '_backward', '_op')

    def __init__(self, data: Union[Array, Sequence[float], float], *, requires_grad: bool = False) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.requires_grad: bool = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Backward] = None
        self._op: str = 'leaf'

    @property
    def shape(self) -> Tuple[int, ...]:
        """Tuple[:class:`int`, ...]: The extents of the tensor."""
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    @staticmethod
    def _result(data: Array, parents: Tuple[Tensor, ...], backward: Backward, op: str) -> Tensor:
        _ensure_finite(data, op)
        out = Tensor(data)
        out._op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        """Accumulates d(self)/d(leaf) into the ``grad`` of every leaf that requires it.

        Raises
        ------
        ConfigError
            The tensor is not a scalar.
        """
        if self.data.size != 1:
            raise ConfigError(f'backward() needs a scalar, got shape {self.shape}')

        order: List[Tensor] = []
        visited: Set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads: Dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    # Elementwise

    def __add__(self, other: TensorLike) -> Tensor:
        rhs = _as_tensor(other)
        a_shape, b_shape = self.shape, rhs.shape

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)

        return Tensor._result(self.data + rhs.data, (self, rhs), backward, 'add')

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return self * -1.0

    def __sub__(self, other: TensorLike) -> Tensor:
        return self + (-_as_tensor(other))

    def __mul__(self, other: TensorLike) -> Tensor:
        rhs = _as_tensor(other)
        a, b = self.data, rhs.data

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)

        return Tensor._result(a * b, (self, rhs), backward, 'mul')

    __rmul__ = __mul__

    def __matmul__(self, other: Tensor) -> Tensor:
        a, b = self.data, other.data

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            grad_a = grad @ np.swapaxes(b, -1, -2)
            grad_b = np.swapaxes(a, -1, -2) @ grad
            return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

        return Tensor._result(a @ b, (self, other), backward, 'matmul')

    def relu(self) -> Tensor:
        mask = self.data > 0

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (grad * mask,)

        return Tensor._result(self.data * mask, (self,), backward, 'relu')

    def sum(self) -> Tensor:
        shape = self.shape

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (np.broadcast_to(grad, shape).copy(),)

        return Tensor._result(np.asarray(self.data.sum()), (self,), backward, 'sum')

    # Shape

    def reshape(self, *shape: int) -> Tensor:
        original = self.shape

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (grad.reshape(original),)

        return Tensor._result(self.data.reshape(shape), (self,), backward, 'reshape')

    def transpose(self, *axes: int) -> Tensor:
        inverse = tuple(int(i) for i in np.argsort(axes))

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (grad.transpose(inverse),)

        return Tensor._result(self.data.transpose(axes), (self,), backward, 'transpose')

    @staticmethod
    def concatenate(tensors: Sequence[Tensor], axis: int) -> Tensor:
        sizes = [t.shape[axis] for t in tensors]
        cuts = np.cumsum(sizes)[:-1]

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return tuple(np.split(grad, cuts, axis=axis))

        data = np.concatenate([t.data for t in tensors], axis=axis)
        return Tensor._result(data, tuple(tensors), backward, 'concatenate')

    def take(self, ids: Array) -> Tensor:
        """Gathers rows of a ``(vocab, dim)`` table, the embedding lookup."""
        index = np.asarray(ids, dtype=np.int64)
        shape = self.shape

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            table_grad = np.zeros(shape, dtype=np.float64)
            np.add.at(table_grad, index, grad)
            return (table_grad,)

        return Tensor._result(self.data[index], (self,), backward, 'take')

    # Layers

    def layer_norm(self, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
        x = self.data
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        xhat = centered * rstd
        g = gain.data

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            dxhat = grad * g
            dx = rstd * (
                dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            flat = grad.reshape(-1, grad.shape[-1])
            dgain = (flat * xhat.reshape(-1, x.shape[-1])).sum(axis=0)
            dbias = flat.sum(axis=0)
            return dx, dgain, dbias

        return Tensor._result(xhat * g + bias.data, (self, gain, bias), backward, 'layer_norm')

    def masked_softmax(self, mask: Array) -> Tensor:
        """Softmax over the last axis where ``mask`` is ``False`` marks excluded entries.

        Every row needs at least one admitted entry.
        """
        scores = np.where(mask, self.data, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        exp = np.exp(scores)
        probs = exp / exp.sum(axis=-1, keepdims=True)

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

        return Tensor._result(probs, (self,), backward, 'masked_softmax')

    def dropout(self, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
        if rng is None or rate <= 0.0:
            return self
        keep = (rng.random(self.shape) >= rate) / (1.0 - rate)

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (grad * keep,)

        return Tensor._result(self.data * keep, (self,), backward, 'dropout')

    def cross_entropy(self, targets: Array, weights: Array, smoothing: float = 0.0) -> Tensor:
        """Mean label-smoothed cross entropy of ``(N, V)`` logits against ``(N,)`` target ids.

        ``weights`` is ``1`` for scored positions and ``0`` for padding; the mean
        is taken over the scored positions.
        """
        logits = self.data
        n, vocab = logits.shape
        logp = logits - logits.max(axis=-1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        q = np.full((n, vocab), smoothing / vocab)
        q[np.arange(n), np.asarray(targets, dtype=np.int64)] += 1.0 - smoothing
        w = np.asarray(weights, dtype=np.float64)
        denom = float(w.sum())
        if denom <= 0:
            raise ConfigError('cross_entropy needs at least one scored position')
        loss = -float((w * (q * logp).sum(axis=-1)).sum()) / denom

        def backward(grad: Array) -> Tuple[Optional[Array], ...]:
            return (float(grad) * w[:, None] * (np.exp(logp) - q) / denom,)

        return Tensor._result(np.asarray(loss), (self,), backward, 'cross_entropy')


def _as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def softmax(v: Union[Array, Sequence[float]]) -> Array:
    """Computes a probability vector from scores, subtracting the maximum first.

    Parameters
    ----------
    v: Union[:class:`numpy.ndarray`, Sequence[:class:`float`]]
        The scores. Works along the last axis for higher ranks.

    Returns
    -------
    :class:`numpy.ndarray`
        Nonnegative values summing to one along the last axis.

    Raises
    ------
    ConfigError
        ``v`` is empty.
    NumericError
        ``v`` holds a non-finite value.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0:
        raise ConfigError('softmax of an empty vector')
    _ensure_finite(x, 'softmax input')
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(v: Union[Array, Sequence[float]]) -> float:
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0:
        raise ConfigError('logsumexp of an empty vector')
    _ensure_finite(x, 'logsumexp input')
    peak = float(x.max())
    return peak + math.log(float(np.exp(x - peak).sum()))


def log_softmax(v: Union[Array, Sequence[float]]) -> Array:
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0:
        raise ConfigError('log_softmax of an empty vector')
    _ensure_finite(x, 'log_softmax input')
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(
    x: Union[Array, Sequence[float]],
    gain: Union[Array, Sequence[float]],
    bias: Union[Array, Sequence[float]],
    eps: float = 1e-5,
) -> Array:
    """Normalises ``x`` to zero mean and unit variance, then scales by ``gain`` and shifts by ``bias``.

    Raises
    ------
    ShapeMismatch
        The three vectors differ in length.
    ConfigError
        ``eps`` is not positive.
    """
    xs, g, b = (np.asarray(a, dtype=np.float64) for a in (x, gain, bias))
    if not (xs.shape[-1:] == g.shape == b.shape):
        raise ShapeMismatch('layer_norm', xs.shape, (g.shape, b.shape))
    if eps <= 0:
        raise ConfigError('layer_norm eps must be positive')
    centered = xs - xs.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return g * centered / np.sqrt(var + eps) + b


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...]) -> Array:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@simple_repr
class AdamState(Object):
    """The optimizer state carried between :func:`adam_step` calls.

    The learning rate follows the inverse-square-root schedule
    ``base_lr * min(step ** -0.5, step * warmup_steps ** -1.5)``.

    Attributes
    ----------
    step: :class:`int`
        The number of updates applied so far.
    m: Dict[:class:`str`, :class:`numpy.ndarray`]
        First moment estimates keyed by parameter name.
    v: Dict[:class:`str`, :class:`numpy.ndarray`]
        Second moment estimates keyed by parameter name.
    beta1: :class:`float`
    beta2: :class:`float`
    epsilon: :class:`float`
    base_lr: :class:`float`
    warmup_steps: :class:`int`
    """

    __slots__: Tuple[str, ...] = ('step', 'beta1', 'beta2', 'epsilon', 'base_lr', 'warmup_steps', 'm', 'v')

    def __init__(
        self,
        *,
        step: int = 0,
        m: Optional[Dict[str, Array]] = None,
        v: Optional[Dict[str, Array]] = None,
        beta1: float = 0.9,
        beta2: float = 0.98,
        epsilon: float = 1e-9,
        base_lr: float = 0.1,
        warmup_steps: int = 400,
    ) -> None:
        if step < 0:
            raise ConfigError('optimizer step must be >= 0')
        if warmup_steps < 1:
            raise ConfigError('warmup_steps must be >= 1')
        self.step: int = step
        self.m: Dict[str, Array] = m if m is not None else {}
        self.v: Dict[str, Array] = v if v is not None else {}
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.epsilon: float = epsilon
        self.base_lr: float = base_lr
        self.warmup_steps: int = warmup_steps

    def learning_rate(self, step: Optional[int] = None) -> float:
        """:class:`float`: The scheduled learning rate at ``step`` (defaults to the next update)."""
        s = max(1, self.step + 1 if step is None else step)
        return self.base_lr * min(s**-0.5, s * self.warmup_steps**-1.5)


def adam_step(
    params: Mapping[str, Array],
    grads: Mapping[str, Array],
    state: AdamState,
) -> Tuple[Dict[str, Array], AdamState]:
    """Applies one bias-corrected Adam update.

    Neither ``params`` nor ``state`` is modified; updated copies are returned.

    Parameters
    ----------
    params: Mapping[:class:`str`, :class:`numpy.ndarray`]
        The parameters to update.
    grads: Mapping[:class:`str`, :class:`numpy.ndarray`]
        Gradients with exactly the same names and shapes.
    state: :class:`AdamState`
        The optimizer state. Missing moments start at zero.

    Returns
    -------
    Tuple[Dict[:class:`str`, :class:`numpy.ndarray`], :class:`AdamState`]
        The updated parameters and the advanced state.

    Raises
    ------
    ShapeMismatch
        A gradient is missing or has the wrong shape.
    NumericError
        A gradient holds a non-finite value.
    """
    if set(params) != set(grads):
        raise ShapeMismatch('gradients', sorted(params), sorted(grads))

    step = state.step + 1
    lr = state.learning_rate(step)
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    correction1 = 1.0 - b1**step
    correction2 = 1.0 - b2**step

    new_params: Dict[str, Array] = {}
    new_m: Dict[str, Array] = {}
    new_v: Dict[str, Array] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ShapeMismatch(name, value.shape, grad.shape)
        _ensure_finite(grad, f'gradient of {name}')

        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * grad if m is None else b1 * m + (1.0 - b1) * grad
        v = (1.0 - b2) * grad * grad if v is None else b2 * v + (1.0 - b2) * grad * grad

        new_m[name] = m
        new_v[name] = v
        new_params[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)

    new_state = AdamState(
        step=step,
        m=new_m,
        v=new_v,
        beta1=b1,
        beta2=b2,
        epsilon=eps,
        base_lr=state.base_lr,
        warmup_steps=state.warmup_steps,
    )
    return new_params, new_state


def finite_diff_check(
    loss_fn: LossFn,
    params: Mapping[str, Array],
    h: float = 1e-5,
    *,
    samples: int = 50,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Compares the analytic gradient of ``loss_fn`` with central differences.

    ``loss_fn`` maps parameters to ``(loss, gradients)``. For each sampled
    coordinate the relative error ``|a - n| / max(|a|, |n|, floor)`` is computed,
    where ``n = (f(p + h) - f(p - h)) / 2h``.

    Parameters
    ----------
    loss_fn: Callable
        The deterministic loss to verify.
    params: Mapping[:class:`str`, :class:`numpy.ndarray`]
        The point to check the gradient at.
    h: :class:`float`
        The finite difference step.
    samples: :class:`int`
        How many coordinates to sample, without replacement.
    seed: :class:`int`
        Seed for choosing coordinates.
    floor: :class:`float`
        The smallest denominator, keeping near-zero gradients from dominating.

    Returns
    -------
    :class:`float`
        The largest relative error among the sampled coordinates.

    Raises
    ------
    ConfigError
        ``h`` is not positive.
    NonDeterministicError
        Two evaluations at the same point disagree.
    """
    if not h > 0:
        raise ConfigError('finite difference step must be positive')

    base_loss, analytic = loss_fn(params)
    again, _ = loss_fn(params)
    if base_loss != again:
        raise NonDeterministicError(f'loss_fn returned {base_loss!r} then {again!r} for the same input')

    names = sorted(params)
    sizes = [int(np.asarray(params[name]).size) for name in names]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(samples, total), replace=False)

    worst = 0.0
    for flat in sorted(int(p) for p in picks):
        slot = int(np.searchsorted(offsets, flat, side='right')) - 1
        name = names[slot]
        index = flat - int(offsets[slot])

        def shifted(delta: float) -> float:
            moved = dict(params)
            tensor = np.array(params[name], dtype=np.float64, copy=True)
            tensor.reshape(-1)[index] += delta
            moved[name] = tensor
            return float(loss_fn(moved)[0])

        numeric = (shifted(h) - shifted(-h)) / (2.0 * h)
        exact = float(np.asarray(analytic[name]).reshape(-1)[index])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
        worst = max(worst, error)

    log.debug('finite difference check over %d coordinates: max relative error %.3e', len(picks), worst)
    return worst
