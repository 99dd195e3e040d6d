"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every forward op records its inputs and a backward closure on
the output tensor, and ``backward`` walks the graph in reverse topological
order. The op set is exactly what the policy networks and surrogate losses
need; everything runs on tiny arrays, so clarity and bitwise reproducibility
win over throughput.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericFailure, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus optional gradient and graph linkage."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() on tensor of size {self.values.size}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor with d(self)/d(tensor)."""
        if self.values.size != 1:
            raise UsageError("backward() requires a scalar loss tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._parents or p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not (parent.requires_grad or parent._parents):
                    continue
                if not np.all(np.isfinite(g)):
                    raise NumericFailure("non-finite gradient during backward")
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.values)
                parent.grad += g

    # operator sugar; full op set lives in the module functions below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(values: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericFailure("non-finite values produced by a forward op")
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise ConfigurationError(
            f"{op}: shapes {a.values.shape} and {b.values.shape} do not broadcast"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _from_op(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _from_op(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.values.shape), _unbroadcast(-g, b.values.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return _from_op(
        a.values * b.values,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.values.shape),
            _unbroadcast(g * a.values, b.values.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _from_op(a.values * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ConfigurationError("matmul requires 2-D operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise ConfigurationError(
            f"matmul: inner dims {a.values.shape} @ {b.values.shape} do not match"
        )
    return _from_op(
        a.values @ b.values,
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ConfigurationError("transpose requires a 2-D operand")
    return _from_op(a.values.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0
    return _from_op(a.values * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)
    return _from_op(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.values)
    return _from_op(e, (a,), lambda g: (g * e,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.values > lo) & (a.values < hi)
    return _from_op(np.clip(a.values, lo, hi), (a,), lambda g: (g * mask,))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate over the last axis."""
    ts = list(tensors)
    if not ts:
        raise ConfigurationError("concat of zero tensors")
    lead = ts[0].values.shape[:-1]
    if any(t.values.shape[:-1] != lead for t in ts):
        raise ConfigurationError("concat: leading dims differ")
    widths = [t.values.shape[-1] for t in ts]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=-1))

    return _from_op(np.concatenate([t.values for t in ts], axis=-1), ts, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries starting at ``start`` along one axis."""
    nd = a.values.ndim
    if axis < 0:
        axis += nd
    if not 0 <= axis < nd:
        raise ConfigurationError(f"narrow: axis {axis} out of range for ndim {nd}")
    dim = a.values.shape[axis]
    if start < 0 or length < 1 or start + length > dim:
        raise ConfigurationError(f"narrow: [{start}:{start + length}) outside axis of size {dim}")
    sel = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(nd))

    def backward(g):
        full = np.zeros_like(a.values)
        full[sel] = g
        return (full,)

    return _from_op(a.values[sel].copy(), (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    """Gather flat positions; output has the shape of ``indices``."""
    idx = np.asarray(indices, dtype=np.intp)
    flat = a.values.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise ConfigurationError("take: index out of range")

    def backward(g):
        full = np.zeros(flat.size, dtype=np.float64)
        np.add.at(full, idx.reshape(-1), g.reshape(-1))
        return (full.reshape(a.values.shape),)

    return _from_op(flat[idx], (a,), backward)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum to a scalar, or over the last axis when axis=-1."""
    if axis is None:
        return _from_op(
            np.asarray(a.values.sum()), (a,), lambda g: (np.broadcast_to(g, a.values.shape).copy(),)
        )
    if axis != -1:
        raise ConfigurationError("tsum supports axis=None or axis=-1")
    return _from_op(
        a.values.sum(axis=-1),
        (a,),
        lambda g: (np.broadcast_to(g[..., None], a.values.shape).copy(),),
    )


def tmean(a: Tensor) -> Tensor:
    n = a.values.size
    return _from_op(
        np.asarray(a.values.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.values.shape).copy(),),
    )


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _from_op(s, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, stabilized by max subtraction."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _from_op(out, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply learned gain and bias."""
    if gain.values.shape != a.values.shape[-1:] or bias.values.shape != a.values.shape[-1:]:
        raise ConfigurationError("layer_norm: gain/bias must match the last axis")
    mu = a.values.mean(axis=-1, keepdims=True)
    xc = a.values - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        dgain = _unbroadcast(g * xhat, gain.values.shape)
        dbias = _unbroadcast(g, bias.values.shape)
        dxhat = g * gain.values
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return (dx, dgain, dbias)

    return _from_op(xhat * gain.values + bias.values, (a, gain, bias), backward)


class Adam:
    """Adam with bias correction; zeroes grads after each step."""

    def __init__(
        self,
        params: Iterable[Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        if not self.params:
            raise ConfigurationError("Adam needs at least one parameter")
        if not (learning_rate > 0 and 0 < beta1 < 1 and 0 < beta2 < 1 and epsilon > 0):
            raise ConfigurationError("Adam hyperparameters out of range")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.values) for p in self.params]
        self.second_moment = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise UsageError("Adam.step with a parameter missing its grad")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            p.values -= self.learning_rate * update
            if not np.all(np.isfinite(p.values)):
                raise NumericFailure("non-finite parameter after Adam step")
            p.grad = None


def parameter(values, requires_grad: bool = True) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=requires_grad)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
