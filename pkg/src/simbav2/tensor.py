"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable primitive records its inputs and a backward closure on
the output tensor. Node ids grow monotonically, so sorting the reachable
subgraph by descending id gives a reverse topological order: a node is only
visited once every consumer has pushed its gradient contribution.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, UsageError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "_consumed")
    # make ndarray-op-Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_counter)
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # ---------------------------------------------------------------- backward
    def backward(self) -> None:
        """Populate ``.grad`` of every reachable leaf with d(self)/d(leaf).

        The graph is released afterwards; calling ``backward`` a second time on
        the same loss raises :class:`UsageError`.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise UsageError("backward() already ran on this graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any tensor that requires grad")

        nodes = []
        seen = {self._id}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and p._id not in seen:
                    seen.add(p._id)
                    stack.append(p)
        nodes.sort(key=lambda n: n._id, reverse=True)

        grads: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for node in nodes:
            g = grads.pop(node._id, None)
            if node._backward is None:
                # leaf
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    if pg.shape != p.data.shape:
                        pg = _unbroadcast(pg, p.data.shape)
                    prev = grads.get(p._id)
                    grads[p._id] = pg if prev is None else prev + pg
            node._parents = ()
            node._backward = None
            node._consumed = True
        self._consumed = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_counter)
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data if a.requires_grad else None
        gb = -g * out / b.data if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    return _result(y, (x,), lambda g: (g / (1.0 + np.exp(-x.data)),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _result(
        np.minimum(a.data, b.data),
        (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


# ------------------------------------------------------------------ reduction
def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.data.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# --------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    """Matrix product of an (m, k) and a (k, n) tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None, a.data.T @ g if b.requires_grad else None)

    return _result(a.data @ b.data, (a, b), backward)


def linear(x, w) -> Tensor:
    """``x @ w.T`` for an (n, in) batch and an (out, in) weight matrix."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")

    def backward(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        return gx, gw

    return _result(x.data @ w.data.T, (x, w), backward)


def scaled_linear(x, w, s) -> Tensor:
    """``(x @ w.T) * s`` with the per-output gain ``s`` folded into the weights."""
    x, w, s = as_tensor(x), as_tensor(w), as_tensor(s)
    if w.ndim != 2 or x.shape[-1] != w.shape[1] or s.shape != (w.shape[0],):
        raise DimensionError(f"scaled_linear: input {x.shape}, weight {w.shape}, gain {s.shape}")
    ws = w.data * s.data[:, None]
    out = x.data @ ws.T

    def backward(g):
        gx = g @ ws if x.requires_grad else None
        gw = gs = None
        if w.requires_grad or s.requires_grad:
            gtx = g.T @ x.data
            if w.requires_grad:
                gw = gtx * s.data[:, None]
            if s.requires_grad:
                gs = (gtx * w.data).sum(axis=1)
        return gx, gw, gs

    return _result(out, (x, w, s), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _result(x.data[idx], (x,), backward)


def concat_lastaxis(tensors: Iterable) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[-1] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=-1),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=-1)),
    )


# ------------------------------------------------------------- normalizations
def softmax_lastaxis(x) -> Tensor:
    x = as_tensor(x)
    if x.data.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e * (1.0 / e.sum(axis=-1, keepdims=True))

    def backward(g):
        return (p * (g - _rowdot(g, p)),)

    return _result(p, (x,), backward)


def softmax_cross_entropy(logits, target) -> Tensor:
    """Row-wise ``-sum(target * log_softmax(logits))``; ``target`` is a constant."""
    x = as_tensor(logits)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != x.data.shape:
        raise DimensionError(f"target shape {t.shape} != logits shape {x.data.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    log_p = z - np.log(s)
    t_mass = t.sum(axis=-1, keepdims=True)

    def backward(g):
        g = np.expand_dims(g, -1)
        return (g * ((e / s) * t_mass - t),)

    return _result(-(t * log_p).sum(axis=-1), (x,), backward)


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Last-axis inner products, kept as a trailing singleton axis."""
    return np.einsum("...i,...i->...", a, b)[..., None]


def l2_normalize_lastaxis(x, eps: float = 1e-8) -> Tensor:
    """Divide each last-axis slice by ``sqrt(sum(x**2) + eps**2)``.

    Squaring the guard keeps outputs within 1e-10 of unit norm for any input
    with norm >= 1e-3, while a zero slice still maps to zero.
    """
    x = as_tensor(x)
    inv = 1.0 / np.sqrt(_rowdot(x.data, x.data) + eps * eps)
    y = x.data * inv

    def backward(g):
        return ((g - y * _rowdot(g, y)) * inv,)

    return _result(y, (x,), backward)


def layer_norm_lastaxis(x, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization without affine parameters."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y, (x,), backward)
