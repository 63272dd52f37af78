"""Dense tensors with tape-free reverse-mode differentiation.

Every op returns a new ``Tensor`` that remembers its parents and a closure
that pushes the upstream gradient back to them. ``backward`` walks the graph
in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

_DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the precision used for new tensors (f64 debug mode)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim > 0 and 0 in arr.shape:
            raise DimensionError(f"tensor dims must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.copy() if g.shape == t.data.shape else np.broadcast_to(g, t.data.shape).copy()
    else:
        t.grad += g


def _check_leading_broadcast(a: tuple, b: tuple) -> tuple:
    """Shapes may differ only by missing leading dims on one side."""
    if a == b:
        return a
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(f"shapes {a} and {b} are not leading-dim compatible")
    return long_


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), bw)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

    def bw(g):
        _accumulate(x, g * scale)

    return _make(x.data * scale, (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def bw(g):
        _accumulate(x, g * out)

    return _make(out, (x,), bw)


def row_norm(x, kind: str = "L2") -> Tensor:
    """Per-row vector norm over the last axis: ``L1``, ``L2`` or squared ``L2SQ``.

    The L2 subgradient at a zero vector is taken as zero.
    """
    x = as_tensor(x)
    if kind == "L1":
        out = np.abs(x.data).sum(axis=-1)

        def bw(g):
            _accumulate(x, g[..., None] * np.sign(x.data))

    elif kind == "L2SQ":
        out = (x.data * x.data).sum(axis=-1)

        def bw(g):
            _accumulate(x, 2.0 * g[..., None] * x.data)

    elif kind == "L2":
        out = np.sqrt((x.data * x.data).sum(axis=-1))

        def bw(g):
            safe = np.where(out > 0, out, 1.0)
            coef = np.where(out > 0, g / safe, 0.0)
            _accumulate(x, coef[..., None] * x.data)

    else:
        raise ValueError(f"unknown norm {kind!r}")
    return _make(out, (x,), bw)


# ---------------------------------------------------------------- reductions / shape


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _make(out, (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), bw)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        _accumulate(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), bw)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(out, tensors, bw)


def gather_rows(x, indices) -> Tensor:
    """``x[indices]`` along the first axis; backward scatter-adds."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for {x.shape[0]} rows")

    def bw(g):
        if x.requires_grad:
            _accumulate(x, scatter_add_rows(g, idx, x.shape))

    return _make(x.data[idx], (x,), bw)


def scatter_add_rows(g: np.ndarray, idx: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum rows of ``g`` into a zero array of ``shape`` at positions ``idx``."""
    flat = idx.ravel()
    rows = g.reshape(flat.size, -1)
    sel = sparse.csr_matrix(
        (np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))), shape=(shape[0], flat.size)
    )
    return np.asarray(sel @ rows).reshape(shape)


def max_over_axis(x, axis: int):
    """Return (values, argmax). Ties go to the lowest index; gradient flows only there."""
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if x.shape[axis] < 1:
        raise DimensionError("max over an empty axis")
    arg = np.argmax(x.data, axis=axis)  # first occurrence on ties
    vals = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros(x.shape, dtype=x.data.dtype)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return _make(vals, (x,), bw), arg


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise IndexError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b``. ``b`` is either 2-D (shared over a's leading dims) or has the same leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                _accumulate(b, a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as [in, out]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear expects last dim {weight.shape[0]}, got {x.shape}")
    y = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    return add(y, bias) if bias is not None else y


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - dot))

    return _make(out, (x,), bw)


softmax_axis = softmax


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm width {d} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            gx_mean = gx.mean(axis=-1, keepdims=True)
            proj = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - gx_mean - xhat * proj))

    return _make(out.astype(x.data.dtype, copy=False), (x, gain, bias), bw)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def bw(g):
        _accumulate(x, g * keep)

    return _make(x.data * keep, (x,), bw)


# ---------------------------------------------------------------- driver


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, grad=None) -> None:
    """Accumulate d(output)/d(leaf) into every reachable leaf's ``grad``."""
    if grad is None and output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    seed = np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=output.data.dtype)
    order = _topo_order(output)
    # interior nodes get fresh buffers; leaves keep accumulating across calls
    for node in order:
        if node._backward is not None:
            node.grad = None
    output.grad = seed.copy()
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node.grad = None
