"""Reverse-mode automatic differentiation over small dense float64 tensors.

Every forward operation records its parents and per-parent gradient
functions on a dynamic graph; ``backward`` walks the graph in reverse
topological order and accumulates gradients into ``Tensor.grad``.  The op
set is deliberately minimal: exactly what the linker's scorers, policy
network and training losses need.  No GPU, no generic dtype support.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DiagonalBilinear",
    "ShapeError",
    "as_tensor",
    "parameter",
    "no_grad",
    "grad_enabled",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "tsum",
    "tmax",
    "relu",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "log_softmax",
    "row_softmax",
    "concat",
    "stack",
    "gather",
    "gather_rows",
    "cols",
    "hstack",
    "item",
    "bilinear_score",
]


class ShapeError(ValueError):
    """Raised when tensor shapes cannot be combined."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure numpy forward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``grad`` is lazily allocated by ``backward`` and accumulates across
    repeated backward calls until ``zero_grad`` resets it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def _result(data, parents: Sequence[Tensor], grad_fns) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fns = tuple(grad_fns)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a: Tensor, b: Tensor, fwd, ga_fn, gb_fn) -> Tensor:
    try:
        data = fwd(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from err
    return _result(
        data,
        (a, b),
        (
            lambda g: _unbroadcast(ga_fn(g), a.shape),
            lambda g: _unbroadcast(gb_fn(g), b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# elementwise ops (numpy broadcasting, gradients unbroadcast)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _binary(a, b, np.multiply, lambda g: g * bd, lambda g: g * ad)


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _binary(a, b, np.divide, lambda g: g / bd, lambda g: -g * ad / (bd * bd))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), (lambda g: -g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum propagates NaN, so poisoned values surface in the loss
    return _result(np.maximum(a.data, 0.0), (a,), (lambda g: g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), (lambda g: g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), (lambda g: g * 0.5 / out,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError("matmul requires 1-d or 2-d operands")
    try:
        data = np.matmul(ad, bd)
    except ValueError as err:
        raise ShapeError(f"matmul shapes {ad.shape} @ {bd.shape}") from err

    if ad.ndim == 2 and bd.ndim == 2:
        ga = lambda g: g @ bd.T
        gb = lambda g: ad.T @ g
    elif ad.ndim == 1 and bd.ndim == 2:
        ga = lambda g: g @ bd.T
        gb = lambda g: np.outer(ad, g)
    elif ad.ndim == 2 and bd.ndim == 1:
        ga = lambda g: np.outer(g, bd)
        gb = lambda g: ad.T @ g
    else:  # 1-d dot 1-d -> scalar
        ga = lambda g: g * bd
        gb = lambda g: g * ad
    return _result(data, (a, b), (ga, gb))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _result(a.data.T.copy(), (a,), (lambda g: g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _result(a.data.reshape(shape), (a,), (lambda g: g.reshape(orig),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    ad = a.data
    if axis is None:
        return _result(ad.sum(), (a,), (lambda g: np.broadcast_to(g, ad.shape).copy(),))

    def back(g):
        return np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy()

    return _result(ad.sum(axis=axis), (a,), (back,))


def tmax(a: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; ties route the gradient to the first argmax."""
    ad = a.data
    if ad.size == 0:
        raise ShapeError("max of empty tensor")
    if axis is None:
        idx = int(np.argmax(ad))

        def back(g):
            out = np.zeros_like(ad)
            out.flat[idx] = g
            return out

        return _result(ad.max(), (a,), (back,))

    arg = np.expand_dims(np.argmax(ad, axis=axis), axis)

    def back_ax(g):
        out = np.zeros_like(ad)
        np.put_along_axis(out, arg, np.expand_dims(g, axis), axis=axis)
        return out

    return _result(ad.max(axis=axis), (a,), (back_ax,))


# ---------------------------------------------------------------------------
# softmax family (numerically stabilised by max subtraction)
# ---------------------------------------------------------------------------

def _softmax1d(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError("softmax expects a non-empty vector")
    y = _softmax1d(a.data)
    return _result(y, (a,), (lambda g: y * (g - float(g @ y)),))


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError("log_softmax expects a non-empty vector")
    v = a.data
    shifted = v - v.max()
    lse = np.log(np.exp(shifted).sum())
    y = shifted - lse
    sm = np.exp(y)
    return _result(y, (a,), (lambda g: g - sm * g.sum(),))


def row_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[1] == 0:
        raise ShapeError("row_softmax expects a matrix with nonzero width")
    v = a.data
    e = np.exp(v - v.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    return _result(y, (a,), (lambda g: y * (g - (g * y).sum(axis=1, keepdims=True)),))


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("concat expects a non-empty list of vectors")
    data = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.size for p in parts])

    grad_fns = []
    for i in range(len(parts)):
        lo, hi = offsets[i], offsets[i + 1]
        grad_fns.append(lambda g, lo=lo, hi=hi: g[lo:hi])
    return _result(data, parts, grad_fns)


def stack(rows: Sequence[Tensor]) -> Tensor:
    rows = [as_tensor(r) for r in rows]
    if not rows or any(r.data.ndim != 1 for r in rows):
        raise ShapeError("stack expects a non-empty list of vectors")
    data = np.stack([r.data for r in rows])
    grad_fns = [lambda g, i=i: g[i] for i in range(len(rows))]
    return _result(data, rows, grad_fns)


def gather(a: Tensor, idx) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError("gather expects a vector")
    idx = np.asarray(idx, dtype=np.intp)
    ad = a.data

    def back(g):
        out = np.zeros_like(ad)
        np.add.at(out, idx, g)
        return out

    return _result(ad[idx], (a,), (back,))


def gather_rows(a: Tensor, idx) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("gather_rows expects a matrix")
    idx = np.asarray(idx, dtype=np.intp)
    ad = a.data

    def back(g):
        out = np.zeros_like(ad)
        np.add.at(out, idx, g)
        return out

    return _result(ad[idx], (a,), (back,))


def cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("cols expects a matrix")
    ad = a.data

    def back(g):
        out = np.zeros_like(ad)
        out[:, lo:hi] = g
        return out

    return _result(ad[:, lo:hi].copy(), (a,), (back,))


def hstack(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts or any(p.data.ndim != 2 for p in parts):
        raise ShapeError("hstack expects matrices")
    data = np.hstack([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])
    grad_fns = []
    for i in range(len(parts)):
        lo, hi = offsets[i], offsets[i + 1]
        grad_fns.append(lambda g, lo=lo, hi=hi: g[:, lo:hi])
    return _result(data, parts, grad_fns)


def item(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError("item expects a vector")
    ad = a.data

    def back(g):
        out = np.zeros_like(ad)
        out[i] = g
        return out

    return _result(ad[i], (a,), (back,))


# ---------------------------------------------------------------------------
# diagonal bilinear forms
# ---------------------------------------------------------------------------

@dataclass
class DiagonalBilinear:
    """A d x d matrix stored as its diagonal: score(x, y) = sum_i x_i d_i y_i."""

    diag: Tensor

    @classmethod
    def ones(cls, dim: int) -> "DiagonalBilinear":
        return cls(parameter(np.ones(dim)))

    @property
    def dim(self) -> int:
        return self.diag.data.size

    def score(self, x: Tensor, y: Tensor) -> Tensor:
        return bilinear_score(x, self, y)


def bilinear_score(x: Tensor, b: DiagonalBilinear, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.data.shape != y.data.shape or x.data.shape != b.diag.data.shape:
        raise ShapeError(
            f"bilinear_score dims differ: x{x.shape} diag{b.diag.shape} y{y.shape}"
        )
    return tsum(mul(mul(x, b.diag), y))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every node reaching loss.

    Repeated calls without ``zero_grad`` keep accumulating.
    """
    if loss.data.shape != ():
        raise ShapeError("backward expects a scalar loss")
    if not loss.requires_grad:
        return

    # iterative post-order topological sort over grad-requiring nodes
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        for parent, fn in zip(node._parents, node._grad_fns):
            if not parent.requires_grad:
                continue
            contrib = fn(g)
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + contrib
            else:
                flowing[key] = contrib


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
