"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

Every differentiable op records a node holding its parents and a backward
closure. Node ids increase monotonically, so sorting the reachable nodes by id
gives a valid topological order; :func:`backward` walks that order in reverse
exactly once and then releases the graph.

Broadcasting is limited to scalar-with-tensor. Anything else must be made
explicit with :func:`broadcast_to` or :func:`reshape`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float, np.floating]
Axis = Union[None, int, Sequence[int]]

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_grad_state = threading.local()  # per thread, so pooled no_grad blocks cannot interleave


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf from its inputs."""


class GraphConsumedError(RuntimeError):
    """Raised when backward runs over a graph that was already released."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "_consumed", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._id = next(_ids)
        self._consumed = False
        self._op = "leaf"

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def max(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return max(self, axis, keepdims)[0]

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result, recording a graph node when any parent needs grad.

    ``backward_fn`` maps the upstream gradient to a tuple with one entry per
    parent (``None`` for parents that receive nothing).
    """
    _check_finite(data, op)
    out = Tensor(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``root``.

    Gradients accumulate additively into existing ``.grad`` arrays. The graph
    is released afterwards; a second call through it raises
    :class:`GraphConsumedError`.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise GraphConsumedError("backward already ran through this graph")
    if not root.requires_grad:
        raise ValueError("root does not depend on any tensor requiring grad")

    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        if node._consumed:
            raise GraphConsumedError("backward already ran through part of this graph")
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg

    for node in nodes.values():
        if node._backward is not None:
            node._consumed = True
            node._parents = ()
            node._backward = None


# -- elementwise ---------------------------------------------------------------


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor, bool, bool]:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype if isinstance(b, Tensor) else DEFAULT_DTYPE)
    b = _as_tensor(b, a.dtype)
    if a.shape == b.shape:
        return a, b, False, False
    if b.ndim == 0:
        return a, b, False, True
    if a.ndim == 0:
        return a, b, True, False
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only scalar broadcasting)")


def _fit(g: np.ndarray, scalar_side: bool) -> np.ndarray:
    return np.asarray(g.sum(), dtype=g.dtype) if scalar_side else g


def add(a, b) -> Tensor:
    a, b, sa, sb = _binary_operands(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (_fit(g, sa), _fit(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b, sa, sb = _binary_operands(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (_fit(g, sa), _fit(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b, sa, sb = _binary_operands(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (_fit(g * bd, sa), _fit(g * ad, sb)), "mul")


def div(a, b) -> Tensor:
    a, b, sa, sb = _binary_operands(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise ZeroDivisionError("div: divisor contains zeros")
    out = ad / bd

    def bw(g):
        return _fit(g / bd, sa), _fit(-g * out / bd, sb)

    return make_node(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise NonFiniteError("log: non-positive input")
    return make_node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def abs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt: negative input")
    out = np.sqrt(a.data)

    def bw(g):
        if np.any(out == 0):
            raise ZeroDivisionError("sqrt: gradient undefined at zero")
        return (g / (2 * out),)

    return make_node(out, (a,), bw, "sqrt")


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def arccos(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(np.abs(ad) >= 1):
        raise NonFiniteError("arccos: input must lie strictly inside (-1, 1)")
    return make_node(np.arccos(ad), (a,), lambda g: (-g / np.sqrt(1 - ad * ad),), "arccos")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make_node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- reductions ----------------------------------------------------------------


def _norm_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axis}")
    return tuple(sorted(out))


def _expand_back(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return make_node(
        np.asarray(out, dtype=a.dtype),
        (a,),
        lambda g: (np.array(_expand_back(g, shape, axes, keepdims)),),
        "sum",
    )


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape
    out = np.sum(a.data, axis=axes, keepdims=keepdims) / count
    return make_node(
        np.asarray(out, dtype=a.dtype),
        (a,),
        lambda g: (np.array(_expand_back(g, shape, axes, keepdims)) / count,),
        "mean",
    )


def max(a: Tensor, axis: Axis = None, keepdims: bool = False) -> tuple[Tensor, np.ndarray]:
    """Maximum over ``axis`` together with the argmax.

    Indices are flat positions within the reduced axes (row-major); with
    ``axis=None`` they are unravelled into a coordinate tuple. Ties resolve
    to the lowest row-major index, and the backward pass routes the whole
    gradient to that single position.
    """
    axes = _norm_axes(axis, a.ndim)
    keep = [ax for ax in range(a.ndim) if ax not in axes]
    moved = np.transpose(a.data, keep + list(axes))
    kept_shape = moved.shape[: len(keep)]
    flat = moved.reshape(kept_shape + (-1,))
    idx = np.argmax(flat, axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        vals = np.expand_dims(vals, axes) if axes else vals
    shape = a.shape
    perm = keep + list(axes)
    inv = np.argsort(perm)

    def bw(g):
        g = np.asarray(g)
        if keepdims and axes:
            g = np.squeeze(g, axis=axes)
        gflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        return (np.transpose(gflat.reshape(moved.shape), inv).reshape(shape),)

    out = make_node(np.asarray(vals, dtype=a.dtype), (a,), bw, "max")
    if axis is None:
        reduced = tuple(a.shape[ax] for ax in axes)
        return out, tuple(int(i) for i in np.unravel_index(int(idx), reduced)) if reduced else ()
    return out, idx


# -- shape / linear algebra ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast (the only non-scalar broadcasting the library does)."""
    shape = tuple(shape)
    lead = len(shape) - a.ndim
    if lead < 0:
        raise ValueError(f"cannot broadcast {a.shape} to {shape}")
    src = (1,) * lead + a.shape
    for s, t in zip(src, shape):
        if s != t and s != 1:
            raise ValueError(f"cannot broadcast {a.shape} to {shape}")
    summed = tuple(i for i, (s, t) in enumerate(zip(src, shape)) if s == 1 and t != 1)
    old = a.shape

    def bw(g):
        g = g.sum(axis=summed, keepdims=True) if summed else g
        return (g.reshape(old),)

    return make_node(np.array(np.broadcast_to(a.data, shape)), (a,), bw, "broadcast_to")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    dtype = a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(a.data[index]), (a,), bw, "getitem")


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Rows scaled to unit L2 norm along ``axis``; zero rows are an error."""
    sq = sum(a * a, axis=axis, keepdims=True)
    if np.any(sq.data == 0):
        raise ZeroDivisionError("l2_normalize: zero-norm vector")
    return a / broadcast_to(sqrt(sq), a.shape)
