"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built define-by-run: each operation returns a new ``Value``
holding the forward result plus a closure that routes the output gradient
back to the operands. ``backward`` replays the closures once, in reverse
topological order. Graph construction and backward are single-threaded
per graph; leaf values may be shared across graphs, in which case their
gradients accumulate until explicitly cleared.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, GraphError

_recording = True


@contextmanager
def no_grad():
    """Suspend graph recording: operations compute forward values only."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Value:
    """A float64 array node in a computation graph.

    ``data`` holds the forward value; ``grad`` accumulates d(loss)/d(self)
    during ``backward`` and reads as zeros until populated. Python object
    identity doubles as the node id, so a leaf parameter reused across
    forward passes keeps a stable identity within a training step.
    """

    __slots__ = ("data", "_grad", "_parents", "_backprop")

    def __init__(self, data, _parents=(), _backprop=None):
        if not (isinstance(data, np.ndarray) and data.dtype == np.float64):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self._grad = None
        self._parents = _parents
        self._backprop = _backprop

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        """Accumulated gradient; zeros when no backward pass has reached this node."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @property
    def grad_populated(self):
        return self._grad is not None

    def zero_grad(self):
        self._grad = np.zeros_like(self.data)

    def clear_grad(self):
        self._grad = None

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar value of shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.shape}, data={self.data!r})"

    # Operator sugar used by the model code. Numbers combine as constants.
    def __add__(self, other):
        if isinstance(other, Value):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Value):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Value):
            return add(self, scale(other, -1.0))
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))


def _node(data, parents, backprop):
    # Fast-path constructor: ops always hand over fresh float64 arrays.
    v = Value.__new__(Value)
    v.data = data
    v._grad = None
    if _recording:
        v._parents = parents
        v._backprop = backprop
    else:
        v._parents = ()
        v._backprop = None
    return v


def _acc(value, g):
    if value._grad is None:
        value._grad = np.array(g, dtype=np.float64)
    else:
        value._grad += g


def add(a, b):
    if a.shape != b.shape:
        raise GraphError(f"add: operand shapes {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backprop(g):
        _acc(a, g)
        _acc(b, g)

    return _node(out_data, (a, b), backprop)


def mul(a, b):
    if a.shape != b.shape:
        raise GraphError(f"mul: operand shapes {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def backprop(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _node(out_data, (a, b), backprop)


def matmul(a, b):
    """Matrix product for (m,n)@(n,p), (m,n)@(n,) and (n,)@(n,p) operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise GraphError(f"matmul: inner dims {a.shape} vs {b.shape}")
        out_data = ad @ bd

        def backprop(g):
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)

    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise GraphError(f"matmul: inner dims {a.shape} vs {b.shape}")
        out_data = ad @ bd

        def backprop(g):
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))

    elif ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise GraphError(f"matmul: inner dims {a.shape} vs {b.shape}")
        out_data = ad @ bd

        def backprop(g):
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)

    else:
        raise GraphError(f"matmul: unsupported operand ranks {a.shape} vs {b.shape}")
    return _node(out_data, (a, b), backprop)


def affine(w, x, b):
    """Fused w @ x + b for a 2-D weight, 1-D input and 1-D bias."""
    wd, xd, bd = w.data, x.data, b.data
    if wd.ndim != 2 or xd.ndim != 1 or bd.ndim != 1:
        raise GraphError(f"affine: expected 2-D, 1-D, 1-D, got {w.shape}, {x.shape}, {b.shape}")
    if wd.shape[1] != xd.shape[0] or wd.shape[0] != bd.shape[0]:
        raise GraphError(f"affine: shapes do not conform: {w.shape}, {x.shape}, {b.shape}")
    out_data = wd @ xd + bd

    def backprop(g):
        _acc(w, np.outer(g, xd))
        _acc(x, wd.T @ g)
        _acc(b, g)

    return _node(out_data, (w, x, b), backprop)


def concat(parts, axis=-1):
    """Concatenate along the last axis."""
    parts = tuple(parts)
    if not parts:
        raise GraphError("concat: no operands")
    if len(parts) == 2 and parts[0].data.ndim == 1 and parts[1].data.ndim == 1:
        a, b = parts
        n = a.data.shape[0]
        out_data = np.concatenate((a.data, b.data))

        def backprop(g):
            _acc(a, g[:n])
            _acc(b, g[n:])

        return _node(out_data, parts, backprop)
    ndim = parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise GraphError(f"concat: mixed ranks {parts[0].shape} vs {p.shape}")
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    splits = np.cumsum([p.data.shape[-1] for p in parts])[:-1]

    def backprop(g):
        for p, piece in zip(parts, np.split(g, splits, axis=-1)):
            _acc(p, piece)

    return _node(out_data, parts, backprop)


def sigmoid(a):
    # exp(-log(1 + exp(-x))) is stable for any sign of x.
    out_data = np.exp(-np.logaddexp(0.0, -a.data))

    def backprop(g):
        _acc(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backprop)


def tanh(a):
    out_data = np.tanh(a.data)

    def backprop(g):
        _acc(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backprop)


def relu(a):
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0.0)

    def backprop(g):
        # Subgradient 0 at exactly 0.
        _acc(a, g * mask)

    return _node(out_data, (a,), backprop)


def softmax(a):
    """Softmax over the last axis, computed with max subtraction."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backprop(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _acc(a, out_data * (g - inner))

    return _node(out_data, (a,), backprop)


def log_softmax(a):
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backprop(g):
        _acc(a, g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

    return _node(out_data, (a,), backprop)


def lookup(table, index):
    """Select one row of a 2-D table (embedding lookup)."""
    if table.data.ndim != 2:
        raise GraphError(f"lookup: table must be 2-D, got shape {table.shape}")
    rows = table.data.shape[0]
    index = int(index)
    if not 0 <= index < rows:
        raise IndexError(f"lookup: row {index} out of range for table with {rows} rows")
    out_data = table.data[index].copy()

    def backprop(g):
        if table._grad is None:
            table._grad = np.zeros_like(table.data)
        table._grad[index] += g

    return _node(out_data, (table,), backprop)


def pick(vec, index):
    """Select one element of a 1-D value as a scalar."""
    if vec.data.ndim != 1:
        raise GraphError(f"pick: operand must be 1-D, got shape {vec.shape}")
    n = vec.data.shape[0]
    index = int(index)
    if not 0 <= index < n:
        raise IndexError(f"pick: element {index} out of range for length {n}")
    out_data = np.asarray(vec.data[index])

    def backprop(g):
        if vec._grad is None:
            vec._grad = np.zeros_like(vec.data)
        vec._grad[index] += g

    return _node(out_data, (vec,), backprop)


def scale(a, s):
    s = float(s)
    out_data = a.data * s

    def backprop(g):
        _acc(a, g * s)

    return _node(out_data, (a,), backprop)


def shift(a, s):
    s = float(s)
    out_data = a.data + s

    def backprop(g):
        _acc(a, g)

    return _node(out_data, (a,), backprop)


def exp(a):
    out_data = np.exp(a.data)

    def backprop(g):
        _acc(a, g * out_data)

    return _node(out_data, (a,), backprop)


def vsum(a):
    """Sum all elements into a scalar."""
    out_data = np.asarray(a.data.sum())

    def backprop(g):
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _node(out_data, (a,), backprop)


def vmean(a):
    out_data = np.asarray(a.data.mean())
    inv = 1.0 / a.data.size

    def backprop(g):
        _acc(a, np.broadcast_to(g * inv, a.data.shape))

    return _node(out_data, (a,), backprop)


def backward(loss):
    """Populate gradients of everything ``loss`` depends on.

    ``loss`` must be scalar. Every node reachable from it receives
    grad = d(loss)/d(node), accumulated on top of any gradient already
    present (leaves shared between graphs sum their contributions).
    """
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    _acc(loss, np.asarray(1.0))
    for node in reversed(topo):
        if node._backprop is not None and node._grad is not None:
            node._backprop(node._grad)
