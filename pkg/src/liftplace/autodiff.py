"""Minimal reverse-mode autodiff over float64 numpy arrays.

A :class:`Var` wraps an ndarray value and remembers how it was computed; the
graph is the tape. ``backward(root)`` walks the graph once in reverse
topological order and returns a dict mapping every reachable :class:`Var` to
its gradient, without mutating any node, so several losses can be
differentiated from the same forward pass (the harness does exactly that for
the total loss and the diffusion-loss gradient norm).

Design constraints this engine exists to satisfy:

* exact float64 gradients for every loss in the package, checked against
  central finite differences in the test suite;
* mixed operands: ``ndarray (op) Var`` builds a graph node treating the
  ndarray as a constant, so loss code is written once and works on plain
  arrays (returning plain values) and on Vars (returning Vars);
* ``detach`` for the stop-gradient coefficient mode of the fitting losses.

Var mirrors the small slice of the ndarray API the package needs
(arithmetic, ``@``, ``mean``/``sum`` with axis, ``reshape``, ``take``,
``abs``, ``.T``), which is what lets the loss functions stay generic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Var", "backward", "silu", "detach", "is_var"]


def _value(x) -> np.ndarray:
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation graph; ``value`` is a float64 ndarray."""

    __slots__ = ("value", "_parents", "_grad_fns")
    # Make numpy defer mixed ndarray/Var arithmetic to Var's reflected ops.
    __array_ufunc__ = None

    def __init__(self, value, _parents=(), _grad_fns=()):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = _parents
        self._grad_fns = _grad_fns

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, value={self.value!r})"

    # -- arithmetic ----------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # -- shape / reduction ----------------------------------------------
    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def take(self, indices):
        return take(self, indices)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _node(value, parents, grad_fns):
    """Build a Var if any parent participates in the graph, else plain value."""
    kept = [(p, f) for p, f in zip(parents, grad_fns) if isinstance(p, Var)]
    if not kept:
        return value
    ps, fs = zip(*kept)
    return Var(value, ps, fs)


# ---------------------------------------------------------------------------
# primitive operations (each works on Var or ndarray operands)
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = _value(a), _value(b)
    return _node(av + bv,
                 (a, b),
                 (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _value(a), _value(b)
    return _node(av - bv,
                 (a, b),
                 (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _value(a), _value(b)
    return _node(av * bv,
                 (a, b),
                 (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _value(a), _value(b)
    return _node(av / bv,
                 (a, b),
                 (lambda g: _unbroadcast(g / bv, av.shape),
                  lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))


def power(a, p):
    av = _value(a)
    p = float(p)
    return _node(av ** p, (a,), (lambda g: g * p * av ** (p - 1.0),))


def absolute(a):
    av = _value(a)
    return _node(np.abs(av), (a,), (lambda g: g * np.sign(av),))


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return _node(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g))


def transpose(a):
    av = _value(a)
    if av.ndim != 2:
        raise ValueError("transpose supports 2-D operands only")
    return _node(av.T.copy(), (a,), (lambda g: g.T,))


def reshape(a, shape):
    av = _value(a)
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    return _node(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def reduce_sum(a, axis=None, keepdims=False):
    av = _value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a,), (grad,))


def reduce_mean(a, axis=None, keepdims=False):
    av = _value(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])

    def grad(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy() / count

    return _node(out, (a,), (grad,))


def take(a, indices):
    """Gather by flat index (ndarray ``take`` semantics, axis=None)."""
    av = _value(a)
    idx = np.asarray(indices)
    out = np.take(av, idx)

    def grad(g):
        flat = np.zeros(av.size, dtype=np.float64)
        np.add.at(flat, idx.ravel(), np.asarray(g).ravel())
        return flat.reshape(av.shape)

    return _node(out, (a,), (grad,))


def silu(a):
    """x * sigmoid(x) (the smooth activation used by the toy denoisers)."""
    av = _value(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * av))  # sigmoid, overflow-free
    return _node(av * s, (a,), (lambda g: g * s * (1.0 + av * (1.0 - s)),))


def detach(a):
    """Cut the graph: return the plain value (stop-gradient)."""
    return _value(a)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(root: Var, seed=None) -> dict:
    """Gradients of ``root`` w.r.t. every Var it depends on.

    Returns a dict keyed by Var identity. ``seed`` is the upstream gradient
    (defaults to ones, i.e. d root/d root); it must match root's shape.
    """
    if not isinstance(root, Var):
        raise TypeError("backward expects a Var root")
    if seed is None:
        seed = np.ones_like(root.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != root.value.shape:
            raise ValueError(f"seed shape {seed.shape} != root shape {root.value.shape}")

    # Iterative DFS postorder; reversed it is a topological order from root.
    order: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[Var, np.ndarray] = {root: seed}
    for node in reversed(order):
        g = grads.get(node)
        if g is None:
            continue
        for parent, fn in zip(node._parents, node._grad_fns):
            pg = fn(g)
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads
