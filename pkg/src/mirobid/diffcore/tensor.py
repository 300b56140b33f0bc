"""Tape-based reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the operation that produced it together with a
closure that maps the output gradient onto its parents.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order.  Inside :func:`no_grad` nothing is recorded, which is the fast path
used for rollouts.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED:
        parents = tuple(p for p in parents if p.requires_grad)
        if parents:
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw)


def power(a, p):
    a = as_tensor(a)
    p = float(p)

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            _accum(b, a2.T @ g.reshape(-1, b.shape[1]))

    return _make(a.data @ b.data, (a, b), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _make(out, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / out)

    return _make(out, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bw(g):
        _accum(a, g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))

    return _make(out, (a,), bw)


def clip(a, lo, hi):
    """Clamp; the gradient is zero where the clamp is active."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), bw)


def getitem(a, idx):
    a = as_tensor(a)

    basic = not any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def stop_gradient(a):
    return Tensor(as_tensor(a).data)


def forward_backward(fn, inputs, params, wrt_inputs=()):
    """Evaluate a scalar loss and its reverse-mode gradients.

    ``fn(P, X)`` receives leaf tensors for every parameter (``P``) and every
    input (``X``).  Gradients are returned for all parameters and for the
    inputs named in ``wrt_inputs``.
    """
    P = params.leaves()
    X = {k: Tensor(v, requires_grad=k in wrt_inputs) for k, v in inputs.items()}
    out = fn(P, X)
    if out.data.size != 1:
        raise ValueError("forward_backward expects a scalar loss")
    out.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    for k in wrt_inputs:
        g = X[k].grad
        grads[k] = g if g is not None else np.zeros_like(X[k].data)
    return float(out.data), grads
