"""Minimal reverse-mode autodiff over numpy arrays.

Only the ops the policies and losses need: elementwise arithmetic with
broadcasting, matmul, reductions, indexing/gather, concat/reshape, the
usual nonlinearities, and a strided/padded conv2d.  Gradients accumulate
additively; backward() on a scalar fills every reachable grad buffer.
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float64

GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (rollout/evaluation fast path)."""
    global GRAD_ENABLED
    prev = GRAD_ENABLED
    GRAD_ENABLED = False
    try:
        yield
    finally:
        GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- basics -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- graph ------------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = _acc(self.grad, np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return gather(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(buf, g):
    if buf is None:
        return g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    buf += g
    return buf


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward):
    req = GRAD_ENABLED and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward if req else None)


# -- elementwise ------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _acc(b.grad, _unbroadcast(-g * a.data / (b.data ** 2), b.data.shape))

    return _make(out_data, (a, b), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g / a.data)

    return _make(out_data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (1.0 - out_data ** 2))

    return _make(out_data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    # stable: 0.5*(1+tanh(x/2))
    out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * (a.data > 0.0))

    return _make(out_data, (a,), backward)


def softplus(a):
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def backward(g):
        if a.requires_grad:
            sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
            a.grad = _acc(a.grad, g * sig)

    return _make(out_data, (a,), backward)


def abs_(a):
    a = as_tensor(a)
    out_data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            # subgradient at 0 defined as 0
            a.grad = _acc(a.grad, g * np.sign(a.data))

    return _make(out_data, (a,), backward)


def square(a):
    a = as_tensor(a)
    out_data = a.data ** 2

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g * 2.0 * a.data)

    return _make(out_data, (a,), backward)


def clip(a, lo, hi):
    """Clamp values; gradient is zero outside [lo, hi]."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            mask = (a.data >= lo) & (a.data <= hi)
            a.grad = _acc(a.grad, g * mask)

    return _make(out_data, (a,), backward)


# -- linear algebra / shape --------------------------------------------------


def matmul(a, b):
    """2-D @ 2-D plus the 1-D vector combinations."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 2:
                a.grad = _acc(a.grad, g @ bd.T)
            elif ad.ndim == 2:  # (n,m) @ (m,) -> (n,)
                a.grad = _acc(a.grad, np.outer(g, bd))
            else:  # (m,) @ (m,) -> scalar
                a.grad = _acc(a.grad, g * bd)
        if b.requires_grad:
            if ad.ndim == 2:
                b.grad = _acc(b.grad, ad.T @ g)
            elif bd.ndim == 2:  # (m,) @ (m,k) -> (k,)
                b.grad = _acc(b.grad, np.outer(ad, g))
            else:
                b.grad = _acc(b.grad, g * ad)

    return _make(out_data, (a, b), backward)


def transpose(a):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g.T)

    return _make(a.data.T, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def permute(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a.grad = _acc(a.grad, np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad = _acc(t.grad, piece)

    return _make(out_data, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad = _acc(t.grad, piece.reshape(t.data.shape))

    return _make(out_data, tuple(tensors), backward)


def gather(a, idx):
    """Numpy fancy indexing with scatter-add backward."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a.grad = _acc(a.grad, buf)

    return _make(out_data, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                grad = np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                grad = np.broadcast_to(gg, a.data.shape)
            a.grad = _acc(a.grad, grad.astype(a.data.dtype, copy=True))

    return _make(out_data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def log_softmax(a, axis=-1):
    """Numerically stable via a detached max shift (safe to +-1e4 logits)."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    ex = np.exp(a.data - shift)
    out_data = (a.data - shift) - np.log(ex.sum(axis=axis, keepdims=True))

    def backward(g):
        if a.requires_grad:
            sm = np.exp(out_data)
            a.grad = _acc(a.grad, g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


# -- convolution -------------------------------------------------------------


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]  # (n, c, ho, wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = x_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, :, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w] if pad else xp


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """x: (N,C,H,W), weight: (Cout,Cin,kh,kw), bias: (Cout,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin, kh, kw = weight.data.shape
    n = x.data.shape[0]
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = cols @ wmat.T  # (n*ho*wo, cout)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out_data = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        if weight.requires_grad:
            weight.grad = _acc(weight.grad, (gmat.T @ cols).reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias.grad = _acc(bias.grad, gmat.sum(axis=0))
        if x.requires_grad:
            gcols = gmat @ wmat
            x.grad = _acc(x.grad, _col2im(gcols, x.data.shape, kh, kw, stride, pad, ho, wo))

    return _make(out_data, parents, backward)
