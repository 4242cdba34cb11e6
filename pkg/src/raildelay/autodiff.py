"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough tape-based autodiff to express the forecasting network:
broadcast arithmetic, 2-D matmul, reshape/transpose, sigmoid/relu,
row softmax, a 1x3 temporal convolution, and reductions. Everything is
float64 and single-threaded, so runs are bitwise reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "reshape",
    "transpose",
    "sigmoid",
    "relu",
    "softmax_rows",
    "conv_time",
    "index0",
    "tsum",
    "backward",
]


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward_fn)


def matmul(a, b):
    """Matrix product for 1-D/2-D operands (vector cases promoted as numpy does)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise ValueError("matmul supports 1-D and 2-D operands only")
    out_data = a.data @ b.data

    def backward_fn(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:  # inner product, g scalar
            _accum(a, g * bd)
            _accum(b, g * ad)
        elif ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            _accum(a, bd @ g)
            _accum(b, np.outer(ad, g))
        elif bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)
        else:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

    return _make(out_data, (a, b), backward_fn)


def reshape(a, shape):
    a = _as_tensor(a)
    old_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def backward_fn(g):
        _accum(a, g.reshape(old_shape))

    return _make(out_data, (a,), backward_fn)


def transpose(a, axes):
    a = _as_tensor(a)
    inverse = np.argsort(axes)
    out_data = a.data.transpose(axes)

    def backward_fn(g):
        _accum(a, g.transpose(inverse))

    return _make(out_data, (a,), backward_fn)


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward_fn)


def relu(a):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out_data, (a,), backward_fn)


def softmax_rows(a):
    """Softmax along the last axis; every row of the output sums to 1."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), backward_fn)


def conv_time(x, kernel):
    """Channel-mixing convolution along the last (time) axis.

    x: (N, C_in, T), kernel: (C_out, C_in, W) with W odd; zero padding
    keeps T unchanged. Equivalent to a 2-D convolution with a 1xW kernel
    over the (node, time) plane.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    n, c_in, t = x.data.shape
    c_out, c_in_k, width = kernel.data.shape
    if c_in_k != c_in:
        raise ValueError(f"kernel expects {c_in_k} input channels, got {c_in}")
    if width % 2 != 1:
        raise ValueError("kernel width must be odd for same-padding")
    pad = width // 2
    xp = np.zeros((n, c_in, t + 2 * pad))
    xp[:, :, pad:pad + t] = x.data

    out_data = np.zeros((n, c_out, t))
    for w in range(width):
        # out[n,o,t] += sum_i kernel[o,i,w] * xp[n,i,t+w]
        out_data += np.einsum("oi,nit->not", kernel.data[:, :, w], xp[:, :, w:w + t])

    def backward_fn(g):
        if x.requires_grad:
            gx = np.zeros_like(xp)
            for w in range(width):
                gx[:, :, w:w + t] += np.einsum("oi,not->nit", kernel.data[:, :, w], g)
            _accum(x, gx[:, :, pad:pad + t])
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for w in range(width):
                gk[:, :, w] = np.einsum("not,nit->oi", g, xp[:, :, w:w + t])
            _accum(kernel, gk)

    return _make(out_data, (x, kernel), backward_fn)


def index0(a, k):
    """Select slice k along the first axis (gradient scatters back)."""
    a = _as_tensor(a)
    out_data = a.data[k]

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[k] = g
            _accum(a, full)

    return _make(out_data, (a,), backward_fn)


def tsum(a):
    """Sum of all elements, as a 0-d tensor."""
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def backward_fn(g):
        _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float64))

    return _make(out_data, (a,), backward_fn)


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root, seed=None):
    """Backpropagate from `root`, accumulating .grad on reachable tensors."""
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(_topo_order(root)):
        if node._backward is not None:
            node._backward(node.grad)
