"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the models need are implemented. Every op builds a
``Tensor`` node whose ``_backward`` closure accumulates gradients into its
parents; :func:`backward` walks the graph in reverse topological order.
Gradients carry the dtype of the forward data, so a float64 graph gets
float64 gradients (the finite-difference checks rely on this).
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast to reach g.shape from shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(t: Tensor, seed=None) -> None:
    """Run reverse-mode accumulation from t (scalar unless seed given)."""
    if seed is None:
        if t.data.size != 1:
            raise ValueError("backward() without a seed needs a scalar output")
        seed = np.ones_like(t.data)
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(t, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    t.grad = np.asarray(seed, dtype=t.data.dtype).reshape(t.data.shape).copy()
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# --------------------------------------------------------------------------
# elementwise / broadcast ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), back)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        _accum(a, -g)

    return _node(-a.data, (a,), back)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), back)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0

    def back(g):
        _accum(a, g * keep)

    return _node(a.data * keep, (a,), back)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(out_data, (a, b), back)


def conv2d(x, w, b, stride: int = 1, pad: int = 0, mask: np.ndarray | None = None) -> Tensor:
    """2-D convolution, NCHW. ``mask`` (K,K) of {0,1} zeroes weight taps.

    The mask multiplies the weights in the forward pass and the weight
    gradient in the backward pass, so masked taps stay exactly zero and
    receive no updates.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    w_eff = w.data if mask is None else w.data * mask
    k = w.data.shape[2]
    out_data = kernels.conv2d_forward(
        np.ascontiguousarray(x.data), np.ascontiguousarray(w_eff), b.data, stride, pad
    )

    def back(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _accum(x, kernels.conv2d_backward_dx(g, x.data.shape, w_eff, stride, pad))
        if w.requires_grad:
            dw = kernels.conv2d_backward_dw(g, np.ascontiguousarray(x.data), k, stride, pad)
            _accum(w, dw if mask is None else dw * mask)
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))

    return _node(out_data, (x, w, b), back)


def normalize(x, axes: tuple, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over ``axes``, per remaining
    index. Batch-statistic free whenever axis 0 is excluded."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv

    def back(g):
        m_g = g.mean(axis=axes, keepdims=True)
        m_gy = (g * y).mean(axis=axes, keepdims=True)
        _accum(x, inv * (g - m_g - y * m_gy))

    return _node(y, (x,), back)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice a[..., start:start+length, ...] along one axis."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def back(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[sl] = g
            _accum(a, ga)

    return _node(np.ascontiguousarray(a.data[sl]), (a,), back)


# --------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        _accum(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), back)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)

    def back(g):
        _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), back)


def rot90_grid(a, k: int) -> Tensor:
    """Rotate the spatial dims of an NCHW tensor by k*90 degrees CCW."""
    a = _as_tensor(a)
    k = k % 4

    def back(g):
        _accum(a, np.ascontiguousarray(np.rot90(g, -k, axes=(2, 3))))

    return _node(np.ascontiguousarray(np.rot90(a.data, k, axes=(2, 3))), (a,), back)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, np.ascontiguousarray(g[tuple(sl)]))

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def gather_rows(a, idx) -> Tensor:
    """Select rows a[idx] along axis 0 (duplicate indices allowed)."""
    a = _as_tensor(a)
    idx = np.asarray(idx)

    def back(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            _accum(a, ga)

    return _node(a.data[idx].copy(), (a,), back)


# --------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _node(out_data, (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def logsumexp(a, axis: int) -> Tensor:
    """Numerically stable log-sum-exp along one axis (axis is removed)."""
    a = _as_tensor(a)
    hi = a.data.max(axis=axis, keepdims=True)
    ex = np.exp(a.data - hi)
    denom = ex.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(np.log(denom) + hi, axis=axis)
    softmax = ex / denom

    def back(g):
        _accum(a, np.expand_dims(g, axis) * softmax)

    return _node(out_data, (a,), back)


def maxpool2d(x, k: int, stride: int, pad: int = 0) -> Tensor:
    """Max pooling over NCHW with -inf padding."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    windows = np.empty((n, c, k * k, ho, wo), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            windows[:, :, kh * k + kw] = xp[
                :, :, kh : kh + stride * ho : stride, kw : kw + stride * wo : stride
            ]
    arg = windows.argmax(axis=2)
    out_data = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]

    def back(g):
        if not x.requires_grad:
            return
        gp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
        kh = arg // k
        kw = arg % k
        oh, ow = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        rows = kh + oh * stride
        cols = kw + ow * stride
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(gp, (ni, ci, rows, cols), g)
        _accum(x, gp[:, :, pad : pad + h, pad : pad + w] if pad else gp)

    return _node(out_data, (x,), back)
