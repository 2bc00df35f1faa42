"""Pure-numpy im2col convolution kernels (fallback backend).

Layout is NCHW for activations and (out, in, k, k) for weights, zero
padding, square kernels. These are the reference implementations the
numba backend is checked against.
"""

import numpy as np


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold x (N,C,H,W) into columns (N,C,k,k,Ho,Wo)."""
    n, c, h, w = x.shape
    ho = _out_size(h, k, stride, pad)
    wo = _out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            cols[:, :, kh, kw] = x[
                :, :, kh : kh + stride * ho : stride, kw : kw + stride * wo : stride
            ]
    return cols


def conv2d_forward(x, w, b, stride, pad):
    """x (N,C,H,W), w (Co,C,K,K), b (Co,) -> (N,Co,Ho,Wo)."""
    cols = _im2col(x, w.shape[2], stride, pad)
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # (N,Ho,Wo,Co)
    out += b
    return np.ascontiguousarray(np.moveaxis(out, 3, 1))


def conv2d_backward_dx(g, x_shape, w, stride, pad):
    """Gradient w.r.t. the input. g (N,Co,Ho,Wo) -> (N,C,H,W)."""
    n, c, h, w_in = x_shape
    k = w.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    # (N,Ho,Wo,C,K,K)
    dcols = np.tensordot(np.moveaxis(g, 1, 3), w, axes=([3], [0]))
    dxp = np.zeros((n, c, h + 2 * pad, w_in + 2 * pad), dtype=g.dtype)
    for kh in range(k):
        for kw in range(k):
            dxp[
                :, :, kh : kh + stride * ho : stride, kw : kw + stride * wo : stride
            ] += np.moveaxis(dcols[:, :, :, :, kh, kw], 3, 1)
    if pad:
        dxp = dxp[:, :, pad : pad + h, pad : pad + w_in]
    return np.ascontiguousarray(dxp)


def conv2d_backward_dw(g, x, k, stride, pad):
    """Gradient w.r.t. the weights. -> (Co,C,K,K)."""
    cols = _im2col(x, k, stride, pad)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
