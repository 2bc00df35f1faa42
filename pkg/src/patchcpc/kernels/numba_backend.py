"""Numba-jitted direct convolution kernels (fast path).

Same contracts as :mod:`patchcpc.kernels.numpy_backend`. The input is
zero-padded into a scratch array first so every inner loop runs over its
full range with no bounds branches; LLVM then vectorizes the hot loops.
Zero weight taps are skipped at the tap level, which roughly halves the
work under the causal masks. Summation order is fixed, so results are
deterministic run to run (they may differ from the numpy backend in
float32 low-order bits because that backend sums in a different order).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad(x, pad):
    n, c, h, w = x.shape
    if pad == 0:
        return x.copy()
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


@njit(cache=True)
def _conv2d_forward(x, w, b, stride, pad):
    n, c, h, wi = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wi + 2 * pad - k) // stride + 1
    xp = _pad(x, pad)
    out = np.empty((n, co, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for coi in range(co):
            plane = out[ni, coi]
            plane[:, :] = b[coi]
            for ci in range(c):
                for kh in range(k):
                    for kw in range(k):
                        wv = w[coi, ci, kh, kw]
                        if wv == 0.0:
                            continue
                        if stride == 1:
                            for hoi in range(ho):
                                xrow = xp[ni, ci, hoi + kh]
                                orow = plane[hoi]
                                for woi in range(wo):
                                    orow[woi] += wv * xrow[woi + kw]
                        else:
                            for hoi in range(ho):
                                xrow = xp[ni, ci, hoi * stride + kh]
                                orow = plane[hoi]
                                for woi in range(wo):
                                    orow[woi] += wv * xrow[woi * stride + kw]
    return out


@njit(cache=True)
def _conv2d_backward_dx(g, n, c, h, wi, w, stride, pad):
    co, _, k, _ = w.shape
    ho, wo = g.shape[2], g.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, wi + 2 * pad), dtype=g.dtype)
    for ni in range(n):
        for ci in range(c):
            for coi in range(co):
                for kh in range(k):
                    for kw in range(k):
                        wv = w[coi, ci, kh, kw]
                        if wv == 0.0:
                            continue
                        if stride == 1:
                            for hoi in range(ho):
                                grow = g[ni, coi, hoi]
                                drow = dxp[ni, ci, hoi + kh]
                                for woi in range(wo):
                                    drow[woi + kw] += wv * grow[woi]
                        else:
                            for hoi in range(ho):
                                grow = g[ni, coi, hoi]
                                drow = dxp[ni, ci, hoi * stride + kh]
                                for woi in range(wo):
                                    drow[woi * stride + kw] += wv * grow[woi]
    if pad == 0:
        return dxp
    return dxp[:, :, pad : pad + h, pad : pad + wi].copy()


@njit(cache=True)
def _conv2d_backward_dw(g, x, co, c, k, stride, pad):
    n, _, h, wi = x.shape
    ho, wo = g.shape[2], g.shape[3]
    xp = _pad(x, pad)
    dw = np.zeros((co, c, k, k), dtype=g.dtype)
    for coi in range(co):
        for ci in range(c):
            for kh in range(k):
                for kw in range(k):
                    acc = dw[coi, ci, kh, kw]  # zero of the right dtype
                    for ni in range(n):
                        if stride == 1:
                            for hoi in range(ho):
                                grow = g[ni, coi, hoi]
                                xrow = xp[ni, ci, hoi + kh]
                                for woi in range(wo):
                                    acc += grow[woi] * xrow[woi + kw]
                        else:
                            for hoi in range(ho):
                                grow = g[ni, coi, hoi]
                                xrow = xp[ni, ci, hoi * stride + kh]
                                for woi in range(wo):
                                    acc += grow[woi] * xrow[woi * stride + kw]
                    dw[coi, ci, kh, kw] = acc
    return dw


def conv2d_forward(x, w, b, stride, pad):
    return _conv2d_forward(x, w, b, stride, pad)


def conv2d_backward_dx(g, x_shape, w, stride, pad):
    n, c, h, wi = x_shape
    return _conv2d_backward_dx(g, n, c, h, wi, w, stride, pad)


def conv2d_backward_dw(g, x, k, stride, pad):
    co = g.shape[1]
    c = x.shape[1]
    return _conv2d_backward_dw(g, x, co, c, k, stride, pad)
