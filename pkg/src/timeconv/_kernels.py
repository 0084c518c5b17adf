"""Compiled loops for the memory-bound layers (depthwise conv, max pooling).

Each kernel makes a single pass over its operands; the equivalent numpy
formulations need one temporary per kernel offset.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def depthwise_forward(xp, w, sh, sw, oh, ow):
    batch, chans = xp.shape[0], xp.shape[1]
    kh, kw = w.shape[1], w.shape[2]
    out = np.zeros((batch, chans, oh, ow), dtype=xp.dtype)
    for b in range(batch):
        for c in range(chans):
            for i in range(kh):
                for j in range(kw):
                    wv = w[c, i, j]
                    for y in range(oh):
                        row = y * sh + i
                        for x in range(ow):
                            out[b, c, y, x] += xp[b, c, row, x * sw + j] * wv
    return out


@numba.njit(cache=True)
def depthwise_backward(xp, w, grad, sh, sw):
    batch, chans, oh, ow = grad.shape
    kh, kw = w.shape[1], w.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.zeros(w.shape, dtype=np.float64)
    for b in range(batch):
        for c in range(chans):
            for i in range(kh):
                for j in range(kw):
                    wv = w[c, i, j]
                    acc = 0.0
                    for y in range(oh):
                        row = y * sh + i
                        for x in range(ow):
                            g = grad[b, c, y, x]
                            acc += g * xp[b, c, row, x * sw + j]
                            dxp[b, c, row, x * sw + j] += g * wv
                    dw[c, i, j] += acc
    return dxp, dw


@numba.njit(cache=True)
def maxpool_forward(x, kh, kw, sh, sw, pt, pl, oh, ow):
    """Max over each window; out-of-bounds positions are ignored (-inf padding)."""
    batch, chans, h, w = x.shape
    out = np.empty((batch, chans, oh, ow), dtype=x.dtype)
    arg = np.empty((batch, chans, oh, ow), dtype=np.int64)
    for b in range(batch):
        for c in range(chans):
            for y in range(oh):
                for xo in range(ow):
                    best = -np.inf
                    where = -1
                    for i in range(kh):
                        r = y * sh + i - pt
                        if r < 0 or r >= h:
                            continue
                        for j in range(kw):
                            q = xo * sw + j - pl
                            if q < 0 or q >= w:
                                continue
                            v = x[b, c, r, q]
                            if v > best or where < 0:
                                best = v
                                where = r * w + q
                    out[b, c, y, xo] = best
                    arg[b, c, y, xo] = where
    return out, arg


@numba.njit(cache=True)
def maxpool_backward(grad, arg, h, w):
    batch, chans, oh, ow = grad.shape
    dx = np.zeros((batch, chans, h, w), dtype=grad.dtype)
    for b in range(batch):
        for c in range(chans):
            for y in range(oh):
                for xo in range(ow):
                    k = arg[b, c, y, xo]
                    dx[b, c, k // w, k % w] += grad[b, c, y, xo]
    return dx
