"""Numba-compiled kernels for the sequential hot loops.

Signatures mirror numpy_impl; loops are written out so numba fuses them.
First call per dtype pays a jit-compilation cost.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv1d_forward(out, x, w, b):
    B, L, Din = x.shape
    Dout = w.shape[0]
    K = w.shape[2]
    pad_left = (K - 1) // 2
    for bi in range(B):
        for t in range(L):
            for o in range(Dout):
                acc = b[o]
                for j in range(K):
                    ti = t + j - pad_left
                    if 0 <= ti < L:
                        for i in range(Din):
                            acc += x[bi, ti, i] * w[o, i, j]
                out[bi, t, o] = acc


@njit(cache=True)
def conv1d_backward(gx, gw, gb, g, x, w):
    # gx/gw/gb must arrive zero-initialized
    B, L, Din = x.shape
    Dout = w.shape[0]
    K = w.shape[2]
    pad_left = (K - 1) // 2
    for bi in range(B):
        for t in range(L):
            for o in range(Dout):
                go = g[bi, t, o]
                gb[o] += go
                for j in range(K):
                    ti = t + j - pad_left
                    if 0 <= ti < L:
                        for i in range(Din):
                            gw[o, i, j] += go * x[bi, ti, i]
                            gx[bi, ti, i] += go * w[o, i, j]


@njit(cache=True)
def gru_forward(h, z, r, hc, xz, xr, xh, uz, ur, uh, h0):
    B, L, d = xz.shape
    for bi in range(B):
        hp = h0[bi].copy()
        for t in range(L):
            for i in range(d):
                az = xz[bi, t, i]
                ar = xr[bi, t, i]
                for j in range(d):
                    az += uz[i, j] * hp[j]
                    ar += ur[i, j] * hp[j]
                z[bi, t, i] = 1.0 / (1.0 + np.exp(-az))
                r[bi, t, i] = 1.0 / (1.0 + np.exp(-ar))
            for i in range(d):
                ah = xh[bi, t, i]
                for j in range(d):
                    ah += uh[i, j] * (r[bi, t, j] * hp[j])
                hc[bi, t, i] = np.tanh(ah)
            for i in range(d):
                hp[i] = (1.0 - z[bi, t, i]) * hp[i] + z[bi, t, i] * hc[bi, t, i]
                h[bi, t, i] = hp[i]


@njit(cache=True)
def gru_backward(gz, gr, ghc, gh0, g, h, z, r, hc, uz, ur, uh, h0):
    B, L, d = g.shape
    for bi in range(B):
        carry = np.zeros(d, dtype=g.dtype)
        da = np.zeros(d, dtype=g.dtype)
        nxt = np.zeros(d, dtype=g.dtype)
        for t in range(L - 1, -1, -1):
            for i in range(d):
                hp_i = h[bi, t - 1, i] if t > 0 else h0[bi, i]
                delta = g[bi, t, i] + carry[i]
                zt = z[bi, t, i]
                hct = hc[bi, t, i]
                gz[bi, t, i] = delta * (hct - hp_i) * zt * (1.0 - zt)
                ghc[bi, t, i] = delta * zt * (1.0 - hct * hct)
            for j in range(d):
                acc = 0.0
                for i in range(d):
                    acc += ghc[bi, t, i] * uh[i, j]
                da[j] = acc
            for i in range(d):
                hp_i = h[bi, t - 1, i] if t > 0 else h0[bi, i]
                rt = r[bi, t, i]
                gr[bi, t, i] = da[i] * hp_i * rt * (1.0 - rt)
            for j in range(d):
                acc = (g[bi, t, j] + carry[j]) * (1.0 - z[bi, t, j]) + da[j] * r[bi, t, j]
                for i in range(d):
                    acc += gz[bi, t, i] * uz[i, j] + gr[bi, t, i] * ur[i, j]
                nxt[j] = acc
            for j in range(d):
                carry[j] = nxt[j]
        for j in range(d):
            gh0[bi, j] = carry[j]
