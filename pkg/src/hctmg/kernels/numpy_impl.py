"""Pure-numpy reference kernels.

Same fill-style signatures as the numba implementations: callers allocate
output buffers, kernels fill them. Shapes use batch-first layout
[batch, time, feature]; recurrent weight matrices are [hidden, hidden]
applied as ``h_prev @ U.T``.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def conv1d_forward(out, x, w, b):
    """Same-padded 1-D convolution over time. out/x: [B,L,*], w: [Dout,Din,K]."""
    B, L, _ = x.shape
    K = w.shape[2]
    pad_left = (K - 1) // 2
    xp = np.zeros((B, L + K - 1, x.shape[2]), dtype=x.dtype)
    xp[:, pad_left:pad_left + L] = x
    acc = np.zeros_like(out)
    for j in range(K):
        acc += xp[:, j:j + L] @ w[:, :, j].T
    out[:] = acc + b


def conv1d_backward(gx, gw, gb, g, x, w):
    """Gradients of conv1d_forward. g: [B,L,Dout] upstream gradient."""
    B, L, _ = x.shape
    K = w.shape[2]
    pad_left = (K - 1) // 2
    xp = np.zeros((B, L + K - 1, x.shape[2]), dtype=x.dtype)
    xp[:, pad_left:pad_left + L] = x
    gxp = np.zeros_like(xp)
    for j in range(K):
        gw[:, :, j] = np.einsum("bto,bti->oi", g, xp[:, j:j + L])
        gxp[:, j:j + L] += g @ w[:, :, j]
    gx[:] = gxp[:, pad_left:pad_left + L]
    gb[:] = g.sum(axis=(0, 1))


def gru_forward(h, z, r, hc, xz, xr, xh, uz, ur, uh, h0):
    """GRU recurrence given precomputed input projections xz/xr/xh [B,L,d].

    z = sigmoid(xz + h_prev @ Uz.T)
    r = sigmoid(xr + h_prev @ Ur.T)
    hc = tanh(xh + (r * h_prev) @ Uh.T)
    h  = (1 - z) * h_prev + z * hc
    """
    L = xz.shape[1]
    hp = h0
    for t in range(L):
        zt = _sigmoid(xz[:, t] + hp @ uz.T)
        rt = _sigmoid(xr[:, t] + hp @ ur.T)
        hct = np.tanh(xh[:, t] + (rt * hp) @ uh.T)
        hp = (1.0 - zt) * hp + zt * hct
        z[:, t] = zt
        r[:, t] = rt
        hc[:, t] = hct
        h[:, t] = hp


def gru_backward(gz, gr, ghc, gh0, g, h, z, r, hc, uz, ur, uh, h0):
    """Backward through time for gru_forward.

    Fills pre-activation gate gradients gz/gr/ghc [B,L,d] and gh0 [B,d];
    weight/input gradients are assembled by the caller from these.
    """
    B, L, d = g.shape
    carry = np.zeros((B, d), dtype=g.dtype)
    for t in range(L - 1, -1, -1):
        hp = h[:, t - 1] if t > 0 else h0
        delta = g[:, t] + carry
        zt = z[:, t]
        rt = r[:, t]
        hct = hc[:, t]
        gz_t = delta * (hct - hp) * zt * (1.0 - zt)
        ghc_t = delta * zt * (1.0 - hct * hct)
        da = ghc_t @ uh
        gr_t = da * hp * rt * (1.0 - rt)
        carry = delta * (1.0 - zt) + da * rt + gz_t @ uz + gr_t @ ur
        gz[:, t] = gz_t
        gr[:, t] = gr_t
        ghc[:, t] = ghc_t
    gh0[:] = carry
