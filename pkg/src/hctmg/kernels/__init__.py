"""Hot-loop kernels with selectable backend.

``HCTMG_BACKEND=numpy`` forces the pure-numpy path; ``HCTMG_BACKEND=numba``
requires numba and fails loudly if it is missing. Unset, numba is used when
importable and numpy otherwise. The choice is fixed at import time.

High-level entry points allocate outputs and delegate the sequential inner
loops to the selected implementation; dense projections stay in numpy/BLAS
on either backend.
"""

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_impl

_flag = os.environ.get("HCTMG_BACKEND", "").strip().lower()
if _flag not in ("", "numba", "numpy"):
    raise ConfigError(f"HCTMG_BACKEND must be 'numba' or 'numpy', got {_flag!r}")

if _flag == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl
        BACKEND = "numba"
    except ImportError:
        if _flag == "numba":
            raise ConfigError("HCTMG_BACKEND=numba but numba is not importable")
        _impl = numpy_impl
        BACKEND = "numpy"


def conv1d_forward(x, w, b):
    """Same-padded conv over time. x: [B,L,Din], w: [Dout,Din,K] -> [B,L,Dout]."""
    B, L, _ = x.shape
    out = np.empty((B, L, w.shape[0]), dtype=x.dtype)
    _impl.conv1d_forward(out, np.ascontiguousarray(x), np.ascontiguousarray(w), b)
    return out


def conv1d_backward(g, x, w):
    g = np.ascontiguousarray(g)
    x = np.ascontiguousarray(x)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=x.dtype)
    _impl.conv1d_backward(gx, gw, gb, g, x, np.ascontiguousarray(w))
    return gx, gw, gb


def gru_forward(xz, xr, xh, uz, ur, uh, h0):
    """Run the recurrence on precomputed input projections; returns (h, z, r, hc)."""
    shape = xz.shape
    h = np.empty(shape, dtype=xz.dtype)
    z = np.empty(shape, dtype=xz.dtype)
    r = np.empty(shape, dtype=xz.dtype)
    hc = np.empty(shape, dtype=xz.dtype)
    _impl.gru_forward(h, z, r, hc,
                      np.ascontiguousarray(xz), np.ascontiguousarray(xr),
                      np.ascontiguousarray(xh),
                      np.ascontiguousarray(uz), np.ascontiguousarray(ur),
                      np.ascontiguousarray(uh), np.ascontiguousarray(h0))
    return h, z, r, hc


def gru_backward(g, h, z, r, hc, uz, ur, uh, h0):
    """Backward recurrence; returns pre-activation gate grads (gz, gr, ghc) and gh0."""
    g = np.ascontiguousarray(g)
    gz = np.empty_like(g)
    gr = np.empty_like(g)
    ghc = np.empty_like(g)
    gh0 = np.empty((g.shape[0], g.shape[2]), dtype=g.dtype)
    _impl.gru_backward(gz, gr, ghc, gh0, g, h, z, r, hc,
                       np.ascontiguousarray(uz), np.ascontiguousarray(ur),
                       np.ascontiguousarray(uh), np.ascontiguousarray(h0))
    return gz, gr, ghc, gh0
