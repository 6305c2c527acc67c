"""Reverse-mode automatic differentiation over dense numpy buffers.

A ``Tensor`` wraps a C-contiguous float32 or float64 array. While a ``Tape``
is active, every differentiable operation appends one node (output tensor +
backward closure); ``Tape.backward`` replays the nodes in exact reverse
insertion order, which is a valid topological order because inputs are
always created before the ops that consume them.

Gradient semantics: leaf tensors (anything not produced by an op) accumulate
into ``.grad`` across repeated backward calls until ``zero_grads`` clears
them. Non-leaf gradients are scratch state owned by the walk. Values are
checked for NaN/Inf at every op boundary and rejected.

Tensors are immutable after construction apart from their grad buffer;
distinct tapes may run on distinct threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateRowError, DimensionError, NumericError

__all__ = [
    "Tensor", "Tape", "as_tensor", "zero_grads", "backward",
    "matmul", "linear", "concat", "slice_axis", "transpose", "reshape",
    "tanh", "sigmoid", "relu", "exp", "log", "softplus", "absolute", "scale",
    "softmax_masked", "layer_norm", "select_timesteps", "dropout",
    "conv1d", "gru", "finite_diff_check",
]

_ALLOWED = (np.float32, np.float64)


class Tensor:
    """Dense n-dimensional array participating in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        # any NaN/Inf makes the full sum non-finite; one reduction per boundary
        with np.errstate(over="ignore", invalid="ignore"):
            if not np.isfinite(arr.sum()):
                raise NumericError("tensor holds NaN/Inf values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Node:
    __slots__ = ("out", "bwd")

    def __init__(self, out: Tensor, bwd: Callable[[np.ndarray], None]):
        self.out = out
        self.bwd = bwd


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of ops; backward replays it in reverse insertion order."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out: Tensor, bwd: Callable[[np.ndarray], None]) -> None:
        out._tape = self
        self._nodes.append(_Node(out, bwd))

    def backward(self, root: Tensor) -> None:
        """Populate d(root)/d(leaf) for every requires_grad leaf under root."""
        if root.size != 1:
            raise ContractError("backward root must be a scalar tensor")
        # non-leaf grads are scratch for this walk; leaf grads accumulate
        for node in self._nodes:
            node.out.grad = None
        if root.grad is None:
            root.grad = np.zeros_like(root.data)
        root.grad = root.grad + np.ones_like(root.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            node.bwd(g)


def backward(root: Tensor) -> None:
    if root._tape is None:
        if root.size != 1:
            raise ContractError("backward root must be a scalar tensor")
        if root.requires_grad:
            _accum(root, np.ones_like(root.data))
        return
    root._tape.backward(root)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # copy: g may alias an upstream grad buffer
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce_pair(a, b):
    """Wrap scalars/arrays to tensors, matching the partner's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    if a.dtype != b.dtype:
        raise DimensionError(f"mixed dtypes {a.dtype} vs {b.dtype}")
    return a, b


def _result(data: np.ndarray, inputs: Sequence[Tensor], bwd_builder) -> Tensor:
    """Create the op output and record its backward closure if a tape is live."""
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    tape = _active_tape()
    if tape is not None and req:
        tape._record(out, bwd_builder(out))
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(str(e)) from None

    def build(out):
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))
        return bwd

    return _result(data, (a, b), build)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(str(e)) from None

    def build(out):
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.shape))
        return bwd

    return _result(data, (a, b), build)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def build(out):
        def bwd(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        return bwd

    return _result(data, (a, b), build)


def scale(x: Tensor, c: float) -> Tensor:
    return mul(x, float(c))


def _unary(x, fn, dfn) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        data = fn(x.data)  # non-finite results are rejected by the Tensor boundary check

    def build(out):
        def bwd(g):
            _accum(x, g * dfn(x.data, out.data))
        return bwd

    return _result(data, (x,), build)


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda xd, yd: 1.0 - yd * yd)


def sigmoid(x) -> Tensor:
    return _unary(x, lambda v: 1.0 / (1.0 + np.exp(-v)), lambda xd, yd: yd * (1.0 - yd))


def relu(x) -> Tensor:
    # subgradient 0 at the kink
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda xd, yd: (xd > 0).astype(xd.dtype))


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda xd, yd: yd)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda xd, yd: 1.0 / xd)


def absolute(x) -> Tensor:
    return _unary(x, np.abs, lambda xd, yd: np.sign(xd))


def softplus(x) -> Tensor:
    """log(1 + e^x), computed stably; gradient is sigmoid(x)."""
    def fwd(v):
        return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    return _unary(x, fwd, lambda xd, yd: 1.0 / (1.0 + np.exp(-xd)))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def build(out):
        def bwd(g):
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                axes = tuple(a % x.ndim for a in axes)
                for a in sorted(axes):
                    g = np.expand_dims(g, a)
            _accum(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))
        return bwd

    return _result(np.asarray(data), (x,), build)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a % x.ndim] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra / shape


def matmul(a, b) -> Tensor:
    """Matrix product with numpy stacking semantics on leading axes."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    k, n = b.shape[-2], b.shape[-1]
    flat = b.ndim == 2 and a.ndim > 2  # projection case: collapse to one GEMM
    if flat:
        data = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))
    else:
        data = a.data @ b.data

    def build(out):
        def bwd(g):
            if flat:
                g2 = g.reshape(-1, n)
                if a.requires_grad:
                    _accum(a, (g2 @ b.data.T).reshape(a.shape))
                if b.requires_grad:
                    _accum(b, a.data.reshape(-1, k).T @ g2)
                return
            if a.requires_grad:
                _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        return bwd

    return _result(data, (a, b), build)


def linear(x, w, b) -> Tensor:
    """Fused affine map on the last axis: x @ w + b, one graph node.

    x: [..., k]; w: [k, n]; b: [n].
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear shapes: x {x.shape}, w {w.shape}, b {b.shape}")
    k, n = w.shape
    x2 = x.data.reshape(-1, k)
    data = (x2 @ w.data + b.data).reshape(x.shape[:-1] + (n,))

    def build(out):
        def bwd(g):
            g2 = g.reshape(-1, n)
            if x.requires_grad:
                _accum(x, (g2 @ w.data.T).reshape(x.shape))
            if w.requires_grad:
                _accum(w, x2.T @ g2)
            if b.requires_grad:
                _accum(b, g2.sum(axis=0))
        return bwd

    return _result(data, (x, w, b), build)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    data = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def build(out):
        def bwd(g):
            _accum(x, np.ascontiguousarray(np.transpose(g, inv)))
        return bwd

    return _result(np.ascontiguousarray(data), (x,), build)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def build(out):
        def bwd(g):
            _accum(x, g.reshape(x.shape))
        return bwd

    return _result(data, (x,), build)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat needs at least one tensor")
    nd = ts[0].ndim
    ax = axis % nd
    base = list(ts[0].shape)
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != base[i] for i in range(nd) if i != ax):
            raise DimensionError("concat extents differ on a non-concat axis")
    data = np.concatenate([t.data for t in ts], axis=ax)
    sizes = [t.shape[ax] for t in ts]

    def build(out):
        def bwd(g):
            offset = 0
            for t, s in zip(ts, sizes):
                if t.requires_grad:
                    sl = [slice(None)] * nd
                    sl[ax] = slice(offset, offset + s)
                    _accum(t, np.ascontiguousarray(g[tuple(sl)]))
                offset += s
        return bwd

    return _result(data, ts, build)


def slice_axis(x, axis: int, start: int, size: int) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.ndim
    if start < 0 or start + size > x.shape[ax]:
        raise DimensionError(f"slice [{start}:{start + size}) outside extent {x.shape[ax]}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, start + size)
    data = np.ascontiguousarray(x.data[tuple(sl)])

    def build(out):
        def bwd(g):
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[tuple(sl)] += g
        return bwd

    return _result(data, (x,), build)


def select_timesteps(x, idx: np.ndarray) -> Tensor:
    """Pick one timestep per batch row: x [B,L,D], idx [B] -> [B,D]."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("select_timesteps expects a [batch, time, feature] tensor")
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def build(out):
        def bwd(g):
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, idx), g)
        return bwd

    return _result(np.ascontiguousarray(data), (x,), build)


# ---------------------------------------------------------------------------
# fused neural ops


def softmax_masked(x, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis with optional validity mask.

    Masked positions come out exactly zero; each row normalizes over its
    unmasked entries using max-subtraction. A row with no unmasked entry is
    a contract violation.
    """
    x = as_tensor(x)
    if mask is None:
        xm = x.data
    else:
        m = np.asarray(mask, dtype=bool)
        # validate before broadcasting; reductions over 0-stride views are slow
        if not m.any(axis=-1).all():
            raise DegenerateRowError("softmax row is fully masked")
        if m.shape != x.shape:
            m = np.broadcast_to(m, x.shape)
        xm = np.where(m, x.data, -np.inf)
    mx = xm.max(axis=-1, keepdims=True)
    e = np.exp(xm - mx)  # exp(-inf) is exactly 0 at masked positions
    y = e / e.sum(axis=-1, keepdims=True)

    def build(out):
        def bwd(g):
            dot = (g * out.data).sum(axis=-1, keepdims=True)
            _accum(x, out.data * (g - dot))
        return bwd

    return _result(y, (x,), build)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm affine params must match the last extent")
    if eps <= 0:
        raise DimensionError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def build(out):
        def bwd(g):
            if beta.requires_grad:
                _accum(beta, g.reshape(-1, d).sum(axis=0))
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                _accum(x, inv * (dxhat - m1 - xhat * m2))
        return bwd

    return _result(data, (x, gamma, beta), build)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    x = as_tensor(x)
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise DimensionError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    data = x.data * keep

    def build(out):
        def bwd(g):
            _accum(x, g * keep)
        return bwd

    return _result(data, (x,), build)


def _batched(x: Tensor):
    """View a [L,D] tensor as [1,L,D]; returns (array3d, was_2d)."""
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise DimensionError(f"expected rank 2 or 3, got shape {x.shape}")


def conv1d(x, weight, bias) -> Tensor:
    """Same-padded 1-D convolution over time.

    x: [B,L,Din] or [L,Din]; weight: [Dout,Din,K]; bias: [Dout].
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    x3, squeeze = _batched(x)
    if weight.ndim != 3 or x3.shape[2] != weight.shape[1]:
        raise DimensionError(f"conv1d weight {weight.shape} incompatible with input {x.shape}")
    out3 = kernels.conv1d_forward(x3, weight.data, bias.data)
    data = out3[0] if squeeze else out3

    def build(out):
        def bwd(g):
            g3 = g[None] if squeeze else g
            gx, gw, gb = kernels.conv1d_backward(g3, x3, weight.data)
            if x.requires_grad:
                _accum(x, gx[0] if squeeze else gx)
            if weight.requires_grad:
                _accum(weight, gw)
            if bias.requires_grad:
                _accum(bias, gb)
        return bwd

    return _result(data, (x, weight, bias), build)


def gru(x, wz, wr, wh, uz, ur, uh, bz, br, bh, h0=None) -> Tensor:
    """Full-sequence GRU returning every hidden state.

    x: [B,L,Din] or [L,Din]; W_*: [d,Din]; U_*: [d,d]; b_*: [d]. The update
    uses h' = (1-z) * h + z * h_candidate with the reset gate applied to the
    previous state before the recurrent matrix (h_candidate = tanh(Wh x +
    Uh (r*h) + bh)).
    """
    x = as_tensor(x)
    params = [as_tensor(p) for p in (wz, wr, wh, uz, ur, uh, bz, br, bh)]
    wz, wr, wh, uz, ur, uh, bz, br, bh = params
    x3, squeeze = _batched(x)
    d = wz.shape[0]
    if x3.shape[2] != wz.shape[1]:
        raise DimensionError(f"gru input dim {x3.shape[2]} != weight dim {wz.shape[1]}")
    B = x3.shape[0]
    if h0 is None:
        h0 = Tensor(np.zeros((B, d), dtype=x.dtype))
    else:
        h0 = as_tensor(h0)
        if h0.ndim == 1:
            h0 = reshape(h0, (1, d))
    h0d = np.broadcast_to(h0.data, (B, d)).astype(x.dtype, copy=False)

    # dense input projections stay in BLAS on either backend
    xz = x3 @ wz.data.T + bz.data
    xr = x3 @ wr.data.T + br.data
    xh = x3 @ wh.data.T + bh.data
    h, z, r, hc = kernels.gru_forward(xz, xr, xh, uz.data, ur.data, uh.data, h0d)
    data = h[0] if squeeze else h

    def build(out):
        def bwd(g):
            g3 = g[None] if squeeze else g
            gz, gr, ghc, gh0 = kernels.gru_backward(
                g3, h, z, r, hc, uz.data, ur.data, uh.data, h0d)
            flat = lambda a: a.reshape(-1, a.shape[-1])
            hprev = np.concatenate([h0d[:, None], h[:, :-1]], axis=1)
            if x.requires_grad:
                gx = gz @ wz.data + gr @ wr.data + ghc @ wh.data
                _accum(x, gx[0] if squeeze else gx)
            for gate_g, w_t, u_t, b_t, rec in (
                    (gz, wz, uz, bz, hprev),
                    (gr, wr, ur, br, hprev),
                    (ghc, wh, uh, bh, r * hprev)):
                if w_t.requires_grad:
                    _accum(w_t, flat(gate_g).T @ flat(x3))
                if u_t.requires_grad:
                    _accum(u_t, flat(gate_g).T @ flat(rec))
                if b_t.requires_grad:
                    _accum(b_t, gate_g.sum(axis=(0, 1)))
            if h0.requires_grad:
                _accum(h0, _unbroadcast(gh0, h0.shape))
        return bwd

    return _result(data, [x, *params, h0], build)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, tensors, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f is a no-argument callable returning a scalar Tensor built from
    `tensors`. Relative error per coordinate is
    |analytic - fd| / (|analytic| + |fd| + 1e-12).
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    tensors = list(tensors)
    zero_grads(tensors)
    with Tape() as tape:
        out = f()
        tape.backward(out)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        ga = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(ga[i] - fd) / (abs(ga[i]) + abs(fd) + 1e-12)
            worst = max(worst, err)
    return worst
