"""Parameterized layers: temporal conv projection, GRU encoder, sinusoidal
positions, multi-head attention, and pre-norm transformer stacks.

Layers are pure functions of (input, params). Sequence tensors are
[batch, time, feature] (a [time, feature] input is treated as batch 1).
Attention weights are always returned so callers can trace them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


# ---------------------------------------------------------------------------
# parameter containers and initialization


@dataclass
class Conv1dParams:
    kernel: Tensor  # [d_out, d_in, k]
    bias: Tensor    # [d_out]

    @property
    def width(self) -> int:
        return self.kernel.shape[2]


@dataclass
class GruParams:
    wz: Tensor
    wr: Tensor
    wh: Tensor  # [d, d_in]
    uz: Tensor
    ur: Tensor
    uh: Tensor  # [d, d]
    bz: Tensor
    br: Tensor
    bh: Tensor  # [d]


@dataclass
class MhaParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor  # [d, d], applied as x @ w + b
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    heads: int


@dataclass
class TransformerBlockParams:
    mha: MhaParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ff_w1: Tensor  # [d, 4d]
    ff_b1: Tensor
    ff_w2: Tensor  # [4d, d]
    ff_b2: Tensor


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_conv1d(rng, d_out, d_in, k, dtype=np.float32) -> Conv1dParams:
    if k < 1:
        raise ConfigError("conv kernel width must be >= 1")
    return Conv1dParams(
        kernel=_xavier(rng, d_in * k, d_out, (d_out, d_in, k), dtype),
        bias=_zeros((d_out,), dtype),
    )


def init_gru(rng, d, d_in, dtype=np.float32) -> GruParams:
    w = lambda: _xavier(rng, d_in, d, (d, d_in), dtype)
    u = lambda: _xavier(rng, d, d, (d, d), dtype)
    return GruParams(wz=w(), wr=w(), wh=w(), uz=u(), ur=u(), uh=u(),
                     bz=_zeros((d,), dtype), br=_zeros((d,), dtype), bh=_zeros((d,), dtype))


def init_mha(rng, d, heads, dtype=np.float32) -> MhaParams:
    if d % heads != 0:
        raise ConfigError(f"model width {d} not divisible by {heads} heads")
    w = lambda: _xavier(rng, d, d, (d, d), dtype)
    b = lambda: _zeros((d,), dtype)
    return MhaParams(wq=w(), wk=w(), wv=w(), wo=w(), bq=b(), bk=b(), bv=b(), bo=b(), heads=heads)


def init_block(rng, d, heads, dtype=np.float32) -> TransformerBlockParams:
    hidden = 4 * d
    return TransformerBlockParams(
        mha=init_mha(rng, d, heads, dtype),
        ln1_gamma=_ones((d,), dtype), ln1_beta=_zeros((d,), dtype),
        ln2_gamma=_ones((d,), dtype), ln2_beta=_zeros((d,), dtype),
        ff_w1=_xavier(rng, d, hidden, (d, hidden), dtype), ff_b1=_zeros((hidden,), dtype),
        ff_w2=_xavier(rng, hidden, d, (hidden, d), dtype), ff_b2=_zeros((d,), dtype),
    )


def init_stack(rng, d, heads, layers, dtype=np.float32) -> list[TransformerBlockParams]:
    if layers < 1:
        raise ConfigError("transformer stack needs at least one block")
    return [init_block(rng, d, heads, dtype) for _ in range(layers)]


# ---------------------------------------------------------------------------
# forward functions


def conv1d_project(x, p: Conv1dParams) -> Tensor:
    """Project per-timestep features to the model width with local context."""
    return ad.conv1d(x, p.kernel, p.bias)


def gru_encode(x, p: GruParams, h0=None) -> Tensor:
    """Recurrent context encoding; returns the full hidden-state sequence."""
    return ad.gru(x, p.wz, p.wr, p.wh, p.uz, p.ur, p.uh, p.bz, p.br, p.bh, h0=h0)


_PE_CACHE: dict = {}


def sinusoidal_positions(seq: int, dim: int, dtype=np.float32) -> Tensor:
    """Fixed positional embeddings: even columns sin, odd columns cos.

    Pure function of (seq, dim); the constant tensor is cached and shared.
    """
    if dim % 2 != 0:
        raise ConfigError("positional embedding width must be even")
    key = (seq, dim, np.dtype(dtype).str)
    cached = _PE_CACHE.get(key)
    if cached is not None:
        return cached
    t = np.arange(seq, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty((seq, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    out = Tensor(pe.astype(dtype))
    _PE_CACHE[key] = out
    return out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., L, d] -> [..., heads, L, d/heads]."""
    L, d = x.shape[-2], x.shape[-1]
    dk = d // heads
    y = ad.reshape(x, x.shape[:-2] + (L, heads, dk))
    axes = list(range(y.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return ad.transpose(y, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., heads, L, dk] -> [..., L, heads*dk]."""
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    y = ad.transpose(x, axes)
    return ad.reshape(y, y.shape[:-2] + (y.shape[-2] * y.shape[-1],))


def mha(query, key_value, p: MhaParams, kv_mask: np.ndarray | None = None):
    """Scaled dot-product multi-head attention.

    query: [B,Lq,d] or [Lq,d]; key_value: matching rank with length Lkv.
    kv_mask marks valid source positions ([B,Lkv] or [Lkv]); padded
    positions receive exactly zero attention. Returns (output, attention)
    with attention shaped [..., heads, Lq, Lkv].
    """
    query = ad.as_tensor(query)
    key_value = ad.as_tensor(key_value)
    if query.shape[-1] != key_value.shape[-1]:
        raise DimensionError("query/key widths differ")
    d = query.shape[-1]
    h = p.heads
    dk = d // h

    q = _split_heads(ad.linear(query, p.wq, p.bq), h)
    k = _split_heads(ad.linear(key_value, p.wk, p.bk), h)
    v = _split_heads(ad.linear(key_value, p.wv, p.bv), h)

    kt_axes = list(range(k.ndim))
    kt_axes[-1], kt_axes[-2] = kt_axes[-2], kt_axes[-1]
    scores = ad.matmul(q, ad.transpose(k, kt_axes)) * (1.0 / math.sqrt(dk))

    mask = None
    if kv_mask is not None:
        mask = np.asarray(kv_mask, dtype=bool)
        # align to [..., 1(head), 1(query), Lkv]
        if mask.ndim == 1:
            mask = mask[None, None, :]
        elif mask.ndim == 2:
            mask = mask[:, None, None, :]
        else:
            raise DimensionError("kv_mask must be [Lkv] or [batch, Lkv]")
        if query.ndim == 2 and mask.ndim == 4:
            mask = mask[0]
    attn = ad.softmax_masked(scores, mask)

    out = _merge_heads(ad.matmul(attn, v))
    out = ad.linear(out, p.wo, p.bo)
    return out, attn


def _feed_forward(x, p: TransformerBlockParams) -> Tensor:
    hidden = ad.relu(ad.linear(x, p.ff_w1, p.ff_b1))
    return ad.linear(hidden, p.ff_w2, p.ff_b2)


def _positions_for(seq: int, width: int, blocks: int, dtype) -> Tensor:
    """Positional embeddings for a stream of `blocks` concatenated feature
    groups: each group repeats the same per-time encoding."""
    if blocks == 1:
        return sinusoidal_positions(seq, width, dtype=dtype)
    if width % blocks != 0:
        raise DimensionError(f"width {width} not divisible into {blocks} blocks")
    base = sinusoidal_positions(seq, width // blocks, dtype=dtype)
    return ad.concat([base] * blocks, axis=-1)


def transformer_stack(target, source, blocks: list[TransformerBlockParams],
                      source_mask: np.ndarray | None = None,
                      dropout_rate: float = 0.0,
                      rng: np.random.Generator | None = None,
                      positions: bool = True,
                      position_blocks: int = 1):
    """Pre-norm residual stack of (cross- or self-) attention blocks.

    target: evolving stream [B,Lt,d]; source: fixed key/value stream
    [B,Ls,d], or ``None`` for self-attention over the evolving target.

    The residual stream carries the raw target, so zeroing the attention
    output projections and feed-forward weights makes the stack an exact
    identity. Positional embeddings feed the attention-branch inputs: the
    source stream gets them once at entry; the query side sees them at
    every block (added to the current residual before the pre-norm).
    position_blocks > 1 marks a stream built by concatenating that many
    same-length feature groups, which then share one per-time encoding.

    Output length always equals the target length. Returns
    (output, per_layer_attention); attention entries are detached
    [.., heads, Lt, Ls] arrays.
    """
    if not blocks:
        raise ConfigError("transformer stack has no blocks")
    target = ad.as_tensor(target)
    d = target.shape[-1]
    pe_t = (_positions_for(target.shape[-2], d, position_blocks, target.dtype)
            if positions else None)
    x = target
    src = None
    if source is not None:
        source = ad.as_tensor(source)
        if source.shape[-1] != d:
            raise DimensionError("source width must match target width")
        src = source
        if positions:
            src = src + _positions_for(source.shape[-2], d, position_blocks,
                                       target.dtype)

    attns = []
    for blk in blocks:
        q_in = x + pe_t if positions else x
        normed_q = ad.layer_norm(q_in, blk.ln1_gamma, blk.ln1_beta)
        if src is None:
            normed_kv = normed_q
        else:
            # source stream shares the block's first layer-norm parameters
            normed_kv = ad.layer_norm(src, blk.ln1_gamma, blk.ln1_beta)
        att_out, att_w = mha(normed_q, normed_kv, blk.mha, kv_mask=source_mask)
        if dropout_rate > 0.0:
            att_out = ad.dropout(att_out, dropout_rate, rng)
        x = x + att_out
        ff = _feed_forward(ad.layer_norm(x, blk.ln2_gamma, blk.ln2_beta), blk)
        if dropout_rate > 0.0:
            ff = ad.dropout(ff, dropout_rate, rng)
        x = x + ff
        attns.append(att_w.data.copy())
    return x, attns


# ---------------------------------------------------------------------------
# attention bookkeeping


@dataclass
class AttentionTrace:
    """Recorded attention matrices: stack label -> per-layer arrays.

    Each array is [batch, heads, L_target, L_source]; crossmodal stack
    labels are "<source>_to_<target>" role or modality names.
    """
    stacks: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def add(self, label: str, per_layer: list[np.ndarray]) -> None:
        self.stacks[label] = per_layer

    def labels(self) -> list[str]:
        return list(self.stacks.keys())

    def matrix(self, label: str, sample: int, layer: int = -1,
               head: int | None = None) -> np.ndarray:
        """One 2-D attention map; head=None averages heads."""
        arr = self.stacks[label][layer][sample]
        if head is None:
            return arr.mean(axis=0)
        return arr[head]
