"""The gated hierarchical crossmodal fusion network and a flat-fusion
reference baseline.

Hierarchy (roles assigned per batch by the gate): the two auxiliary
modalities enhance each other first, both enhanced auxiliaries then attend
into the primary, the two enhanced-primary streams are concatenated on the
feature axis and refined by self-attention, and the final vector is the
concatenation of the mixed pooled auxiliaries with the pooled fused
primary. Pooling takes the last valid (unpadded) timestep.

The flat baseline fuses every modality with every other at the same level
(six crossmodal stacks, one self-attention stack per target) and exists for
parameter-count and attention comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .gating import GateState, RoleAssignment, apply_gate_scaling
from .layers import (AttentionTrace, conv1d_project, gru_encode,
                     init_conv1d, init_gru, init_stack, sinusoidal_positions,
                     transformer_stack, _xavier, _zeros)

MODALITIES = ("T", "A", "V")

CONFIG_SCHEMA_VERSION = 1


@dataclass
class HctConfig:
    """Architecture hyperparameters; defaults follow the smallest benchmark setup."""
    hidden: int = 40
    layers: int = 2
    heads: int = 5
    conv_kernels: dict = field(default_factory=lambda: {"T": 1, "A": 1, "V": 1})
    input_dims: dict = field(default_factory=lambda: {"T": 300, "A": 5, "V": 20})
    max_lengths: dict = field(default_factory=lambda: {"T": 50, "A": 375, "V": 500})
    task: str = "regression"
    n_classes: int = 1
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.task not in ("regression", "multilabel"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "regression" and self.n_classes != 1:
            raise ConfigError("regression predicts a single score")
        for name, table in (("conv_kernels", self.conv_kernels),
                            ("input_dims", self.input_dims),
                            ("max_lengths", self.max_lengths)):
            missing = [m for m in MODALITIES if m not in table]
            if missing:
                raise ConfigError(f"{name} missing modalities {missing}")

    @property
    def out_dim(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HctConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def mosi_config(**overrides) -> HctConfig:
    return HctConfig(**overrides)


def mosei_config(**overrides) -> HctConfig:
    base = dict(layers=4,
                input_dims={"T": 300, "A": 74, "V": 35},
                max_lengths={"T": 50, "A": 500, "V": 500})
    base.update(overrides)
    return HctConfig(**base)


def iemocap_config(**overrides) -> HctConfig:
    base = dict(task="multilabel", n_classes=4,
                input_dims={"T": 300, "A": 74, "V": 35},
                max_lengths={"T": 20, "A": 400, "V": 500})
    base.update(overrides)
    return HctConfig(**base)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelParams:
    config: HctConfig
    conv: dict
    gru: dict
    cmt_aux2_to_aux1: list
    cmt_aux1_to_aux2: list
    cmt_aux1_to_primary: list
    cmt_aux2_to_primary: list
    self_attn: list
    aux1_mix: Tensor
    aux2_mix: Tensor
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor
    gate: GateState


@dataclass
class FlatFusionParams:
    config: HctConfig
    conv: dict
    gru: dict
    cmt: dict          # "<src>_to_<tgt>" -> block list, 6 ordered pairs
    self_attn: dict    # "<tgt>" -> block list at width 2d
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor


def _init_frontend(rng, cfg: HctConfig, dtype):
    conv = {m: init_conv1d(rng, cfg.hidden, cfg.input_dims[m], cfg.conv_kernels[m], dtype)
            for m in MODALITIES}
    gru = {m: init_gru(rng, cfg.hidden, cfg.hidden, dtype) for m in MODALITIES}
    return conv, gru


def _init_head(rng, width, out_dim, dtype):
    return (_xavier(rng, width, width, (width, width), dtype), _zeros((width,), dtype),
            _xavier(rng, width, out_dim, (width, out_dim), dtype), _zeros((out_dim,), dtype))


def init_hct(cfg: HctConfig, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    d, h, n = cfg.hidden, cfg.heads, cfg.layers
    conv, gru = _init_frontend(rng, cfg, dtype)
    hw1, hb1, hw2, hb2 = _init_head(rng, 4 * d, cfg.out_dim, dtype)
    return ModelParams(
        config=cfg, conv=conv, gru=gru,
        cmt_aux2_to_aux1=init_stack(rng, d, h, n, dtype),
        cmt_aux1_to_aux2=init_stack(rng, d, h, n, dtype),
        cmt_aux1_to_primary=init_stack(rng, d, h, n, dtype),
        cmt_aux2_to_primary=init_stack(rng, d, h, n, dtype),
        self_attn=init_stack(rng, 2 * d, h, n, dtype),
        aux1_mix=_xavier(rng, d, d, (d, d), dtype),
        aux2_mix=_xavier(rng, d, d, (d, d), dtype),
        head_w1=hw1, head_b1=hb1, head_w2=hw2, head_b2=hb2,
        gate=GateState.fresh(MODALITIES, dtype=dtype),
    )


def init_flat(cfg: HctConfig, dtype=np.float32) -> FlatFusionParams:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    d, h, n = cfg.hidden, cfg.heads, cfg.layers
    conv, gru = _init_frontend(rng, cfg, dtype)
    cmt = {}
    for tgt in MODALITIES:
        for src in MODALITIES:
            if src != tgt:
                cmt[f"{src}_to_{tgt}"] = init_stack(rng, d, h, n, dtype)
    sa = {tgt: init_stack(rng, 2 * d, h, n, dtype) for tgt in MODALITIES}
    hw1, hb1, hw2, hb2 = _init_head(rng, 6 * d, cfg.out_dim, dtype)
    return FlatFusionParams(config=cfg, conv=conv, gru=gru, cmt=cmt, self_attn=sa,
                            head_w1=hw1, head_b1=hb1, head_w2=hw2, head_b2=hb2)


def _mha_items(prefix, p):
    return [(f"{prefix}.wq", p.wq), (f"{prefix}.bq", p.bq),
            (f"{prefix}.wk", p.wk), (f"{prefix}.bk", p.bk),
            (f"{prefix}.wv", p.wv), (f"{prefix}.bv", p.bv),
            (f"{prefix}.wo", p.wo), (f"{prefix}.bo", p.bo)]


def _block_items(prefix, blk):
    items = _mha_items(f"{prefix}.mha", blk.mha)
    items += [(f"{prefix}.ln1_gamma", blk.ln1_gamma), (f"{prefix}.ln1_beta", blk.ln1_beta),
              (f"{prefix}.ln2_gamma", blk.ln2_gamma), (f"{prefix}.ln2_beta", blk.ln2_beta),
              (f"{prefix}.ff_w1", blk.ff_w1), (f"{prefix}.ff_b1", blk.ff_b1),
              (f"{prefix}.ff_w2", blk.ff_w2), (f"{prefix}.ff_b2", blk.ff_b2)]
    return items


def _stack_items(prefix, stack):
    items = []
    for i, blk in enumerate(stack):
        items += _block_items(f"{prefix}.{i}", blk)
    return items


def _frontend_items(conv, gru):
    items = []
    for m in MODALITIES:
        items += [(f"conv.{m}.kernel", conv[m].kernel), (f"conv.{m}.bias", conv[m].bias)]
    for m in MODALITIES:
        g = gru[m]
        items += [(f"gru.{m}.{n}", getattr(g, n))
                  for n in ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh")]
    return items


def named_parameters(params) -> list:
    """Deterministic (name, tensor) listing; fixes checkpoint blob order."""
    if isinstance(params, ModelParams):
        items = _frontend_items(params.conv, params.gru)
        for name in ("cmt_aux2_to_aux1", "cmt_aux1_to_aux2",
                     "cmt_aux1_to_primary", "cmt_aux2_to_primary", "self_attn"):
            items += _stack_items(name, getattr(params, name))
        items += [("aux1_mix", params.aux1_mix), ("aux2_mix", params.aux2_mix),
                  ("head_w1", params.head_w1), ("head_b1", params.head_b1),
                  ("head_w2", params.head_w2), ("head_b2", params.head_b2),
                  ("gate.logits", params.gate.logits)]
        return items
    if isinstance(params, FlatFusionParams):
        items = _frontend_items(params.conv, params.gru)
        for key in sorted(params.cmt):
            items += _stack_items(f"cmt.{key}", params.cmt[key])
        for key in sorted(params.self_attn):
            items += _stack_items(f"self_attn.{key}", params.self_attn[key])
        items += [("head_w1", params.head_w1), ("head_b1", params.head_b1),
                  ("head_w2", params.head_w2), ("head_b2", params.head_b2)]
        return items
    raise ConfigError(f"unsupported parameter container {type(params).__name__}")


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class FusionOutput:
    aux1_enhanced: Tensor        # [B, L_aux1, d]
    aux2_enhanced: Tensor        # [B, L_aux2, d]
    primary_from_aux1: Tensor    # [B, L_p, d]
    primary_from_aux2: Tensor    # [B, L_p, d]
    primary_fused: Tensor        # [B, L_p, 2d]
    fused_vector: Tensor         # [B, 4d]
    prediction: Tensor           # [B] or [B, k]
    trace: AttentionTrace
    roles: RoleAssignment


def _check_batch(batch):
    for m in MODALITIES:
        if m not in batch.data:
            raise DataError(f"batch is missing modality {m}")
        if batch.data[m].shape[1] == 0 or not batch.masks[m].any(axis=1).all():
            raise DataError(f"modality {m} has an empty sequence")


def encode_modalities(batch, conv, gru, dtype) -> dict:
    """Shared front-end: mask-zero raw features, conv projection, positions,
    recurrent encoding."""
    enc = {}
    for m in MODALITIES:
        raw = np.where(batch.masks[m][..., None], batch.data[m], 0.0).astype(dtype)
        x = Tensor(raw)
        x = conv1d_project(x, conv[m])
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], dtype=dtype)
        enc[m] = gru_encode(x, gru[m])
    return enc


def _pool_last_valid(x: Tensor, mask: np.ndarray) -> Tensor:
    lengths = mask.sum(axis=1)
    return ad.select_timesteps(x, lengths - 1)


def hct_forward(batch, params: ModelParams, roles: RoleAssignment,
                gate_weights_t: Tensor | None = None,
                rng: np.random.Generator | None = None) -> FusionOutput:
    """Hierarchical fusion with the given role routing.

    gate_weights_t, when given, soft-scales each encoded modality by three
    times its gate weight before routing (the differentiable path to the
    gating logits). Pass None for manual/pinned hierarchies.
    """
    _check_batch(batch)
    cfg = params.config
    dtype = params.aux1_mix.dtype
    drop = cfg.dropout
    enc = encode_modalities(batch, params.conv, params.gru, dtype)
    if gate_weights_t is not None:
        enc = apply_gate_scaling(enc, gate_weights_t, MODALITIES)

    e_p, e_a1, e_a2 = enc[roles.primary], enc[roles.aux1], enc[roles.aux2]
    m_p, m_a1, m_a2 = (batch.masks[roles.primary], batch.masks[roles.aux1],
                       batch.masks[roles.aux2])

    trace = AttentionTrace()
    a1_enh, att = transformer_stack(e_a1, e_a2, params.cmt_aux2_to_aux1,
                                    source_mask=m_a2, dropout_rate=drop, rng=rng)
    trace.add("aux2_to_aux1", att)
    a2_enh, att = transformer_stack(e_a2, e_a1, params.cmt_aux1_to_aux2,
                                    source_mask=m_a1, dropout_rate=drop, rng=rng)
    trace.add("aux1_to_aux2", att)
    p_from_a1, att = transformer_stack(e_p, a1_enh, params.cmt_aux1_to_primary,
                                       source_mask=m_a1, dropout_rate=drop, rng=rng)
    trace.add("aux1_to_primary", att)
    p_from_a2, att = transformer_stack(e_p, a2_enh, params.cmt_aux2_to_primary,
                                       source_mask=m_a2, dropout_rate=drop, rng=rng)
    trace.add("aux2_to_primary", att)

    p_cat = ad.concat([p_from_a1, p_from_a2], axis=-1)  # feature-axis concat, width 2d
    p_fused, att = transformer_stack(p_cat, None, params.self_attn,
                                     source_mask=m_p, dropout_rate=drop, rng=rng,
                                     position_blocks=2)
    trace.add("self_attention", att)

    z = ad.concat([
        ad.matmul(_pool_last_valid(a1_enh, m_a1), params.aux1_mix),
        ad.matmul(_pool_last_valid(a2_enh, m_a2), params.aux2_mix),
        _pool_last_valid(p_fused, m_p),
    ], axis=-1)
    pred = predict_head(z, params, cfg.task)
    return FusionOutput(aux1_enhanced=a1_enh, aux2_enhanced=a2_enh,
                        primary_from_aux1=p_from_a1, primary_from_aux2=p_from_a2,
                        primary_fused=p_fused, fused_vector=z, prediction=pred,
                        trace=trace, roles=roles)


def predict_head(z: Tensor, params, task: str) -> Tensor:
    """Two-layer perceptron head; regression squeezes to one score per sample."""
    hidden = ad.relu(ad.linear(z, params.head_w1, params.head_b1))
    out = ad.linear(hidden, params.head_w2, params.head_b2)
    if task == "regression":
        return ad.reshape(out, (out.shape[0],))
    return out


def flat_fusion_forward(batch, params: FlatFusionParams,
                        rng: np.random.Generator | None = None):
    """Flat-fusion baseline: all pairwise crossmodal stacks at one level.

    Returns (prediction, trace); trace holds six crossmodal entries and one
    self-attention entry per target modality.
    """
    _check_batch(batch)
    cfg = params.config
    dtype = params.head_w1.dtype
    drop = cfg.dropout
    enc = encode_modalities(batch, params.conv, params.gru, dtype)
    trace = AttentionTrace()
    pooled = []
    for tgt in MODALITIES:
        others = [m for m in MODALITIES if m != tgt]
        enhanced = []
        for src in others:
            key = f"{src}_to_{tgt}"
            out, att = transformer_stack(enc[tgt], enc[src], params.cmt[key],
                                         source_mask=batch.masks[src],
                                         dropout_rate=drop, rng=rng)
            trace.add(key, att)
            enhanced.append(out)
        cat = ad.concat(enhanced, axis=-1)
        fused, att = transformer_stack(cat, None, params.self_attn[tgt],
                                       source_mask=batch.masks[tgt],
                                       dropout_rate=drop, rng=rng,
                                       position_blocks=2)
        trace.add(f"self_{tgt}", att)
        pooled.append(_pool_last_valid(fused, batch.masks[tgt]))
    z = ad.concat(pooled, axis=-1)  # [B, 6d]
    pred = predict_head(z, params, cfg.task)
    return pred, trace


# ---------------------------------------------------------------------------
# parameter accounting


@dataclass
class ParamReport:
    items: list          # (component, count)
    total: int

    def formatted(self) -> str:
        width = max(len(name) for name, _ in self.items)
        lines = [f"{name:<{width}}  {count:>10,}" for name, count in self.items]
        lines.append(f"{'total':<{width}}  {self.total:>10,}")
        return "\n".join(lines)


_GROUPS = (
    ("conv.", "feature_projection"),
    ("gru.", "sequence_encoder"),
    ("cmt", "crossmodal_stacks"),
    ("self_attn", "self_attention"),
    ("aux1_mix", "aux_mixing"),
    ("aux2_mix", "aux_mixing"),
    ("head_", "prediction_head"),
    ("gate.", "modality_gating"),
)


def count_params(params) -> ParamReport:
    """Exact trainable-scalar count, itemized per architectural component."""
    groups: dict = {}
    order = []
    for name, tensor in named_parameters(params):
        label = next((g for prefix, g in _GROUPS if name.startswith(prefix)), "other")
        if label not in groups:
            groups[label] = 0
            order.append(label)
        groups[label] += tensor.size
    items = [(label, groups[label]) for label in order]
    return ParamReport(items=items, total=sum(groups.values()))
