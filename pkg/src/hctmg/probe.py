"""Crossmodal-attention probes and heatmap export.

Four experiment configurations over a frozen checkpoint:

    exp1          crossmodal attention, one source into the target
                  (default vision -> text)
    exp2          self-attention over the target with and without
                  crossmodal enhancement, side by side
    exp3          each auxiliary source into the target separately
                  (audio -> text and vision -> text)
    incongruity   head-averaged attention over target positions for the
                  hierarchical model vs the flat-fusion baseline on
                  identical samples

Probes never mutate parameters. Output per matrix: a CSV (rows = target
positions, columns = source positions, 9 significant digits) plus a JSON
sidecar, and optionally a row-normalized grayscale PGM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset, batch_from_indices
from .errors import ConfigError
from .gating import RoleAssignment, gate_weights
from .layers import AttentionTrace, transformer_stack
from .model import (MODALITIES, FlatFusionParams, ModelParams,
                    encode_modalities, flat_fusion_forward, hct_forward)

EXPERIMENTS = ("exp1", "exp2", "exp3", "incongruity")


@dataclass
class ProbeSpec:
    experiment: str
    target: str = "T"
    sources: tuple = ("V",)
    sample_ids: tuple = (0,)
    layer: int = -1
    head: int | None = None  # None averages heads

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose from {EXPERIMENTS}")
        if self.target not in MODALITIES:
            raise ConfigError(f"unknown target modality {self.target!r}")
        for s in self.sources:
            if s not in MODALITIES or s == self.target:
                raise ConfigError(f"bad source modality {s!r} for target {self.target!r}")
        if not self.sample_ids:
            raise ConfigError("probe needs at least one sample id")


@dataclass
class ProbeResult:
    sample_id: int
    matrices: dict      # label -> 2-D array [L_target, L_source]
    meta: dict = field(default_factory=dict)


def _roles_with_primary(params: ModelParams, primary: str) -> RoleAssignment:
    rest = [m for m in MODALITIES if m != primary]
    return RoleAssignment(primary=primary, aux1=rest[0], aux2=rest[1])


def _aux_stack_label(roles: RoleAssignment, source_modality: str) -> str:
    if source_modality == roles.aux1:
        return "aux1_to_primary"
    if source_modality == roles.aux2:
        return "aux2_to_primary"
    raise ConfigError(f"{source_modality} is not an auxiliary under roles {roles.as_tuple()}")


def _forward_hct(params: ModelParams, batch, primary: str):
    roles = _roles_with_primary(params, primary)
    weights_t = gate_weights(params.gate.logits)
    return hct_forward(batch, params, roles, gate_weights_t=weights_t), roles


def run_probe(params, dataset: Dataset, spec: ProbeSpec,
              baseline: FlatFusionParams | None = None) -> list:
    """Collect per-sample heatmap matrices for one experiment.

    The hierarchy is routed with the probe target as primary. Experiment
    \"incongruity\" additionally requires the flat-fusion baseline so both
    models are probed on identical samples.
    """
    ids = list(spec.sample_ids)
    n = dataset.n
    bad = [i for i in ids if i < 0 or i >= n]
    if bad:
        raise ConfigError(f"sample ids {bad} outside dataset of {n} samples")
    batch = batch_from_indices(dataset, ids)

    results = []
    if spec.experiment == "exp1":
        out, roles = _forward_hct(params, batch, spec.target)
        src = spec.sources[0]
        label = _aux_stack_label(roles, src)
        for row, sid in enumerate(ids):
            mat = out.trace.matrix(label, row, spec.layer, spec.head)
            results.append(ProbeResult(sid, {f"crossmodal_{src}_to_{spec.target}": mat}))
    elif spec.experiment == "exp3":
        out, roles = _forward_hct(params, batch, spec.target)
        sources = spec.sources if len(spec.sources) == 2 else tuple(
            m for m in MODALITIES if m != spec.target)
        for row, sid in enumerate(ids):
            mats = {}
            for src in sources:
                label = _aux_stack_label(roles, src)
                mats[f"crossmodal_{src}_to_{spec.target}"] = out.trace.matrix(
                    label, row, spec.layer, spec.head)
            results.append(ProbeResult(sid, mats))
    elif spec.experiment == "exp2":
        out, roles = _forward_hct(params, batch, spec.target)
        plain = _plain_self_attention(params, batch, spec.target)
        for row, sid in enumerate(ids):
            with_cm = out.trace.matrix("self_attention", row, spec.layer, spec.head)
            without = plain.matrix("self_attention", row, spec.layer, spec.head)
            results.append(ProbeResult(sid, {
                "self_attention_with_crossmodal": with_cm,
                "self_attention_without_crossmodal": without,
            }))
    else:  # incongruity
        if baseline is None:
            raise ConfigError("incongruity probe requires the flat-fusion baseline")
        out, roles = _forward_hct(params, batch, spec.target)
        _, flat_trace = flat_fusion_forward(batch, baseline)
        for row, sid in enumerate(ids):
            mats = {}
            for src in (roles.aux1, roles.aux2):
                label = _aux_stack_label(roles, src)
                mats[f"hct_{src}_to_{spec.target}"] = out.trace.matrix(
                    label, row, spec.layer, spec.head)
                mats[f"flat_{src}_to_{spec.target}"] = flat_trace.matrix(
                    f"{src}_to_{spec.target}", row, spec.layer, spec.head)
            results.append(ProbeResult(sid, mats))

    meta = {"experiment": spec.experiment, "target": spec.target,
            "layer": spec.layer,
            "head": "mean" if spec.head is None else spec.head}
    for r in results:
        r.meta.update(meta)
    return results


def _plain_self_attention(params: ModelParams, batch, target: str):
    """The no-crossmodal arm of exp2: the model's own self-attention stack
    applied to the unenhanced encoded target, duplicated on the feature axis
    to fill the 2d width."""
    enc = encode_modalities(batch, params.conv, params.gru,
                            params.aux1_mix.dtype)
    doubled = ad.concat([enc[target], enc[target]], axis=-1)
    _, attns = transformer_stack(doubled, None, params.self_attn,
                                 source_mask=batch.masks[target],
                                 position_blocks=2)
    trace = AttentionTrace()
    trace.add("self_attention", attns)
    return trace


# ---------------------------------------------------------------------------
# export


def export_heatmap(results: list, path, pgm: bool = False) -> list:
    """Write one CSV + JSON sidecar per matrix; returns the written paths.

    Layout: <path>/sample_<id>/<label>.csv (+ .json, optional .pgm).
    """
    if not results:
        raise ConfigError("nothing to export")
    root = Path(path)
    written = []
    for res in results:
        sample_dir = root / f"sample_{res.sample_id}"
        sample_dir.mkdir(parents=True, exist_ok=True)
        for label, mat in res.matrices.items():
            mat = np.asarray(mat, dtype=np.float64)
            csv_path = sample_dir / f"{label}.csv"
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                for row in mat:
                    fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
            sidecar = dict(res.meta)
            sidecar.update({"sample_id": res.sample_id, "label": label,
                            "rows": int(mat.shape[0]), "cols": int(mat.shape[1]),
                            "row_axis": "target_position",
                            "col_axis": "source_position"})
            json_path = sample_dir / f"{label}.json"
            json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
            written += [csv_path, json_path]
            if pgm:
                pgm_path = sample_dir / f"{label}.pgm"
                _write_pgm(mat, pgm_path)
                written.append(pgm_path)
    return written


def _write_pgm(mat: np.ndarray, path: Path) -> None:
    """Binary PGM, one byte per cell, each row normalized to its own max."""
    peak = mat.max(axis=1, keepdims=True)
    peak[peak == 0] = 1.0
    gray = np.clip(mat / peak * 255.0, 0, 255).astype(np.uint8)
    header = f"P5\n{mat.shape[1]} {mat.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + gray.tobytes())


def read_heatmap_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)
