"""Checkpoint file format.

Layout (all integers little-endian):
    bytes 0..3    magic "HCTM"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..11   uint32 header length N
    bytes 12..    N bytes UTF-8 JSON header: model kind ("hct"/"flat"),
                  architecture config, gate state
    then          one raw blob per parameter, little-endian float32,
                  row-major, in the fixed named_parameters order

Parameters are always stored as float32 regardless of training precision;
loading casts to the requested dtype.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .gating import RoleAssignment
from .model import (FlatFusionParams, HctConfig, ModelParams, init_flat,
                    init_hct, named_parameters)

MAGIC = b"HCTM"
VERSION = 1


def _gate_header(params) -> dict | None:
    if not isinstance(params, ModelParams):
        return None
    g = params.gate
    return {
        "frozen": g.frozen,
        "stable_epochs": g.stable_epochs,
        "prev_winner": g.prev_winner,
        "frozen_roles": list(g.frozen_roles.as_tuple()) if g.frozen_roles else None,
    }


def save_checkpoint(params, path) -> Path:
    kind = "hct" if isinstance(params, ModelParams) else "flat"
    header = {
        "kind": kind,
        "config": params.config.to_dict(),
        "gate": _gate_header(params),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = Path(path)
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, tensor in named_parameters(params):
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return out


def load_checkpoint(path, dtype=np.float32):
    """Reconstruct parameters from a checkpoint; validates sizes exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"checkpoint truncated at {len(raw)} bytes (need >= 12)")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r} at byte 0, expected {MAGIC!r}")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + hlen:
        raise FormatError(f"header claims {hlen} bytes at offset 12 but file ends "
                          f"at {len(raw)}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}") from None
    cfg = HctConfig.from_dict(header["config"])
    kind = header.get("kind")
    if kind == "hct":
        params = init_hct(cfg, dtype=dtype)
    elif kind == "flat":
        params = init_flat(cfg, dtype=dtype)
    else:
        raise FormatError(f"unknown model kind {kind!r}")

    offset = 12 + hlen
    for name, tensor in named_parameters(params):
        nbytes = tensor.size * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"parameter {name}: need {nbytes} bytes at offset "
                              f"{offset}, file has {len(raw) - offset} left")
        flat = np.frombuffer(raw, dtype="<f4", count=tensor.size, offset=offset)
        tensor.data[...] = flat.reshape(tensor.shape).astype(dtype)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes after offset {offset}")

    gate_hdr = header.get("gate")
    if kind == "hct" and gate_hdr:
        g = params.gate
        g.frozen = bool(gate_hdr.get("frozen", False))
        g.stable_epochs = int(gate_hdr.get("stable_epochs", 0))
        g.prev_winner = gate_hdr.get("prev_winner")
        roles = gate_hdr.get("frozen_roles")
        if roles:
            g.frozen_roles = RoleAssignment(*roles)
    return params
