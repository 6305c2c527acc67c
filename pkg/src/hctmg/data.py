"""Dataset container format, batching, and the planted-signal synthetic
generator.

On-disk layout (one directory per dataset):
    manifest.json   UTF-8 JSON describing shapes, files, task
    <name>.f32      per-modality features, little-endian IEEE-754 float32,
                    row-major [sample][timestep][feature]
    labels.f32      labels, same encoding, [sample] or [sample][class]
    <name>.len.i32  optional per-sample true lengths, little-endian int32

The layout is platform independent: endianness and ordering are fixed, so
read(write(x)) is the identity everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

MODALITIES = ("T", "A", "V")

MANIFEST_SCHEMA_VERSION = 1


@dataclass
class ModalityMeta:
    name: str
    seq_len: int
    dim: int
    file: str
    lengths_file: str | None = None


@dataclass
class DatasetManifest:
    name: str
    n_samples: int
    task: str
    modalities: list
    labels_file: str = "labels.f32"
    n_classes: int = 1
    endianness: str = "little"
    synthetic: dict | None = None

    def __post_init__(self):
        if len(self.modalities) != 3:
            raise FormatError(f"expected 3 modalities, manifest lists {len(self.modalities)}")
        if self.endianness != "little":
            raise FormatError(f"unsupported endianness {self.endianness!r}")
        for mod in self.modalities:
            if mod.seq_len <= 0 or mod.dim <= 0:
                raise FormatError(f"modality {mod.name}: non-positive extent")

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "name": self.name,
            "n_samples": self.n_samples,
            "task": self.task,
            "n_classes": self.n_classes,
            "endianness": self.endianness,
            "modalities": [{"name": m.name, "seq_len": m.seq_len, "dim": m.dim,
                            "file": m.file, "lengths_file": m.lengths_file}
                           for m in self.modalities],
            "labels_file": self.labels_file,
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        version = d.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise FormatError(f"unsupported manifest schema version {version!r}")
        mods = [ModalityMeta(**m) for m in d["modalities"]]
        return cls(name=d["name"], n_samples=d["n_samples"], task=d["task"],
                   modalities=mods, labels_file=d.get("labels_file", "labels.f32"),
                   n_classes=d.get("n_classes", 1),
                   endianness=d.get("endianness", "little"),
                   synthetic=d.get("synthetic"))


@dataclass
class Dataset:
    manifest: DatasetManifest
    features: dict      # modality name -> float32 [n, seq, dim]
    labels: np.ndarray  # [n] or [n, k]
    lengths: dict       # modality name -> int32 [n]

    @property
    def n(self) -> int:
        return self.manifest.n_samples

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        man = DatasetManifest(
            name=self.manifest.name, n_samples=len(idx), task=self.manifest.task,
            modalities=self.manifest.modalities, labels_file=self.manifest.labels_file,
            n_classes=self.manifest.n_classes, synthetic=self.manifest.synthetic)
        return Dataset(manifest=man,
                       features={m: self.features[m][idx] for m in self.features},
                       labels=self.labels[idx],
                       lengths={m: self.lengths[m][idx] for m in self.lengths})


@dataclass
class ModalityBatch:
    """Padded per-modality tensors plus validity masks and labels.

    Padded positions are zero-filled; every sample keeps at least one valid
    timestep per modality.
    """
    data: dict            # modality -> float32 [b, seq, dim]
    masks: dict           # modality -> bool [b, seq]
    labels: np.ndarray    # [b] or [b, k]
    indices: np.ndarray   # dataset row of each batch element

    @property
    def size(self) -> int:
        return len(self.indices)


# ---------------------------------------------------------------------------
# read / write


def write_dataset(dataset: Dataset, path) -> Path:
    """Write manifest + raw float32 blobs; returns the dataset directory."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    man = dataset.manifest
    for mod in man.modalities:
        arr = np.ascontiguousarray(dataset.features[mod.name], dtype="<f4")
        expected = (man.n_samples, mod.seq_len, mod.dim)
        if arr.shape != expected:
            raise DataError(f"modality {mod.name}: array shape {arr.shape} != manifest {expected}")
        (out / mod.file).write_bytes(arr.tobytes())
        if mod.lengths_file:
            lengths = np.ascontiguousarray(dataset.lengths[mod.name], dtype="<i4")
            (out / mod.lengths_file).write_bytes(lengths.tobytes())
    labels = np.ascontiguousarray(dataset.labels, dtype="<f4")
    (out / man.labels_file).write_bytes(labels.tobytes())
    (out / "manifest.json").write_text(
        json.dumps(man.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _read_blob(path: Path, dtype, expected_count: int, what: str) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"{what}: missing file {path}")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected_bytes = expected_count * itemsize
    if len(raw) != expected_bytes:
        raise FormatError(f"{what}: expected {expected_bytes} bytes, file {path.name} "
                          f"has {len(raw)} bytes")
    return np.frombuffer(raw, dtype=dtype).copy()


def read_dataset(path) -> Dataset:
    """Load a dataset directory, validating every blob size byte-for-byte."""
    root = Path(path)
    man_path = root / "manifest.json"
    if not man_path.exists():
        raise FormatError(f"no manifest.json under {root}")
    try:
        man = DatasetManifest.from_dict(json.loads(man_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"malformed manifest: {e}") from None
    features, lengths = {}, {}
    n = man.n_samples
    for mod in man.modalities:
        count = n * mod.seq_len * mod.dim
        flat = _read_blob(root / mod.file, "<f4", count, f"modality {mod.name}")
        features[mod.name] = flat.reshape(n, mod.seq_len, mod.dim)
        if mod.lengths_file:
            lens = _read_blob(root / mod.lengths_file, "<i4", n, f"lengths {mod.name}")
            if (lens < 1).any() or (lens > mod.seq_len).any():
                raise FormatError(f"lengths {mod.name}: values outside [1, {mod.seq_len}]")
            lengths[mod.name] = lens
        else:
            lengths[mod.name] = np.full(n, mod.seq_len, dtype=np.int32)
    label_count = n * (man.n_classes if man.task == "multilabel" else 1)
    labels = _read_blob(root / man.labels_file, "<f4", label_count, "labels")
    if man.task == "multilabel":
        labels = labels.reshape(n, man.n_classes)
    return Dataset(manifest=man, features=features, labels=labels, lengths=lengths)


# ---------------------------------------------------------------------------
# batching


def batch_iter(dataset: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True):
    """Deterministic batches; the last partial batch is kept.

    Masks come from per-sample true lengths (full length when absent).
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = dataset.n
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        data, masks = {}, {}
        for mod in dataset.manifest.modalities:
            m = mod.name
            feats = dataset.features[m][idx]
            lens = dataset.lengths[m][idx]
            mask = np.arange(mod.seq_len)[None, :] < lens[:, None]
            data[m] = np.where(mask[..., None], feats, 0.0).astype(np.float32)
            masks[m] = mask
        yield ModalityBatch(data=data, masks=masks,
                            labels=dataset.labels[idx], indices=idx)


def batch_from_indices(dataset: Dataset, indices) -> ModalityBatch:
    """One batch holding exactly the given dataset rows, in order."""
    idx = np.asarray(indices)
    data, masks = {}, {}
    for mod in dataset.manifest.modalities:
        m = mod.name
        lens = dataset.lengths[m][idx]
        mask = np.arange(mod.seq_len)[None, :] < lens[:, None]
        data[m] = np.where(mask[..., None], dataset.features[m][idx], 0.0).astype(np.float32)
        masks[m] = mask
    return ModalityBatch(data=data, masks=masks, labels=dataset.labels[idx], indices=idx)


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SyntheticSpec:
    """Planted-primary generator settings.

    One latent cue per sample drives the label. The planted modality embeds
    the cue at a random timestep along a fixed random unit direction with
    amplitude sqrt(signal_fraction); each auxiliary embeds it with amplitude
    sqrt((1-signal_fraction)/2), sign-flipped for an incongruity_rate
    fraction of samples. All remaining entries are gaussian noise with
    standard deviation noise_sigma, which also perturbs the label.
    """
    n: int
    shapes: dict                    # modality -> (seq_len, dim)
    planted_primary: str = "T"
    signal_fraction: float = 0.9
    incongruity_rate: float = 0.0
    noise_sigma: float = 0.1
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.planted_primary not in MODALITIES:
            raise ConfigError(f"unknown planted modality {self.planted_primary!r}")
        if not 0.0 <= self.signal_fraction <= 1.0:
            raise ConfigError("signal_fraction must lie in [0, 1]")
        if not 0.0 <= self.incongruity_rate <= 1.0:
            raise ConfigError("incongruity_rate must lie in [0, 1]")
        missing = [m for m in MODALITIES if m not in self.shapes]
        if missing:
            raise ConfigError(f"shapes missing modalities {missing}")

    def to_dict(self) -> dict:
        return {"n": self.n, "shapes": {m: list(self.shapes[m]) for m in MODALITIES},
                "planted_primary": self.planted_primary,
                "signal_fraction": self.signal_fraction,
                "incongruity_rate": self.incongruity_rate,
                "noise_sigma": self.noise_sigma, "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        d = dict(d)
        d["shapes"] = {m: tuple(v) for m, v in d["shapes"].items()}
        return cls(**d)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic planted-signal dataset; provenance lands in the manifest."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    cue = rng.uniform(-3.0, 3.0, size=n)
    labels = cue + rng.normal(0.0, spec.noise_sigma, size=n)

    aux_amp = np.sqrt((1.0 - spec.signal_fraction) / 2.0)
    amps = {m: (np.sqrt(spec.signal_fraction) if m == spec.planted_primary else aux_amp)
            for m in MODALITIES}
    flipped = rng.random(n) < spec.incongruity_rate

    features, cue_times, directions = {}, {}, {}
    for m in MODALITIES:
        seq_len, dim = spec.shapes[m]
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        t_star = rng.integers(0, seq_len, size=n)
        x = rng.normal(0.0, spec.noise_sigma, size=(n, seq_len, dim))
        sign = np.ones(n)
        if m != spec.planted_primary:
            sign = np.where(flipped, -1.0, 1.0)
        x[np.arange(n), t_star] += (sign * amps[m] * cue)[:, None] * direction[None, :]
        features[m] = x.astype(np.float32)
        cue_times[m] = t_star.astype(int).tolist()
        directions[m] = direction.astype(float).tolist()

    manifest = DatasetManifest(
        name=spec.name, n_samples=n, task="regression",
        modalities=[ModalityMeta(name=m, seq_len=spec.shapes[m][0],
                                 dim=spec.shapes[m][1], file=f"{m}.f32")
                    for m in MODALITIES],
        synthetic={"spec": spec.to_dict(),
                   "cue_times": cue_times,
                   "directions": directions,
                   "flipped": flipped.astype(int).tolist()},
    )
    lengths = {m: np.full(n, spec.shapes[m][0], dtype=np.int32) for m in MODALITIES}
    return Dataset(manifest=manifest, features=features,
                   labels=labels.astype(np.float32), lengths=lengths)
