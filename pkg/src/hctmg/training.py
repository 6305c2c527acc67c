"""Optimizer, objectives, the batch training loop with gate updates and
freezing, and the evaluation metrics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, zero_grads
from .data import Dataset, batch_iter
from .errors import ConfigError, DataWarning, NumericError
from .gating import (GateState, RoleAssignment, assign_roles, current_roles,
                     gate_weights, update_freeze)
from .model import MODALITIES, ModelParams, hct_forward, named_parameters


@dataclass
class TrainConfig:
    """Loop hyperparameters; defaults match the smallest benchmark recipe
    (lr 1e-3, batch 36, 30 epochs, decay at epoch 20)."""
    learning_rate: float = 1e-3
    batch_size: int = 36
    epochs: int = 30
    decay_epoch: int = 20
    decay_factor: float = 0.1
    patience: int = 5
    stability_threshold: float = 0.95
    clip_norm: float = 0.8
    loss: str = "l1"
    precision: str = "single"
    val_fraction: float = 0.0
    pin_primary: str | None = None
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("l1", "l2"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.pin_primary is not None and self.pin_primary not in MODALITIES:
            raise ConfigError(f"pin_primary must be one of {MODALITIES}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train-config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# objectives


def loss(pred: Tensor, labels, task: str, kind: str = "l1") -> Tensor:
    """Training objective: mean absolute (or squared) error for regression,
    mean per-class binary cross-entropy with logits for multilabel."""
    y = np.asarray(labels, dtype=pred.dtype)
    if y.shape != pred.shape:
        raise ConfigError(f"labels shape {y.shape} != prediction shape {pred.shape}")
    if task == "regression":
        if (np.abs(y) > 3.0).any():
            warnings.warn("regression labels outside [-3, 3]", DataWarning)
        diff = pred - Tensor(y)
        if kind == "l2":
            return (diff * diff).mean()
        return ad.absolute(diff).mean()
    if task == "multilabel":
        # mean over samples and classes of softplus(x) - x * y
        yt = Tensor(y)
        return (ad.softplus(pred) - pred * yt).mean()
    raise ConfigError(f"unknown task {task!r}")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """One multiplicative decay at the decay epoch, constant otherwise."""
    if epoch >= cfg.decay_epoch:
        return cfg.learning_rate * cfg.decay_factor
    return cfg.learning_rate


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(named_params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam; updates parameter buffers in place."""
    state.t += 1
    t = state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


def clip_gradients(named_params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    mae: float | None = None
    corr: float | None = None
    acc7: float | None = None
    acc2: float | None = None
    f1: float | None = None
    corr_degenerate: bool = False
    per_class_acc: list | None = None
    per_class_f1: list | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _pearson(a: np.ndarray, b: np.ndarray):
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum()) * np.sqrt((b * b).sum())
    if denom == 0.0:
        return 0.0, True
    return float((a * b).sum() / denom), False


def _binary_f1(pred_pos: np.ndarray, true_pos: np.ndarray) -> float:
    tp = float((pred_pos & true_pos).sum())
    fp = float((pred_pos & ~true_pos).sum())
    fn = float((~pred_pos & true_pos).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def evaluate(preds: np.ndarray, labels: np.ndarray, task: str) -> EvalReport:
    """Metric suite.

    Regression: 7-class accuracy on clamp-rounded scores in [-3, 3], binary
    accuracy and F1 on polarity over nonzero labels (positive class =
    positive sentiment), MAE and Pearson correlation. Multilabel: per-class
    binary accuracy/F1 at probability threshold 0.5.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.size == 0:
        raise ConfigError("evaluate needs at least one sample")
    if task == "multilabel":
        probs = 1.0 / (1.0 + np.exp(-preds))
        hits = (probs >= 0.5) == (labels >= 0.5)
        accs = [float(hits[:, k].mean()) for k in range(labels.shape[1])]
        f1s = [_binary_f1(probs[:, k] >= 0.5, labels[:, k] >= 0.5)
               for k in range(labels.shape[1])]
        return EvalReport(per_class_acc=accs, per_class_f1=f1s)

    rounded_p = np.rint(np.clip(preds, -3.0, 3.0))
    rounded_y = np.rint(np.clip(labels, -3.0, 3.0))
    acc7 = float((rounded_p == rounded_y).mean())
    nonzero = labels != 0.0
    if nonzero.any():
        acc2 = float(((preds[nonzero] > 0) == (labels[nonzero] > 0)).mean())
        f1 = _binary_f1(preds[nonzero] > 0, labels[nonzero] > 0)
    else:
        acc2, f1 = 0.0, 0.0
    mae = float(np.abs(preds - labels).mean())
    corr, degenerate = _pearson(preds, labels)
    return EvalReport(mae=mae, corr=corr, acc7=acc7, acc2=acc2, f1=f1,
                      corr_degenerate=degenerate)


def constant_median_mae(train_labels: np.ndarray, test_labels: np.ndarray) -> float:
    """MAE of always predicting the training-label median."""
    return float(np.abs(np.median(train_labels) - np.asarray(test_labels)).mean())


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ModelParams
    loss_curve: list
    log: list
    final_eval: EvalReport


def _trainable(params: ModelParams, include_gate: bool):
    items = named_parameters(params)
    if include_gate:
        return items
    return [(n, p) for n, p in items if n != "gate.logits"]


def predict(params: ModelParams, dataset: Dataset, batch_size: int = 64,
            pin_primary: str | None = None) -> np.ndarray:
    """Deterministic forward over a dataset (no tape, no shuffle)."""
    gate = params.gate
    outs = []
    for batch in batch_iter(dataset, batch_size, shuffle=False):
        if pin_primary is not None:
            roles = _pinned_roles(pin_primary)
            weights_t = None
        else:
            weights_t = gate_weights(gate.logits)
            roles = current_roles(gate, weights_t.data)
        out = hct_forward(batch, params, roles, gate_weights_t=weights_t)
        outs.append(out.prediction.data.copy())
    return np.concatenate(outs, axis=0)


def _pinned_roles(primary: str) -> RoleAssignment:
    rest = [m for m in MODALITIES if m != primary]
    return RoleAssignment(primary=primary, aux1=rest[0], aux2=rest[1])


def split_train_val(dataset: Dataset, val_fraction: float, seed: int):
    if val_fraction <= 0.0:
        return dataset, None
    n = dataset.n
    n_val = max(1, int(round(n * val_fraction)))
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])


def train(params: ModelParams, dataset: Dataset, cfg: TrainConfig,
          val_dataset: Dataset | None = None) -> TrainResult:
    """Run the full loop: per batch, gate weighting, role routing, forward,
    backward, Adam; per epoch, freeze bookkeeping, lr schedule, validation
    metrics. Batch order, dropout, and init are all fixed by seeds."""
    task = params.config.task
    gate = params.gate
    pinned = cfg.pin_primary
    if val_dataset is None and cfg.val_fraction > 0:
        dataset, val_dataset = split_train_val(dataset, cfg.val_fraction, cfg.seed)

    epoch_seeds = np.random.default_rng(cfg.seed).integers(0, 2 ** 31 - 1, size=cfg.epochs)
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    state = AdamState()
    loss_curve: list = []
    log: list = []

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        epoch_losses = []
        epoch_argmaxes: list = []
        for b_idx, batch in enumerate(batch_iter(dataset, cfg.batch_size,
                                                 seed=int(epoch_seeds[epoch]))):
            gate_active = pinned is None and not gate.frozen
            with Tape() as tape:
                if pinned is not None:
                    roles = _pinned_roles(pinned)
                    weights_t = None
                else:
                    weights_t = gate_weights(gate.logits)
                    roles = current_roles(gate, weights_t.data)
                try:
                    out = hct_forward(batch, params, roles, gate_weights_t=weights_t,
                                      rng=drop_rng)
                    loss_t = loss(out.prediction, batch.labels, task, kind=cfg.loss)
                except NumericError as e:
                    raise NumericError(
                        f"non-finite values at epoch {epoch} batch {b_idx}: {e}") from e
                tape.backward(loss_t)
            if gate_active:
                gate.record(epoch, b_idx, weights_t.data, roles.primary)
                epoch_argmaxes.append(roles.primary)
            trainables = _trainable(params, include_gate=gate_active)
            clip_gradients(trainables, cfg.clip_norm)
            adam_step(trainables, state, lr)
            zero_grads([p for _, p in named_parameters(params)])
            epoch_losses.append(loss_t.item())

        if pinned is None and not gate.frozen:
            update_freeze(gate, epoch_argmaxes,
                          threshold=cfg.stability_threshold, patience=cfg.patience)
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        loss_curve.append(train_loss)

        w = gate.weights_array()
        row = {"epoch": epoch, "train_loss": train_loss, "lr": lr,
               "frozen": int(gate.frozen)}
        row.update({f"w_{m}": float(w[i]) for i, m in enumerate(MODALITIES)})
        if cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0:
            eval_ds = val_dataset if val_dataset is not None else dataset
            preds = predict(params, eval_ds, batch_size=cfg.batch_size, pin_primary=pinned)
            report = evaluate(preds, eval_ds.labels, task)
            row.update({f"val_{k}": v for k, v in report.to_dict().items()
                        if not isinstance(v, list)})
        log.append(row)

    final = evaluate(predict(params, val_dataset if val_dataset is not None else dataset,
                             batch_size=cfg.batch_size, pin_primary=pinned),
                     (val_dataset if val_dataset is not None else dataset).labels, task)
    return TrainResult(params=params, loss_curve=loss_curve, log=log, final_eval=final)


def write_train_log_csv(log: list, path) -> None:
    import csv
    if not log:
        return
    keys = list(log[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in log:
            writer.writerow(row)
