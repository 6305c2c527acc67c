"""Modality gating: trainable weights that rank the three modalities,
route them into hierarchy roles per batch, and freeze once the primary
selection is stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

MODALITIES = ("T", "A", "V")


@dataclass
class RoleAssignment:
    primary: str
    aux1: str
    aux2: str

    def as_tuple(self):
        return (self.primary, self.aux1, self.aux2)


@dataclass
class GateRecord:
    epoch: int
    batch: int
    weights: np.ndarray  # [3] in declared modality order
    primary: str


@dataclass
class GateState:
    """Gating logits plus freezing bookkeeping.

    Weights are softmax(logits) in declared modality order, so they sum to
    one and stay strictly positive. Once frozen the logits receive no
    further updates and the role assignment is pinned.
    """
    logits: Tensor
    declared_order: tuple[str, ...] = MODALITIES
    frozen: bool = False
    stable_epochs: int = 0
    prev_winner: str | None = None
    frozen_roles: RoleAssignment | None = None
    history: list[GateRecord] = field(default_factory=list)

    @classmethod
    def fresh(cls, declared_order=MODALITIES, dtype=np.float32) -> "GateState":
        if len(declared_order) != 3:
            raise ConfigError("modality gating is defined for exactly 3 modalities")
        logits = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)
        return cls(logits=logits, declared_order=tuple(declared_order))

    def weights_array(self) -> np.ndarray:
        return gate_weights(self.logits).data.copy()

    def record(self, epoch: int, batch: int, weights: np.ndarray, primary: str) -> None:
        self.history.append(GateRecord(epoch, batch, np.asarray(weights, dtype=np.float64), primary))


def gate_weights(logits) -> Tensor:
    """Softmax over the three gating logits; differentiable."""
    return ad.softmax_masked(logits)


def assign_roles(weights, declared_order=MODALITIES) -> RoleAssignment:
    """Rank modalities by weight; ties break by declared order.

    The top weight becomes the primary modality, the remaining two become
    auxiliaries in descending-weight order.
    """
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if w.shape != (3,):
        raise ConfigError("role assignment expects exactly 3 weights")
    order = sorted(range(3), key=lambda i: (-float(w[i]), i))
    mods = [declared_order[i] for i in order]
    return RoleAssignment(primary=mods[0], aux1=mods[1], aux2=mods[2])


def apply_gate_scaling(encoded: dict[str, Tensor], weights: Tensor,
                       declared_order=MODALITIES) -> dict[str, Tensor]:
    """Scale each modality's encoded sequence by 3x its gate weight.

    Uniform weights (1/3 each) leave the sequences unchanged; the task
    loss reaches the gating logits through all three scale factors.
    """
    scaled = {}
    for i, m in enumerate(declared_order):
        w_m = ad.slice_axis(weights, 0, i, 1)  # [1], broadcasts over [B,L,d]
        scaled[m] = encoded[m] * (w_m * 3.0)
    return scaled


def update_freeze(state: GateState, epoch_argmaxes: list[str],
                  threshold: float = 0.95, patience: int = 5) -> GateState:
    """Epoch-end stability update.

    The stability counter advances when one modality won the per-batch
    argmax in at least ``threshold`` of batches and the winner matches the
    previous epoch's (the first qualifying epoch seeds the streak);
    otherwise it resets. Freezing pins the roles to the winner permanently.
    """
    if state.frozen or not epoch_argmaxes:
        return state
    counts = {m: 0 for m in state.declared_order}
    for m in epoch_argmaxes:
        counts[m] += 1
    winner = max(state.declared_order, key=lambda m: (counts[m], -state.declared_order.index(m)))
    share = counts[winner] / len(epoch_argmaxes)
    if share >= threshold and state.prev_winner in (None, winner):
        state.stable_epochs += 1
    else:
        state.stable_epochs = 0
    state.prev_winner = winner
    if state.stable_epochs >= patience:
        state.frozen = True
        state.frozen_roles = _roles_for_winner(state, winner)
    return state


def _roles_for_winner(state: GateState, winner: str) -> RoleAssignment:
    w = state.weights_array()
    others = [m for m in state.declared_order if m != winner]
    idx = {m: state.declared_order.index(m) for m in others}
    others.sort(key=lambda m: (-float(w[idx[m]]), idx[m]))
    return RoleAssignment(primary=winner, aux1=others[0], aux2=others[1])


def current_roles(state: GateState, weights=None) -> RoleAssignment:
    """Frozen roles if pinned, else argmax routing from the live weights."""
    if state.frozen and state.frozen_roles is not None:
        return state.frozen_roles
    if weights is None:
        weights = state.weights_array()
    return assign_roles(weights, state.declared_order)


def write_history_csv(state: GateState, path) -> None:
    """Gate trajectory export: epoch, batch, one weight column per modality, primary."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "batch"] + [f"w_{m}" for m in state.declared_order] + ["primary"])
        for rec in state.history:
            writer.writerow([rec.epoch, rec.batch]
                            + [f"{v:.9f}" for v in rec.weights]
                            + [rec.primary])
