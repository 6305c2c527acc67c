"""Lightweight three-modality fusion engine.

A minimal reverse-mode autodiff core drives a gated hierarchical
crossmodal transformer: per-batch trainable gating picks the primary
modality, auxiliaries are cross-fused first and then attend into the
primary, and the gate freezes once the selection stabilizes. Includes a
flat-fusion baseline, training/metrics, a binary dataset format, a
planted-signal synthetic generator, and attention probes.
"""

from .autodiff import Tape, Tensor, finite_diff_check, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, DatasetManifest, ModalityBatch, SyntheticSpec,
                   batch_iter, generate_synthetic, read_dataset, write_dataset)
from .gating import GateState, RoleAssignment, assign_roles, gate_weights, update_freeze
from .model import (FlatFusionParams, FusionOutput, HctConfig, ModelParams,
                    count_params, flat_fusion_forward, hct_forward, init_flat,
                    init_hct, mosi_config, mosei_config, iemocap_config)
from .training import (AdamState, EvalReport, TrainConfig, TrainResult,
                       adam_step, evaluate, loss, lr_schedule, predict, train)

__version__ = "0.1.0"
