"""Command-line entry point.

Subcommands: gen-data, train, eval, probe, count-params. Every run
directory receives the exact config and seed that produced it. Exit codes:
0 success, 2 usage/config, 3 numeric failure, 4 I/O or format.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticSpec, generate_synthetic, read_dataset, write_dataset
from .errors import ConfigError, DataError, FormatError, NumericError
from .gating import write_history_csv
from .model import (FlatFusionParams, HctConfig, ModelParams, count_params,
                    init_flat, init_hct)
from .probe import ProbeSpec, export_heatmap, run_probe
from .training import (TrainConfig, evaluate, predict, train,
                       write_train_log_csv)

RUN_SCHEMA_VERSION = 1

USAGE_EXIT = 2
NUMERIC_EXIT = 3
IO_EXIT = 4


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None


def load_run_config(path) -> tuple[HctConfig, TrainConfig, int]:
    """Versioned run config: {"schema_version", "seed", "model", "train"}."""
    raw = _load_json(Path(path))
    version = raw.get("schema_version")
    if version != RUN_SCHEMA_VERSION:
        raise ConfigError(f"unsupported run-config schema version {version!r}")
    unknown = set(raw) - {"schema_version", "seed", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    model_d = dict(raw.get("model", {}))
    model_d.setdefault("seed", seed)
    train_d = dict(raw.get("train", {}))
    train_d.setdefault("seed", seed)
    return HctConfig.from_dict(model_d), TrainConfig.from_dict(train_d), seed


def _write_run_config(out_dir: Path, model_cfg: HctConfig, train_cfg: TrainConfig | None,
                      seed: int, extra: dict | None = None) -> None:
    doc = {"schema_version": RUN_SCHEMA_VERSION, "seed": seed,
           "model": model_cfg.to_dict()}
    if train_cfg is not None:
        doc["train"] = train_cfg.to_dict()
    if extra:
        doc.update(extra)
    (out_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


def _check_dims(cfg: HctConfig, dataset) -> None:
    for mod in dataset.manifest.modalities:
        if cfg.input_dims[mod.name] != mod.dim:
            raise ConfigError(f"modality {mod.name}: config dim "
                              f"{cfg.input_dims[mod.name]} != dataset dim {mod.dim}")
    if cfg.task != dataset.manifest.task:
        raise ConfigError(f"config task {cfg.task!r} != dataset task "
                          f"{dataset.manifest.task!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_dict(_load_json(Path(args.spec)))
    dataset = generate_synthetic(spec)
    out = write_dataset(dataset, args.out)
    print(f"wrote {dataset.n} samples to {out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg, seed = load_run_config(args.config)
    if args.pin_primary:
        train_cfg.pin_primary = args.pin_primary
    dataset = read_dataset(args.data)
    _check_dims(model_cfg, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, model_cfg, train_cfg, seed,
                      extra={"baseline": bool(args.baseline)})

    dtype = train_cfg.dtype
    if args.baseline:
        params = init_flat(model_cfg, dtype=dtype)
        result = _train_baseline(params, dataset, train_cfg)
    else:
        params = init_hct(model_cfg, dtype=dtype)
        try:
            result = train(params, dataset, train_cfg)
        except NumericError as e:
            (out_dir / "diagnostic.json").write_text(json.dumps({
                "error": str(e), "gate_weights": params.gate.weights_array().tolist(),
            }, indent=2) + "\n", encoding="utf-8")
            raise
    save_checkpoint(params, out_dir / "checkpoint.bin")
    write_train_log_csv(result.log, out_dir / "train_log.csv")
    if isinstance(params, ModelParams):
        write_history_csv(params.gate, out_dir / "gate_history.csv")
    print(f"final: {json.dumps(result.final_eval.to_dict(), sort_keys=True)}")
    return 0


def _train_baseline(params: FlatFusionParams, dataset, cfg: TrainConfig):
    """Flat baseline shares the loop mechanics but has no gate."""
    from . import training as tr
    from .autodiff import Tape, zero_grads
    from .model import flat_fusion_forward, named_parameters

    if cfg.val_fraction > 0:
        dataset, val = tr.split_train_val(dataset, cfg.val_fraction, cfg.seed)
    else:
        val = None
    epoch_seeds = np.random.default_rng(cfg.seed).integers(0, 2 ** 31 - 1, size=cfg.epochs)
    state = tr.AdamState()
    loss_curve, log = [], []
    from .data import batch_iter
    for epoch in range(cfg.epochs):
        lr = tr.lr_schedule(epoch, cfg)
        losses = []
        for b_idx, batch in enumerate(batch_iter(dataset, cfg.batch_size,
                                                 seed=int(epoch_seeds[epoch]))):
            with Tape() as tape:
                try:
                    pred, _ = flat_fusion_forward(batch, params)
                    loss_t = tr.loss(pred, batch.labels, params.config.task, kind=cfg.loss)
                except NumericError as e:
                    raise NumericError(
                        f"non-finite values at epoch {epoch} batch {b_idx}: {e}") from e
                tape.backward(loss_t)
            named = named_parameters(params)
            tr.clip_gradients(named, cfg.clip_norm)
            tr.adam_step(named, state, lr)
            zero_grads([p for _, p in named])
            losses.append(loss_t.item())
        loss_curve.append(float(np.mean(losses)))
        log.append({"epoch": epoch, "train_loss": loss_curve[-1], "lr": lr})
    eval_ds = val if val is not None else dataset
    preds = _predict_baseline(params, eval_ds, cfg.batch_size)
    final = tr.evaluate(preds, eval_ds.labels, params.config.task)
    return tr.TrainResult(params=params, loss_curve=loss_curve, log=log, final_eval=final)


def _predict_baseline(params: FlatFusionParams, dataset, batch_size: int) -> np.ndarray:
    from .data import batch_iter
    from .model import flat_fusion_forward
    outs = []
    for batch in batch_iter(dataset, batch_size, shuffle=False):
        pred, _ = flat_fusion_forward(batch, params)
        outs.append(pred.data.copy())
    return np.concatenate(outs, axis=0)


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    _check_dims(params.config, dataset)
    if isinstance(params, ModelParams):
        preds = predict(params, dataset)
    else:
        preds = _predict_baseline(params, dataset, batch_size=64)
    report = evaluate(preds, dataset.labels, params.config.task)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_probe(args) -> int:
    params = load_checkpoint(args.checkpoint)
    if not isinstance(params, ModelParams):
        raise ConfigError("--checkpoint must hold the hierarchical model")
    baseline = None
    if args.exp == "incongruity":
        if not args.baseline_checkpoint:
            raise ConfigError("incongruity probe needs --baseline-checkpoint")
        baseline = load_checkpoint(args.baseline_checkpoint)
        if not isinstance(baseline, FlatFusionParams):
            raise ConfigError("--baseline-checkpoint must hold the flat baseline")
    dataset = read_dataset(args.data)
    _check_dims(params.config, dataset)
    sample_ids = tuple(int(s) for s in args.samples.split(","))
    sources = {"exp1": ("V",), "exp2": ("A", "V"), "exp3": ("A", "V"),
               "incongruity": ("A", "V")}[args.exp]
    sources = tuple(s for s in sources if s != args.target)
    spec = ProbeSpec(experiment=args.exp, target=args.target, sources=sources,
                     sample_ids=sample_ids, layer=args.layer,
                     head=None if args.head < 0 else args.head)
    results = run_probe(params, dataset, spec, baseline=baseline)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, params.config, None, params.config.seed,
                      extra={"probe": {"experiment": args.exp, "target": args.target,
                                       "samples": list(sample_ids)}})
    written = export_heatmap(results, out_dir / "heatmaps", pgm=args.pgm)
    print(f"wrote {len(written)} files under {out_dir / 'heatmaps'}")
    return 0


def cmd_count_params(args) -> int:
    model_cfg, _, _ = load_run_config(args.config)
    report = count_params(init_hct(model_cfg))
    print("hierarchical model")
    print(report.formatted())
    if args.baseline:
        flat_report = count_params(init_flat(model_cfg))
        print("\nflat-fusion baseline")
        print(flat_report.formatted())
        print(f"\nratio (hct/flat): {report.total / flat_report.total:.3f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hctmg",
                                     description="gated hierarchical crossmodal fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic planted-signal dataset")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--pin-primary", choices=("T", "A", "V"), default=None,
                   help="disable gating and fix the primary modality")
    p.add_argument("--baseline", action="store_true",
                   help="train the flat-fusion baseline instead")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, JSON report to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="export attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--exp", required=True, choices=("exp1", "exp2", "exp3", "incongruity"))
    p.add_argument("--samples", default="0", help="comma-separated sample ids")
    p.add_argument("--target", choices=("T", "A", "V"), default="T")
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--head", type=int, default=-1, help="head index, -1 = average")
    p.add_argument("--baseline-checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true", help="also write PGM previews")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("count-params", help="itemized parameter report")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", action="store_true",
                   help="also count the flat baseline and print the ratio")
    p.set_defaults(fn=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return NUMERIC_EXIT
    except (FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
