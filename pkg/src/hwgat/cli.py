"""Command-line entry point.

Subcommands: inspect-schema, inspect-windows, preprocess, synth, train,
eval, finetune, gradcheck, ablate.  Every config key in hwgat.config is
mirrored one-to-one as a flag (--model.frames 32); precedence is built-in
defaults < --config file < flags.  Errors exit with the category code from
hwgat.errors (config 2, data 3, numeric 4, io 5).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from .data import (generate_synthetic, load_full_pose_sequence, load_manifest,
                   load_sequence, load_split, save_sequence)
from .errors import ConfigError, HwgatError, NumericError
from .model import HWGAT, ModelConfig
from .preprocess import fill_missing, normalize_bbox, to_pixel_coords
from .rng import DATA_STREAM, stream_rng
from .skeleton import (build_default_schema, build_default_selection_map,
                       format_schema_text)
from .training import TrainConfig, evaluate, finetune, model_from_checkpoint, train_loop
from .verification import fd_check_promoted, fd_gradient_check, run_ablation_grid
from .windows import build_window_layout, format_windows_text

# gradient-check model: small enough for finite differences in minutes
TOY_MODEL = dict(frames=8, block_len=2, num_layers=2, blocks_per_layer=1,
                 num_heads=2, embed_dim=8, window_mode="four")
TOY_CLASSES = 3
TOY_BATCH = 2
FD_TOLERANCE = {"float64": 1e-5, "float32": 1e-3}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="config file with 'key = value' lines")
    group = parser.add_argument_group("config overrides")
    for name, key in sorted(cfgmod.REGISTRY.items()):
        group.add_argument(f"--{name}", dest=name, metavar=key.kind.upper(),
                           help=f"default: {key.default}")


def _resolve(args: argparse.Namespace) -> dict:
    raw = vars(args)
    flags = {key: cfgmod.parse_value(key, raw[key])
             for key in cfgmod.REGISTRY if raw.get(key) is not None}
    file_values = cfgmod.load_config_file(args.config) if args.config else None
    return cfgmod.resolve_config(file_values, flags)


def _echo_config(resolved: dict, out_dir: str | None) -> None:
    text = cfgmod.format_config(resolved)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    print("# resolved config")
    print(text, end="")


def _cmd_inspect_schema(args) -> int:
    print(format_schema_text(build_default_schema(), build_default_selection_map()),
          end="")
    return 0


def _cmd_inspect_windows(args) -> int:
    resolved = _resolve(args)
    layout = build_window_layout(build_default_schema(),
                                 resolved["model.window_mode"])
    block_len = resolved["model.block_len"]
    rolled = None
    if args.shifted:
        shift = block_len // 2
        rolled = np.arange(block_len) >= block_len - shift
    print(format_windows_text(layout, block_len, rolled), end="")
    return 0


def _cmd_preprocess(args) -> int:
    if args.full_pose:
        seq = load_full_pose_sequence(args.input)
    else:
        seq = load_sequence(args.input)
    if args.to_pixel:
        seq = to_pixel_coords(seq, seq.frame_size)
    seq = normalize_bbox(seq)
    seq = fill_missing(seq)
    save_sequence(seq, args.output)
    print(f"wrote {args.output} ({seq.num_frames} frames)")
    return 0


def _cmd_synth(args) -> int:
    resolved = _resolve(args)
    _echo_config(resolved, args.out)
    spec = cfgmod.synthetic_spec_from(resolved)
    manifest, path = generate_synthetic(spec, args.out)
    counts = {s: len(manifest.split_entries(s)) for s in ("train", "val", "test")}
    print(f"manifest: {path}")
    print(f"classes: {len(manifest.class_names)} sequences: {len(manifest.entries)} "
          f"splits: train={counts['train']} val={counts['val']} test={counts['test']}")
    return 0


def _load_labeled_splits(manifest_path: str):
    manifest = load_manifest(manifest_path)
    train_seqs = load_split(manifest, "train")
    val_seqs = load_split(manifest, "val")
    if not train_seqs:
        raise ConfigError(f"manifest {manifest_path} has no train split")
    if not val_seqs:
        raise ConfigError(
            f"manifest {manifest_path} has no val split; training needs one")
    return manifest, train_seqs, val_seqs


def _cmd_train(args) -> int:
    resolved = _resolve(args)
    _echo_config(resolved, args.out)
    manifest, train_seqs, val_seqs = _load_labeled_splits(args.data)
    model_cfg = cfgmod.model_config_from(resolved, len(manifest.class_names))
    model = HWGAT(model_cfg)
    result = train_loop(
        model, train_seqs, val_seqs, cfgmod.train_config_from(resolved),
        args.out, augment_cfg=cfgmod.augment_config_from(resolved),
        resume_from=args.resume, quiet=args.quiet)
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {result.epochs_run} epochs; best val loss "
          f"{result.best_val_loss:.6f}; last top1={last.get('top1', 0.0):.3f} "
          f"top5={last.get('top5', 0.0):.3f}")
    print(f"checkpoints: best={result.best_path} last={result.last_path}")
    return 0


def _cmd_eval(args) -> int:
    resolved = _resolve(args)
    model, _ = model_from_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    seqs = load_split(manifest, args.split)
    if not seqs:
        raise ConfigError(f"manifest {args.data} has no {args.split} split")
    metrics = evaluate(model, seqs, resolved["train.batch_size"])
    print(f"split={args.split} n={len(seqs)} loss={metrics['loss']:.6f} "
          f"top1={metrics['top1']:.4f} top5={metrics['top5']:.4f}")
    return 0


def _cmd_finetune(args) -> int:
    resolved = _resolve(args)
    _echo_config(resolved, args.out)
    manifest, train_seqs, val_seqs = _load_labeled_splits(args.data)
    result = finetune(
        args.checkpoint, len(manifest.class_names), train_seqs, val_seqs,
        cfgmod.train_config_from(resolved), args.out,
        augment_cfg=cfgmod.augment_config_from(resolved), quiet=args.quiet)
    print(f"finetuned {result.epochs_run} epochs; best val loss "
          f"{result.best_val_loss:.6f}")
    print(f"checkpoints: best={result.best_path} last={result.last_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    dtype = "float64" if args.precision == "double" else "float32"
    cfg = ModelConfig(num_classes=TOY_CLASSES, dtype=dtype, seed=args.seed,
                      use_regularizer=args.regularizer, **TOY_MODEL)
    model = HWGAT(cfg)
    rng = stream_rng(args.seed, DATA_STREAM)
    inputs = rng.uniform(-1.0, 1.0,
                         (TOY_BATCH, cfg.frames, model.layout.total_nodes, 2))
    targets = rng.integers(0, TOY_CLASSES, TOY_BATCH)
    frozen = None
    if args.regularizer:
        model.forward(inputs, training=True, rng=rng)
        frozen = model.keep_masks()
    if dtype == "float32":
        # float32 finite differences are noise-bound; use the float64 oracle
        report = fd_check_promoted(model, inputs, targets, frozen_masks=frozen)
    else:
        report = fd_gradient_check(model, inputs, targets, frozen_masks=frozen)
    tol = FD_TOLERANCE[dtype]
    print(f"precision={args.precision} step={report.step:g} "
          f"floor={report.floor:g} tolerance={tol:g} "
          f"params={model.num_params()}")
    for entry in report.entries:
        status = "ok" if entry.max_rel_err <= tol else "FAIL"
        print(f"{status:4s} {entry.name:48s} max_rel_err={entry.max_rel_err:.3e}")
    if not report.passed(tol):
        worst = report.worst
        raise NumericError(
            f"gradient check failed: {worst.name} rel err {worst.max_rel_err:.3e} "
            f"(analytic {worst.analytic:.6e}, numeric {worst.numeric:.6e})"
        )
    print(f"PASS max_rel_err={report.max_rel_err:.3e}")
    return 0


def _parse_axes(specs: list[str]) -> dict[str, list]:
    axes = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"axis must look like key=v1,v2 got {spec!r}")
        key, _, raw = spec.partition("=")
        key = key.strip()
        if key not in cfgmod.REGISTRY:
            raise ConfigError(f"unknown config key {key!r} in axis")
        prefix, _, field = key.partition(".")
        if prefix not in ("model", "train"):
            raise ConfigError(f"ablation axes must be model.* or train.* keys, got {key!r}")
        values = [cfgmod.parse_value(key, v) for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"axis {key!r} has no values")
        axes[field] = values
    if not axes:
        raise ConfigError("ablate needs at least one --axis")
    return axes


def _cmd_ablate(args) -> int:
    resolved = _resolve(args)
    _echo_config(resolved, args.out)
    manifest, train_seqs, val_seqs = _load_labeled_splits(args.data)
    axes = _parse_axes(args.axis)
    base_model = cfgmod.model_config_from(
        resolved, len(manifest.class_names)).to_dict()
    base_train = cfgmod.train_config_from(resolved).to_dict()
    rows = run_ablation_grid(base_model, base_train, axes,
                             train_seqs, val_seqs, args.out)
    ok = sum(1 for r in rows if r["status"] == "ok")
    print(f"ablation rows: {len(rows)} ok: {ok} "
          f"table: {os.path.join(args.out, 'ablation.jsonl')}")
    for row in rows:
        print(row)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hwgat",
        description="Skeleton-based isolated sign recognition with a "
                    "hierarchical windowed graph attention network.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("inspect-schema", help="print the 27-node skeleton schema") \
        .set_defaults(fn=_cmd_inspect_schema)

    p = sub.add_parser("inspect-windows",
                       help="print window node lists and a block adjacency")
    p.add_argument("--shifted", action="store_true",
                   help="show the rolled-seam adjacency variant")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_inspect_windows)

    p = sub.add_parser("preprocess", help="normalize and fill one sequence file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--full-pose", action="store_true",
                   help="input holds 33+21+21 landmarks per frame")
    p.add_argument("--to-pixel", action="store_true",
                   help="input coordinates are [0,1]-normalized")
    p.set_defaults(fn=_cmd_preprocess)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("finetune",
                       help="adapt a checkpoint to a new class inventory")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of all gradients")
    p.add_argument("--precision", default="double", choices=("double", "single"))
    p.add_argument("--regularizer", action="store_true",
                   help="check the attention-dropout path with frozen masks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="run a configuration grid")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True)
    p.add_argument("--axis", action="append", default=[],
                   metavar="KEY=V1,V2", help="repeatable; full product is run")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except HwgatError as exc:
        print(f"error ({exc.category}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
