"""Optimization loop: smoothed cross entropy, AdamW, plateau-gated cosine
learning rate, early stopping, metrics logging, and checkpointing.

Determinism contract: every random stream is derived from (seed, purpose,
epoch[, sequence id]) alone, so a run resumed from epoch e replays epochs
e+1.. bit-for-bit without storing generator state.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, IoError, NumericError
from .model import HWGAT, ModelConfig
from .nn import Param
from .preprocess import (AugmentConfig, augment_sequence, fill_missing,
                         normalize_bbox, resample_to_length, sequence_rng)
from .rng import DROPOUT_STREAM, EPOCH_STREAM, stream_rng
from .sequence import SkeletonSequence
from .windows import apply_windows

CHECKPOINT_VERSION = 1
SCHEDULER_MODES = ("plateau", "epoch")


@dataclass
class TrainConfig:
    """Loop hyperparameters; defaults target desk-scale runs."""

    lr: float = 1e-4
    epochs_max: int = 400
    early_stop_patience: int = 60
    scheduler_patience: int = 20
    scheduler_mode: str = "plateau"
    cosine_steps: int = 20
    eta_min_ratio: float = 1e-3
    label_smoothing: float = 0.1
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs_max < 1:
            raise ConfigError(f"epochs_max must be >= 1, got {self.epochs_max}")
        if self.early_stop_patience < 1 or self.scheduler_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.scheduler_mode not in SCHEDULER_MODES:
            raise ConfigError(
                f"scheduler_mode must be one of {SCHEDULER_MODES}, "
                f"got {self.scheduler_mode!r}"
            )
        if self.cosine_steps < 1:
            raise ConfigError(f"cosine_steps must be >= 1, got {self.cosine_steps}")
        if not 0.0 < self.eta_min_ratio <= 1.0:
            raise ConfigError(
                f"eta_min_ratio must be in (0, 1], got {self.eta_min_ratio}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def label_smoothed_ce(logits: np.ndarray, targets: np.ndarray,
                      smoothing: float) -> tuple[float, np.ndarray]:
    """Mean smoothed cross entropy over the batch and its logits gradient.

    The target distribution puts 1 - smoothing on the true class and
    smoothing / (C - 1) on every other class; smoothing 0 is plain CE.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    batch, classes = logits.shape
    if smoothing > 0 and classes < 2:
        raise ConfigError("label smoothing needs at least 2 classes")
    if targets.shape != (batch,):
        raise DataError(f"expected {batch} targets, got shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= classes):
        raise DataError(
            f"target indices must lie in [0, {classes}), got {targets.tolist()}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    smooth_q = np.full((batch, classes), smoothing / (classes - 1) if classes > 1 else 0.0)
    smooth_q[np.arange(batch), targets] = 1.0 - smoothing
    loss = float(-(smooth_q * log_probs).sum(axis=1).mean())
    dlogits = (np.exp(log_probs) - smooth_q) / batch
    return loss, dlogits


class AdamW:
    """Decoupled weight-decay Adam over a fixed list of named parameters."""

    def __init__(self, params: list[tuple[str, Param]], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {name: np.zeros_like(p.value) for name, p in params}
        self.v = {name: np.zeros_like(p.value) for name, p in params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            p.value *= 1.0 - lr * cfg.weight_decay
            p.value -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class SchedulerState:
    cosine_step: int = 0
    plateau_count: int = 0
    best_loss: float = math.inf


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine decay from lr to lr * eta_min_ratio over cosine_steps."""
    if step <= 0:
        return cfg.lr
    t = min(step, cfg.cosine_steps)
    eta_min = cfg.lr * cfg.eta_min_ratio
    return eta_min + (cfg.lr - eta_min) * 0.5 * (1.0 + math.cos(math.pi * t / cfg.cosine_steps))


def scheduler_lr(state: SchedulerState, epoch: int, cfg: TrainConfig) -> float:
    """The learning rate to use for ``epoch`` given the state so far."""
    if cfg.scheduler_mode == "epoch":
        return cosine_lr(epoch, cfg)
    return cosine_lr(state.cosine_step, cfg)


def scheduler_observe(state: SchedulerState, val_loss: float,
                      cfg: TrainConfig) -> SchedulerState:
    """Advance the plateau-gated cosine one step after enough stagnation."""
    if val_loss < state.best_loss:
        return SchedulerState(state.cosine_step, 0, val_loss)
    plateau = state.plateau_count + 1
    if plateau >= cfg.scheduler_patience:
        return SchedulerState(state.cosine_step + 1, 0, state.best_loss)
    return SchedulerState(state.cosine_step, plateau, state.best_loss)


def lr_schedule(epoch: int, val_history: list[float], cfg: TrainConfig) -> float:
    """Replay the schedule over a validation-loss history up to ``epoch``."""
    state = SchedulerState()
    for loss in val_history[:epoch]:
        state = scheduler_observe(state, loss, cfg)
    return scheduler_lr(state, epoch, cfg)


def prepare_sequence(seq: SkeletonSequence, frames: int, layout,
                     training: bool = False,
                     rng: np.random.Generator | None = None,
                     augment_cfg: AugmentConfig | None = None) -> np.ndarray:
    """Normalize, fill, optionally augment, resample, window: (F, K', 2)."""
    seq = normalize_bbox(seq)
    seq = fill_missing(seq)
    if training and augment_cfg is not None:
        seq = augment_sequence(seq, augment_cfg, rng)
    seq = resample_to_length(seq, frames, rng, training)
    return apply_windows(seq.frames, layout)


def prepare_batch(seqs: list[SkeletonSequence], frames: int, layout,
                  training: bool = False, seed: int = 0, epoch: int = 0,
                  augment_cfg: AugmentConfig | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Stack prepared sequences; per-sequence RNG keyed by (seed, epoch, id)."""
    inputs = []
    labels = []
    for seq in seqs:
        rng = sequence_rng(seed, epoch, seq.id) if training else None
        inputs.append(prepare_sequence(seq, frames, layout, training, rng, augment_cfg))
        labels.append(seq.label)
    return np.stack(inputs), np.asarray(labels, dtype=np.int64)


def evaluate(model: HWGAT, seqs: list[SkeletonSequence],
             batch_size: int = 16, smoothing: float = 0.0) -> dict:
    """Loss plus top-1/top-5 per-instance accuracy; ties pick the lowest class."""
    if not seqs:
        raise ConfigError("cannot evaluate on an empty dataset")
    total = len(seqs)
    top1_hits = 0
    top5_hits = 0
    loss_sum = 0.0
    for start in range(0, total, batch_size):
        chunk = seqs[start:start + batch_size]
        inputs, labels = prepare_batch(chunk, model.cfg.frames, model.layout)
        logits = model.forward(inputs)
        loss, _ = label_smoothed_ce(logits, labels, smoothing)
        loss_sum += loss * len(chunk)
        order = np.argsort(-logits, axis=1, kind="stable")
        top1_hits += int((order[:, 0] == labels).sum())
        k = min(5, logits.shape[1])
        top5_hits += int((order[:, :k] == labels[:, None]).any(axis=1).sum())
    return {
        "loss": loss_sum / total,
        "top1": top1_hits / total,
        "top5": top5_hits / total,
    }


def save_checkpoint(path: str, model: HWGAT, train_cfg: TrainConfig,
                    optimizer: AdamW, sched: SchedulerState, epoch: int,
                    best_val_loss: float, epochs_since_improvement: int) -> None:
    """Atomic npz snapshot of config, parameters, moments, and counters."""
    arrays = {
        "meta/version": np.int64(CHECKPOINT_VERSION),
        "meta/model_config": np.frombuffer(
            json.dumps(model.cfg.to_dict()).encode(), dtype=np.uint8),
        "meta/train_config": np.frombuffer(
            json.dumps(train_cfg.to_dict()).encode(), dtype=np.uint8),
        "meta/epoch": np.int64(epoch),
        "meta/best_val_loss": np.float64(best_val_loss),
        "meta/epochs_since_improvement": np.int64(epochs_since_improvement),
        "meta/step_count": np.int64(optimizer.step_count),
        "meta/sched_cosine_step": np.int64(sched.cosine_step),
        "meta/sched_plateau_count": np.int64(sched.plateau_count),
        "meta/sched_best_loss": np.float64(sched.best_loss),
        "buffer/fourier_freqs": model.embed.freqs,
    }
    for name, p in model.named_params():
        arrays[f"param/{name}"] = p.value
        arrays[f"adam_m/{name}"] = optimizer.m[name]
        arrays[f"adam_v/{name}"] = optimizer.v[name]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict:
    """Read and validate a checkpoint into plain dicts; no state applied."""
    if not os.path.exists(path):
        raise IoError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise IoError(f"unreadable checkpoint {path}: {exc}") from exc
    required = (
        "meta/version", "meta/model_config", "meta/train_config",
        "meta/epoch", "meta/best_val_loss", "meta/epochs_since_improvement",
        "meta/step_count", "meta/sched_cosine_step",
        "meta/sched_plateau_count", "meta/sched_best_loss",
        "buffer/fourier_freqs",
    )
    for key in required:
        if key not in arrays:
            raise IoError(f"checkpoint {path} is missing {key}")
    version = int(arrays["meta/version"])
    if version != CHECKPOINT_VERSION:
        raise IoError(
            f"checkpoint version {version} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        model_cfg = json.loads(bytes(arrays["meta/model_config"]).decode())
        train_cfg = json.loads(bytes(arrays["meta/train_config"]).decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise IoError(f"corrupt config block in checkpoint {path}: {exc}") from exc
    params = {k[len("param/"):]: v for k, v in arrays.items()
              if k.startswith("param/")}
    return {
        "model_config": model_cfg,
        "train_config": train_cfg,
        "params": params,
        "adam_m": {k[len("adam_m/"):]: v for k, v in arrays.items()
                   if k.startswith("adam_m/")},
        "adam_v": {k[len("adam_v/"):]: v for k, v in arrays.items()
                   if k.startswith("adam_v/")},
        "fourier_freqs": arrays["buffer/fourier_freqs"],
        "epoch": int(arrays["meta/epoch"]),
        "best_val_loss": float(arrays["meta/best_val_loss"]),
        "epochs_since_improvement": int(arrays["meta/epochs_since_improvement"]),
        "step_count": int(arrays["meta/step_count"]),
        "sched": SchedulerState(
            cosine_step=int(arrays["meta/sched_cosine_step"]),
            plateau_count=int(arrays["meta/sched_plateau_count"]),
            best_loss=float(arrays["meta/sched_best_loss"]),
        ),
    }


def _apply_params(model: HWGAT, params: dict, skip_prefix: str | None = None) -> None:
    """Assign saved tensors onto the model; shapes must match exactly."""
    named = dict(model.named_params())
    for name, p in named.items():
        if skip_prefix is not None and name.startswith(skip_prefix):
            continue
        if name not in params:
            raise IoError(f"checkpoint is missing parameter {name}")
        if params[name].shape != p.value.shape:
            raise IoError(
                f"parameter {name} has shape {params[name].shape}, "
                f"model expects {p.value.shape}"
            )
        p.value[...] = params[name]
    extras = [n for n in params
              if n not in named
              and not (skip_prefix is not None and n.startswith(skip_prefix))]
    if extras:
        raise IoError(f"checkpoint has unknown parameters: {sorted(extras)}")


def model_from_checkpoint(path: str) -> tuple[HWGAT, dict]:
    """Rebuild the model a checkpoint describes with its exact parameters."""
    ckpt = load_checkpoint(path)
    model = HWGAT(ModelConfig.from_dict(ckpt["model_config"]))
    _apply_params(model, ckpt["params"])
    model.embed.freqs = ckpt["fourier_freqs"]
    return model, ckpt


@dataclass
class TrainResult:
    metrics: list[dict]
    best_path: str
    last_path: str
    epochs_run: int
    best_val_loss: float


def train_loop(model: HWGAT, train_seqs: list[SkeletonSequence],
               val_seqs: list[SkeletonSequence], cfg: TrainConfig,
               out_dir: str, augment_cfg: AugmentConfig | None = None,
               resume_from: str | None = None,
               quiet: bool = True) -> TrainResult:
    """Train until epochs_max or early stop; keep best/last checkpoints.

    Writes one JSON line per epoch to metrics.jsonl (epoch, train_loss,
    val_loss, lr, top1, top5).  Validation top-k and the scheduler use the
    same smoothed loss as training so the logged quantities are comparable.
    """
    if not train_seqs or not val_seqs:
        raise ConfigError("training and validation datasets must be non-empty")
    for seq in train_seqs + val_seqs:
        if not 0 <= seq.label < model.cfg.num_classes:
            raise DataError(
                f"sequence {seq.id} has label {seq.label}, "
                f"model has {model.cfg.num_classes} classes"
            )
    os.makedirs(out_dir, exist_ok=True)
    best_path = os.path.join(out_dir, "best.npz")
    last_path = os.path.join(out_dir, "last.npz")
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    if augment_cfg is None and cfg.augment:
        augment_cfg = AugmentConfig()

    optimizer = AdamW(list(model.named_params()), cfg)
    sched = SchedulerState()
    start_epoch = 0
    best_val_loss = math.inf
    epochs_since_improvement = 0
    metrics: list[dict] = []
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt["model_config"] != model.cfg.to_dict():
            raise IoError("resume checkpoint was built for a different model config")
        _apply_params(model, ckpt["params"])
        model.embed.freqs = ckpt["fourier_freqs"]
        for name, _ in optimizer.params:
            optimizer.m[name][...] = ckpt["adam_m"][name]
            optimizer.v[name][...] = ckpt["adam_v"][name]
        optimizer.step_count = ckpt["step_count"]
        sched = ckpt["sched"]
        start_epoch = ckpt["epoch"] + 1
        best_val_loss = ckpt["best_val_loss"]
        epochs_since_improvement = ckpt["epochs_since_improvement"]

    mode = "a" if resume_from is not None else "w"
    num_train = len(train_seqs)
    epochs_run = start_epoch
    with open(metrics_path, mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, cfg.epochs_max):
            lr = scheduler_lr(sched, epoch, cfg)
            order = stream_rng(cfg.seed, EPOCH_STREAM, epoch).permutation(num_train)
            dropout_rng = stream_rng(cfg.seed, DROPOUT_STREAM, epoch)
            loss_sum = 0.0
            for start in range(0, num_train, cfg.batch_size):
                chunk = [train_seqs[i] for i in order[start:start + cfg.batch_size]]
                inputs, labels = prepare_batch(
                    chunk, model.cfg.frames, model.layout, training=True,
                    seed=cfg.seed, epoch=epoch,
                    augment_cfg=augment_cfg if cfg.augment else None)
                model.zero_grad()
                logits = model.forward(inputs, training=True, rng=dropout_rng)
                loss, dlogits = label_smoothed_ce(logits, labels, cfg.label_smoothing)
                model.backward(dlogits)
                optimizer.step(lr)
                loss_sum += loss * len(chunk)
            train_loss = loss_sum / num_train
            val = evaluate(model, val_seqs, cfg.batch_size, cfg.label_smoothing)
            record = {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val["loss"],
                "lr": lr,
                "top1": val["top1"],
                "top5": val["top5"],
            }
            metrics.append(record)
            log.write(json.dumps(record) + "\n")
            log.flush()
            if not quiet:
                print(
                    f"epoch {epoch}: train_loss={train_loss:.4f} "
                    f"val_loss={val['loss']:.4f} lr={lr:.2e} "
                    f"top1={val['top1']:.3f} top5={val['top5']:.3f}"
                )
            sched = scheduler_observe(sched, val["loss"], cfg)
            improved = val["loss"] < best_val_loss
            if improved:
                best_val_loss = val["loss"]
                epochs_since_improvement = 0
            else:
                epochs_since_improvement += 1
            save_checkpoint(last_path, model, cfg, optimizer, sched, epoch,
                            best_val_loss, epochs_since_improvement)
            if improved:
                save_checkpoint(best_path, model, cfg, optimizer, sched, epoch,
                                best_val_loss, epochs_since_improvement)
            epochs_run = epoch + 1
            if epochs_since_improvement >= cfg.early_stop_patience:
                break
    if not os.path.exists(best_path):
        save_checkpoint(best_path, model, cfg, optimizer, sched,
                        epochs_run - 1, best_val_loss, epochs_since_improvement)
    return TrainResult(metrics, best_path, last_path, epochs_run, best_val_loss)


def finetune(checkpoint_path: str, num_classes: int,
             train_seqs: list[SkeletonSequence],
             val_seqs: list[SkeletonSequence], cfg: TrainConfig, out_dir: str,
             augment_cfg: AugmentConfig | None = None,
             quiet: bool = True) -> TrainResult:
    """Reuse a trained backbone on a new class count; classifier reinitialized."""
    ckpt = load_checkpoint(checkpoint_path)
    model_cfg = ModelConfig.from_dict(
        {**ckpt["model_config"], "num_classes": num_classes})
    model = HWGAT(model_cfg)
    _apply_params(model, ckpt["params"], skip_prefix="classifier.")
    model.embed.freqs = ckpt["fourier_freqs"]
    return train_loop(model, train_seqs, val_seqs, cfg, out_dir,
                      augment_cfg=augment_cfg, quiet=quiet)
