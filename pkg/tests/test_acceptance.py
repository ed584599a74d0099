"""Acceptance suite: ten end-to-end checks with fixed tolerances and
runtime budgets.  Each check prints one summary line on success; a failing
check surfaces through its assertion.
"""

import json
import math
import time

import numpy as np
import pytest

from hwgat import _kernels as kernels
from hwgat.data import SyntheticSpec, generate_synthetic, load_split
from hwgat.model import HWGAT, GraphAttentionBlock, ModelConfig
from hwgat.preprocess import (
    AugmentConfig,
    augment_geometry,
    augment_sequence,
    mask_and_fill_hands,
    normalize_bbox,
    resample_to_length,
    temporal_speed_augment,
)
from hwgat.rng import DATA_STREAM, stream_rng
from hwgat.skeleton import build_default_schema
from hwgat.training import (
    SchedulerState,
    TrainConfig,
    evaluate,
    label_smoothed_ce,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    scheduler_lr,
    train_loop,
)
from hwgat.verification import (
    dense_attention_reference,
    fd_check_promoted,
    fd_gradient_check,
    run_ablation_grid,
)
from hwgat.windows import build_block_adjacency, build_window_layout, shift_frames

from conftest import make_sequence

# smallest config exercising two hierarchy levels: 8 frames in blocks of 2,
# two layers of one attention block, 2 heads on 8 channels, 4 windows
TOY = dict(frames=8, block_len=2, num_layers=2, blocks_per_layer=1,
           num_heads=2, embed_dim=8, window_mode="four")

WINDOW_MODES = ("one", "two", "four")


SUMMARY_LINES: list[str] = []


def _summary(idx: int, name: str, detail: str) -> None:
    line = f"[{idx:2d}/10] {name}: PASS ({detail})"
    SUMMARY_LINES.append(line)
    print(line)


# ---------------------------------------------------------------- criterion 1

def test_01_attention_mask_correctness():
    """Hard-masked attention rows sum to 1 on edges, are exactly 0 off them."""
    t0 = time.monotonic()
    schema = build_default_schema()
    heads, head_dim, trials = 2, 4, 100
    worst_row = 0.0
    for block_len in (2, 4):
        for mode_idx, mode in enumerate(WINDOW_MODES):
            layout = build_window_layout(schema, mode)
            plain = build_block_adjacency(layout, block_len).mask
            flags = np.arange(block_len) >= block_len - block_len // 2
            rolled = build_block_adjacency(layout, block_len, flags).mask
            masks = np.stack([plain, rolled])
            n = plain.shape[0]
            bias = np.where(masks == 1.0, 0.0, -np.inf).astype(np.float32)
            rng = stream_rng(block_len, mode_idx)
            shape = (trials, heads, n, head_dim)
            q = rng.standard_normal(shape).astype(np.float32)
            k = rng.standard_normal(shape).astype(np.float32)
            v = rng.standard_normal(shape).astype(np.float32)
            idx = (np.arange(trials) % 2).astype(np.int64)
            _, probs = kernels.attention_forward(
                q, k, v, bias, idx, 1.0 / math.sqrt(head_dim))
            sums = probs.sum(axis=-1, dtype=np.float64)
            worst_row = max(worst_row, float(np.abs(sums - 1.0).max()))
            assert np.abs(sums - 1.0).max() <= 1e-6
            off = np.broadcast_to(masks[idx][:, None] == 0.0, probs.shape)
            assert (probs[off] == 0.0).all()
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    _summary(1, "attention mask correctness",
             f"600 blocks, worst row-sum err {worst_row:.2e}, "
             f"off-edge exactly 0, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 2

def test_02_dense_oracle_and_stacked_equivalence():
    """Production attention matches the dense reference and block stacking."""
    t0 = time.monotonic()
    worst = 0.0
    for trial in range(50):
        cfg = ModelConfig(num_classes=2, frames=2, block_len=2, num_layers=1,
                          blocks_per_layer=1, num_heads=2, embed_dim=8,
                          window_mode="one", mask_compat=bool(trial % 2),
                          dtype="float32")
        model = HWGAT(cfg)
        block = GraphAttentionBlock(stream_rng(trial, 13), cfg.embed_dim, cfg,
                                    model.layout, shifted=False, label="t")
        x = stream_rng(trial, 11).standard_normal((1, 2, 27, 8)) \
            .astype(np.float32)
        got = block.forward(x).reshape(54, 8)
        want = dense_attention_reference(
            x.reshape(54, 8).astype(np.float64), block)
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-6

    # per-window attention equals one stacked block-diagonal computation
    layout = build_window_layout(build_default_schema(), "four")
    block_len, heads, head_dim = 2, 2, 4
    n = block_len * layout.window_size
    windows = layout.num_windows
    mask = build_block_adjacency(layout, block_len).mask
    bias = np.where(mask == 1.0, 0.0, -np.inf).astype(np.float32)[None]
    big = np.full((windows * n, windows * n), -np.inf)
    for w in range(windows):
        big[w * n:(w + 1) * n, w * n:(w + 1) * n] = bias[0]
    big = big.astype(np.float32)[None]
    worst_stack = 0.0
    for trial in range(50):
        rng = stream_rng(trial, 17)
        shape = (windows, heads, n, head_dim)
        q = rng.standard_normal(shape).astype(np.float32)
        k = rng.standard_normal(shape).astype(np.float32)
        v = rng.standard_normal(shape).astype(np.float32)
        scale = 1.0 / math.sqrt(head_dim)
        zero = np.zeros(windows, dtype=np.int64)
        per, _ = kernels.attention_forward(q, k, v, bias, zero, scale)
        stack = lambda a: np.ascontiguousarray(
            a.transpose(1, 0, 2, 3)).reshape(1, heads, windows * n, head_dim)
        out, _ = kernels.attention_forward(
            stack(q), stack(k), stack(v), big,
            np.zeros(1, dtype=np.int64), scale)
        back = out.reshape(heads, windows, n, head_dim).transpose(1, 0, 2, 3)
        worst_stack = max(worst_stack, float(np.abs(back - per).max()))
    assert worst_stack <= 1e-6
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    _summary(2, "dense oracle equivalence",
             f"50 blocks max err {worst:.2e}, stacked max err "
             f"{worst_stack:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 3

def test_03_gradient_exactness_both_precisions():
    """Analytic gradients match finite differences in double and single."""
    t0 = time.monotonic()
    results = {}
    for dtype, tol in (("float64", 1e-5), ("float32", 1e-3)):
        cfg = ModelConfig(num_classes=3, dtype=dtype, seed=0, **TOY)
        model = HWGAT(cfg)
        rng = stream_rng(0, DATA_STREAM)
        inputs = rng.uniform(-1.0, 1.0,
                             (2, cfg.frames, model.layout.total_nodes, 2))
        targets = rng.integers(0, 3, 2)
        if dtype == "float32":
            report = fd_check_promoted(model, inputs, targets)
        else:
            report = fd_gradient_check(model, inputs, targets)
        assert report.passed(tol), report.worst
        results[dtype] = report.max_rel_err
    elapsed = time.monotonic() - t0
    assert elapsed < 300.0
    _summary(3, "gradient exactness",
             f"double {results['float64']:.2e} <= 1e-5, "
             f"single {results['float32']:.2e} <= 1e-3, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4

def test_04_shape_law():
    """Each layer divides frames by the block length and widens channels."""
    assert build_window_layout(build_default_schema(), "four").total_nodes == 64
    checked = 0
    for block_len in (2, 4):
        for num_layers in (1, 2, 3):
            frames = block_len ** num_layers * 4
            cfg = ModelConfig(num_classes=2, frames=frames,
                              block_len=block_len, num_layers=num_layers,
                              blocks_per_layer=1, num_heads=2, embed_dim=8,
                              window_mode="four", dtype="float64")
            model = HWGAT(cfg)
            x = np.random.default_rng(4).uniform(
                -1, 1, (1, frames, model.layout.total_nodes, 2))
            model.forward(x)
            assert len(model.layer_shapes) == num_layers
            for level, shape in enumerate(model.layer_shapes, start=1):
                assert shape == (frames // block_len ** level, 64,
                                 cfg.embed_dim * block_len ** level)
                checked += 1
    _summary(4, "shape law",
             f"{checked} layer shapes exact, default node count 64")


# ---------------------------------------------------------------- criterion 5

def test_05_shift_round_trip_and_seam_masking():
    """Rolling forth and back is exact; rolled frames never attend across."""
    rng = np.random.default_rng(5)
    rt = 0
    for total in (4, 8, 10):
        x = rng.standard_normal((total, 3, 2))
        for shift in range(1, total):
            rolled, flags = shift_frames(x, shift)
            back, _ = shift_frames(rolled, total - shift)
            assert np.array_equal(back, x)
            assert flags.sum() == shift and flags[total - shift:].all()
            rt += 1

    block_len, frames, windows = 4, 8, 4
    cfg = ModelConfig(num_classes=2, frames=frames, block_len=block_len,
                      num_layers=1, blocks_per_layer=2, num_heads=2,
                      embed_dim=8, window_mode="four", dtype="float64",
                      use_shift=True, seed=5)
    model = HWGAT(cfg)
    x = rng.uniform(-1, 1, (2, frames, model.layout.total_nodes, 2))
    model.forward(x)
    last = model.layers[-1].blocks[-1]
    assert last.shift == block_len // 2
    w = last.window_size
    n = block_len * w
    probs = last.last_probs.reshape(2, frames // block_len, windows,
                                    last.heads, n, n)
    rolled_node = np.repeat(np.arange(block_len) >= block_len - last.shift, w)
    seam = rolled_node[:, None] != rolled_node[None, :]
    # the wrapped frames live in the final temporal block after the roll
    assert (probs[:, -1][..., seam] == 0.0).all()
    assert probs[:, -1][..., ~seam].max() > 0.0
    _summary(5, "shift round trip and seam masking",
             f"{rt} round trips exact, seam attention exactly 0")


# ---------------------------------------------------------------- criterion 6

@pytest.fixture(scope="module")
def overfit_dataset(tmp_path_factory):
    spec = SyntheticSpec(num_classes=8, per_class=20,
                         ratios=(0.8, 0.2, 0.0), seed=0)
    out = tmp_path_factory.mktemp("overfit")
    manifest, _ = generate_synthetic(spec, str(out))
    return load_split(manifest, "train"), load_split(manifest, "val")


def test_06_synthetic_overfit(overfit_dataset, tmp_path):
    """Toy model separates 8 synthetic classes, 16 train / 4 held out each."""
    t0 = time.monotonic()
    train_seqs, heldout = overfit_dataset
    assert len(train_seqs) == 128 and len(heldout) == 32
    model = HWGAT(ModelConfig(num_classes=8, seed=0, **TOY))
    cfg = TrainConfig(lr=1e-3, epochs_max=100, early_stop_patience=400,
                      seed=0)
    result = train_loop(model, train_seqs, heldout, cfg, str(tmp_path))
    assert result.epochs_run <= 300
    best, _ = model_from_checkpoint(result.best_path)
    train_top1 = evaluate(best, train_seqs, cfg.batch_size)["top1"]
    held_top1 = evaluate(best, heldout, cfg.batch_size)["top1"]
    elapsed = time.monotonic() - t0
    assert train_top1 >= 0.95
    assert held_top1 >= 0.90
    assert elapsed < 900.0
    _summary(6, "synthetic overfit",
             f"train top-1 {train_top1:.3f} >= 0.95, held-out top-1 "
             f"{held_top1:.3f} >= 0.90, {result.epochs_run} epochs, "
             f"{elapsed:.0f}s")


# ---------------------------------------------------------------- criterion 7

def test_07_ablation_grid_viability(tiny_dataset, tmp_path):
    """Every published configuration axis trains and emits a results row."""
    t0 = time.monotonic()
    base_model = dict(num_classes=4, frames=16, block_len=2, num_layers=2,
                      blocks_per_layer=2, num_heads=2, embed_dim=8,
                      window_mode="four")
    base_train = dict(lr=1e-3, epochs_max=2, early_stop_patience=10, seed=0)
    axes = [
        {"window_mode": ["one", "two", "four"]},
        {"block_len": [2, 4]},
        {"use_shift": [True, False]},
        {"edge_bias": ["hard", "none", "learnable"]},
        {"use_regularizer": [True, False]},
    ]
    rows = []
    for i, axis in enumerate(axes):
        rows += run_ablation_grid(base_model, base_train, axis,
                                  tiny_dataset["train"], tiny_dataset["val"],
                                  str(tmp_path / f"axis{i}"))
    assert len(rows) == 12
    assert all(r["status"] == "ok" for r in rows)
    assert all({"epochs", "best_val_loss", "top1", "top5"} <= set(r)
               for r in rows)
    elapsed = time.monotonic() - t0
    _summary(7, "ablation grid viability",
             f"12 configurations trained, 12 ok rows, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 8

def test_08_loss_and_schedule_closed_forms():
    """Smoothing at 0 is plain CE; uniform logits give ln C; lr starts 1e-4."""
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((5, 7))
    targets = rng.integers(0, 7, 5)
    loss0, _ = label_smoothed_ce(logits, targets, 0.0)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    plain = float(np.mean(lse - logits[np.arange(5), targets]))
    assert abs(loss0 - plain) <= 1e-7

    uniform = np.full((4, 11), 3.21)
    utargets = np.array([0, 3, 7, 10])
    for smoothing in (0.0, 0.1):
        loss_u, _ = label_smoothed_ce(uniform, utargets, smoothing)
        assert abs(loss_u - math.log(11)) <= 1e-7

    cfg = TrainConfig()
    assert cfg.lr == 1e-4
    assert scheduler_lr(SchedulerState(), 0, cfg) == 1e-4
    _summary(8, "loss and schedule closed forms",
             "eps=0 CE == plain CE, uniform CE == ln C, epoch-0 lr == 1e-4")


# ---------------------------------------------------------------- criterion 9

def test_09_determinism_and_persistence(tiny_dataset, tmp_path):
    """Same seed, same metrics; checkpoints round-trip bit-exactly."""
    t0 = time.monotonic()
    cfg = TrainConfig(lr=1e-3, epochs_max=3, early_stop_patience=50,
                      batch_size=8, seed=0)
    runs = []
    for tag in ("a", "b"):
        model = HWGAT(ModelConfig(num_classes=4, seed=0, **TOY))
        runs.append(train_loop(model, tiny_dataset["train"],
                               tiny_dataset["val"], cfg,
                               str(tmp_path / tag)))
    assert runs[0].metrics == runs[1].metrics

    ckpt = load_checkpoint(runs[0].last_path)
    model_b, _ = model_from_checkpoint(runs[1].last_path)
    reloaded, _ = model_from_checkpoint(runs[0].last_path)
    for (name, p), (_, q) in zip(model_b.named_params(),
                                 reloaded.named_params()):
        assert p.value.dtype == q.value.dtype
        assert np.array_equal(p.value, q.value), name

    full_cfg = TrainConfig(lr=1e-3, epochs_max=5, early_stop_patience=50,
                           batch_size=8, seed=0)
    model = HWGAT(ModelConfig(num_classes=4, seed=0, **TOY))
    full = train_loop(model, tiny_dataset["train"], tiny_dataset["val"],
                      full_cfg, str(tmp_path / "full"))
    resumed = train_loop(
        HWGAT(ModelConfig(num_classes=4, seed=0, **TOY)),
        tiny_dataset["train"], tiny_dataset["val"], full_cfg,
        str(tmp_path / "resumed"), resume_from=runs[0].last_path)
    assert resumed.metrics == full.metrics[3:]
    elapsed = time.monotonic() - t0
    _summary(9, "determinism and persistence",
             f"twin runs identical, checkpoints bit-exact, resume matches "
             f"uninterrupted, {elapsed:.1f}s")


# --------------------------------------------------------------- criterion 10

def test_10_preprocessing_contracts():
    """Normalization is idempotent; null augmentations change nothing."""
    identity = AugmentConfig(shear_range=0.0, rotation_range=0.0,
                             hand_mask_prob=0.0, speed_range=(1.0, 1.0))
    worst = 0.0
    for seed in range(10):
        seq = make_sequence(num_frames=9, seed=seed, seq_id=f"n{seed}")
        once = normalize_bbox(seq)
        twice = normalize_bbox(once)
        worst = max(worst, float(np.abs(twice.frames - once.frames).max()))
        assert worst <= 1e-12

        rng = np.random.default_rng(seed)
        assert np.array_equal(
            augment_geometry(once, identity, rng).frames, once.frames)
        assert np.array_equal(
            mask_and_fill_hands(once, 0.0, rng).frames, once.frames)
        assert np.array_equal(
            temporal_speed_augment(once, (1.0, 1.0), rng).frames, once.frames)
        assert np.array_equal(
            resample_to_length(once, once.num_frames).frames, once.frames)
        assert np.array_equal(
            augment_sequence(once, identity, rng).frames, once.frames)

    # constant hands: masked frames must reproduce the endpoint value exactly
    seq = make_sequence(num_frames=7, seed=3, seq_id="static")
    frames = seq.frames.copy()
    frames[:, 7:27] = frames[0, 7:27]
    static = seq.with_frames(frames)
    filled = mask_and_fill_hands(static, 0.5, np.random.default_rng(0))
    assert np.array_equal(filled.frames, static.frames)
    _summary(10, "preprocessing contracts",
             f"normalize drift {worst:.1e} <= 1e-12, null augmentations "
             f"exact, equal-endpoint fill exact")
