"""Dense attention oracle, gradient checker, and the ablation grid."""

import json

import numpy as np
import pytest

from hwgat.errors import ConfigError
from hwgat.model import HWGAT, GraphAttentionBlock, ModelConfig
from hwgat.rng import stream_rng
from hwgat.training import label_smoothed_ce
from hwgat.verification import (
    FDEntry,
    FDReport,
    dense_attention_reference,
    fd_check_promoted,
    fd_gradient_check,
    promote_to_double,
    run_ablation_grid,
)
from hwgat.windows import build_window_layout


def _standalone_block(seed, mask_compat=False, dtype="float64"):
    cfg = ModelConfig(num_classes=2, frames=2, block_len=2, num_layers=1,
                      blocks_per_layer=1, num_heads=2, embed_dim=8,
                      window_mode="one", mask_compat=mask_compat, dtype=dtype)
    model = HWGAT(cfg)
    block = GraphAttentionBlock(stream_rng(seed, 99), cfg.embed_dim, cfg,
                                model.layout, shifted=False, label="t")
    return cfg, block


@pytest.mark.parametrize("mask_compat", [False, True])
def test_dense_reference_matches_production(mask_compat):
    for trial in range(3):
        cfg, block = _standalone_block(trial, mask_compat=mask_compat)
        rng = stream_rng(trial, 7)
        x = rng.standard_normal((1, 2, 27, 8))
        got = block.forward(x).reshape(54, 8)
        want = dense_attention_reference(x.reshape(54, 8), block)
        assert np.abs(got - want).max() < 1e-12


def test_fd_report_bookkeeping():
    entries = [
        FDEntry("a", 1e-7, (0,), 1.0, 1.0),
        FDEntry("b", 3e-4, (1,), 2.0, 2.1),
    ]
    report = FDReport(precision="float64", step=1e-5, floor=1e-8,
                      entries=entries)
    assert report.max_rel_err == 3e-4
    assert report.worst.name == "b"
    assert not report.passed(1e-5)
    assert report.passed(1e-3)
    assert [e.name for e in report.failing(1e-5)] == ["b"]


def _fd_model():
    cfg = ModelConfig(num_classes=2, frames=4, block_len=2, num_layers=1,
                      blocks_per_layer=1, num_heads=2, embed_dim=8,
                      window_mode="four", dtype="float64", seed=1)
    model = HWGAT(cfg)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(2, 4, model.layout.total_nodes, 2))
    return model, x, np.array([0, 1])


def test_fd_flags_injected_gradient_fault():
    model, x, targets = _fd_model()
    logits = model.forward(x)
    _, dlogits = label_smoothed_ce(logits, targets, 0.0)
    model.zero_grad()
    model.backward(dlogits)
    grads = {name: p.grad.copy() for name, p in model.named_params()}
    honest = fd_gradient_check(model, x, targets, analytic_grads=grads)
    assert honest.passed(1e-5)
    victim = "classifier.weight"
    grads[victim] = grads[victim] * 1.1 + 0.05
    report = fd_gradient_check(model, x, targets, analytic_grads=grads)
    assert not report.passed(1e-5)
    assert victim in [e.name for e in report.failing(1e-5)]


def test_promoted_check_validates_float32_gradients():
    cfg = ModelConfig(num_classes=2, frames=4, block_len=2, num_layers=1,
                      blocks_per_layer=1, num_heads=2, embed_dim=8,
                      window_mode="four", dtype="float32", seed=1)
    model = HWGAT(cfg)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1,
                    size=(2, 4, model.layout.total_nodes, 2)).astype(np.float32)
    targets = np.array([0, 1])
    twin = promote_to_double(model)
    # the twin widens this model's weights rather than reseeding
    got32 = model.forward(x)
    got64 = twin.forward(x.astype(np.float64))
    assert np.abs(got32 - got64).max() < 1e-5
    report = fd_check_promoted(model, x, targets)
    assert report.precision == "float32"
    assert report.passed(1e-3)
    with pytest.raises(ConfigError):
        fd_check_promoted(twin, x.astype(np.float64), targets)


def test_fd_step_defaults_follow_precision():
    model, x, targets = _fd_model()
    report = fd_gradient_check(model, x, targets)
    assert report.precision == "float64"
    assert report.step == 1e-5
    names = [e.name for e in report.entries]
    assert sorted(names) == sorted(n for n, _ in model.named_params())


def _ablation_data():
    from hwgat.data import SyntheticSpec, generate_synthetic, load_split
    import tempfile
    spec = SyntheticSpec(num_classes=2, per_class=3, ratios=(0.67, 0.33, 0.0),
                         seed=2, frames_min=8, frames_max=12)
    out = tempfile.mkdtemp(prefix="abl")
    manifest, _ = generate_synthetic(spec, out)
    return load_split(manifest, "train"), load_split(manifest, "val")


BASE_MODEL = dict(num_classes=2, frames=8, block_len=2, num_layers=1,
                  blocks_per_layer=1, num_heads=2, embed_dim=8,
                  window_mode="four")
BASE_TRAIN = dict(lr=1e-3, epochs_max=1, batch_size=4, seed=0)


def test_ablation_grid_rows_and_error_recovery(tmp_path):
    train, val = _ablation_data()
    rows = run_ablation_grid(BASE_MODEL, BASE_TRAIN,
                             {"block_len": [2, 5]}, train, val, tmp_path)
    assert len(rows) == 2
    ok, bad = rows
    assert ok["block_len"] == 2 and ok["status"] == "ok"
    assert set(ok) >= {"status", "epochs", "best_val_loss", "top1", "top5"}
    # frames=8 is not divisible by 5: recorded as an error row, grid continues
    assert bad["block_len"] == 5 and bad["status"].startswith("error")
    logged = [json.loads(l) for l in
              (tmp_path / "ablation.jsonl").read_text().splitlines()]
    assert logged == rows


def test_ablation_grid_cartesian_product(tmp_path):
    train, val = _ablation_data()
    rows = run_ablation_grid(BASE_MODEL, BASE_TRAIN,
                             {"use_shift": [True, False],
                              "edge_bias": ["hard", "none"]},
                             train, val, tmp_path)
    combos = {(r["edge_bias"], r["use_shift"]) for r in rows}
    assert len(rows) == 4
    assert combos == {("hard", True), ("hard", False),
                      ("none", True), ("none", False)}
    assert all(r["status"] == "ok" for r in rows)


def test_ablation_grid_rejects_unknown_axis(tmp_path):
    train, val = _ablation_data()
    with pytest.raises(ConfigError):
        run_ablation_grid(BASE_MODEL, BASE_TRAIN, {"bogus": [1]},
                          train, val, tmp_path)
    with pytest.raises(ConfigError):
        run_ablation_grid(BASE_MODEL, BASE_TRAIN, {"block_len": []},
                          train, val, tmp_path)
