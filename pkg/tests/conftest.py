"""Shared fixtures: tiny datasets and model configs sized for fast tests."""

import sys

import numpy as np
import pytest

from hwgat.data import SyntheticSpec, generate_synthetic, load_split
from hwgat.model import HWGAT, ModelConfig
from hwgat.sequence import SkeletonSequence
from hwgat.skeleton import build_default_schema
from hwgat.windows import build_window_layout


TOY_MODEL = dict(
    frames=8,
    block_len=2,
    num_layers=2,
    blocks_per_layer=1,
    num_heads=2,
    embed_dim=8,
    window_mode="four",
)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance criterion lines after the (captured) run."""
    for name in ("test_acceptance", "tests.test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "SUMMARY_LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.SUMMARY_LINES:
                terminalreporter.write_line(line)
            break


def make_sequence(num_frames=12, seed=0, label=0, seq_id="seq0"):
    """Random pixel-space sequence inside the nominal frame box."""
    rng = np.random.default_rng(seed)
    frames = np.empty((num_frames, 27, 2))
    frames[:, :, 0] = rng.uniform(50.0, 1150.0, size=(num_frames, 27))
    frames[:, :, 1] = rng.uniform(50.0, 900.0, size=(num_frames, 27))
    return SkeletonSequence(id=seq_id, frames=frames, label=label,
                            fps=30.0, frame_size=(1200, 950))


@pytest.fixture(scope="session")
def schema():
    return build_default_schema()


@pytest.fixture(scope="session")
def layout_four(schema):
    return build_window_layout(schema, "four")


@pytest.fixture(scope="session")
def toy_model():
    cfg = ModelConfig(num_classes=3, dtype="float64", seed=7, **TOY_MODEL)
    return HWGAT(cfg)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 classes x 5 sequences split 4 train / 1 val per class."""
    spec = SyntheticSpec(num_classes=4, per_class=5,
                         ratios=(0.8, 0.2, 0.0), seed=1)
    out = tmp_path_factory.mktemp("tinydata")
    manifest, manifest_path = generate_synthetic(spec, out)
    return {
        "manifest": manifest,
        "manifest_path": manifest_path,
        "train": load_split(manifest, "train"),
        "val": load_split(manifest, "val"),
        "num_classes": spec.num_classes,
    }
