"""Spatial windows, temporal blocking, frame shifting, and adjacency masks.

A spatial window stacks face + one arm + one hand into a 16-slot unit (the
whole 27-node skeleton in single-window mode).  Attention never crosses
window boundaries, and within a window it is restricted to the anatomical
edge structure plus same-slot links between consecutive frames.

The arm contributes (shoulder, elbow, wrist); its wrist slot copies the
coordinate of the window's hand wrist, which keeps the shoulder-elbow-wrist
chain attached to the hand even for mixed arm/hand windows.  Duplicated
slots (faces across windows, the wrist pair) are value copies linked by an
edge where they share a node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sequence import SkeletonSequence
from .skeleton import (
    LEFT_ELBOW,
    LEFT_EYE,
    LEFT_HAND,
    LEFT_SHOULDER,
    NOSE,
    RIGHT_ELBOW,
    RIGHT_EYE,
    RIGHT_HAND,
    RIGHT_SHOULDER,
    SkeletonSchema,
)

WINDOW_MODES = ("one", "two", "four")

# Slot-level edges shared by every 16-slot window: slots 0-2 face,
# 3 shoulder, 4 elbow, 5 arm wrist copy, 6-15 hand (wrist, thumb tip,
# then mcp/tip pairs for index, middle, ring, pinky).
_WINDOW16_EDGES = (
    (0, 1), (0, 2),            # nose-eyes
    (0, 3),                    # nose-shoulder
    (3, 4),                    # shoulder-elbow
    (4, 5),                    # elbow-wrist
    (5, 6),                    # arm wrist copy - hand wrist (same node)
    (6, 7),                    # wrist-thumb tip
    (6, 8), (8, 9),            # wrist-index mcp-index tip
    (6, 10), (10, 11),         # middle
    (6, 12), (12, 13),         # ring
    (6, 14), (14, 15),         # pinky
)


@dataclass(frozen=True)
class WindowLayout:
    """Node gather lists and slot-level edges for all spatial windows."""

    mode: str
    window_nodes: tuple[tuple[int, ...], ...]  # schema indices per window slot
    slot_edges: tuple[tuple[int, int], ...]    # within one window, slot indices

    @property
    def num_windows(self) -> int:
        return len(self.window_nodes)

    @property
    def window_size(self) -> int:
        return len(self.window_nodes[0])

    @property
    def total_nodes(self) -> int:
        return self.num_windows * self.window_size

    def gather_indices(self) -> np.ndarray:
        """Flat (total_nodes,) schema indices, windows concatenated."""
        return np.concatenate([np.asarray(w, dtype=int) for w in self.window_nodes])


@dataclass(frozen=True)
class TemporalBlocking:
    """Split of ``num_frames`` into blocks of ``block_len`` frames each."""

    block_len: int
    num_frames: int

    def __post_init__(self):
        if self.block_len < 1:
            raise ConfigError(f"block length must be >= 1, got {self.block_len}")
        if self.num_frames % self.block_len != 0:
            raise ConfigError(
                f"frame count {self.num_frames} is not divisible by "
                f"block length {self.block_len}"
            )

    @property
    def num_blocks(self) -> int:
        return self.num_frames // self.block_len


@dataclass(frozen=True)
class BlockAdjacency:
    """Symmetric 0/1 mask over one spatio-temporal block, self-loops included."""

    num_nodes: int
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.shape != (self.num_nodes, self.num_nodes):
            raise ConfigError("adjacency mask shape mismatch")


def build_window_layout(schema: SkeletonSchema, mode: str = "four") -> WindowLayout:
    """Window node lists for single, two, or four spatial windows."""
    if mode not in WINDOW_MODES:
        raise ConfigError(f"window mode must be one of {WINDOW_MODES}, got {mode!r}")
    if mode == "one":
        return WindowLayout(
            mode=mode,
            window_nodes=(tuple(range(schema.num_nodes)),),
            slot_edges=tuple(schema.spatial_edges),
        )
    face = (NOSE, LEFT_EYE, RIGHT_EYE)
    arms = {"left": (LEFT_SHOULDER, LEFT_ELBOW), "right": (RIGHT_SHOULDER, RIGHT_ELBOW)}
    hands = {"left": tuple(LEFT_HAND), "right": tuple(RIGHT_HAND)}

    def window(arm: str, hand: str) -> tuple[int, ...]:
        shoulder, elbow = arms[arm]
        hand_nodes = hands[hand]
        return face + (shoulder, elbow, hand_nodes[0]) + hand_nodes

    if mode == "two":
        combos = [("left", "left"), ("right", "right")]
    else:
        combos = [("left", "left"), ("left", "right"), ("right", "left"), ("right", "right")]
    return WindowLayout(
        mode=mode,
        window_nodes=tuple(window(a, h) for a, h in combos),
        slot_edges=_WINDOW16_EDGES,
    )


def apply_windows(frames: np.ndarray, layout: WindowLayout) -> np.ndarray:
    """Gather (F, 27, c) frames into the stacked (F, total_nodes, c) layout."""
    frames = np.asarray(frames)
    return frames[:, layout.gather_indices(), :]


def windowed_sequence(seq: SkeletonSequence, layout: WindowLayout) -> np.ndarray:
    return apply_windows(seq.frames, layout)


def shift_frames(tensor: np.ndarray, shift: int) -> tuple[np.ndarray, np.ndarray]:
    """Roll frames so the first ``shift`` frames move to the end.

    Returns the rolled tensor and a boolean per-frame mask marking the
    rolled (wrapped-around) frames, which must not exchange attention with
    unrolled frames.
    """
    total = tensor.shape[0]
    if not 0 <= shift < total:
        raise ConfigError(f"shift must satisfy 0 <= s < F, got s={shift}, F={total}")
    rolled_mask = np.zeros(total, dtype=bool)
    if shift == 0:
        return tensor.copy(), rolled_mask
    rolled = np.roll(tensor, -shift, axis=0)
    rolled_mask[total - shift:] = True
    return rolled, rolled_mask


def build_block_adjacency(
    layout: WindowLayout,
    block_len: int,
    rolled_flags: np.ndarray | None = None,
) -> BlockAdjacency:
    """The 0/1 mask for one window's spatio-temporal block.

    Nodes are frame-major: block node t * window_size + slot.  Spatial slot
    edges repeat within every frame; temporal edges join the same slot in
    consecutive frames; all nodes carry self-loops.  ``rolled_flags`` (one
    bool per frame in the block) severs every pair of rolled and unrolled
    frames, which realizes the attention masking of shifted sequences.
    """
    w = layout.window_size
    n = block_len * w
    mask = np.zeros((n, n))
    for t in range(block_len):
        base = t * w
        for p, q in layout.slot_edges:
            mask[base + p, base + q] = 1.0
            mask[base + q, base + p] = 1.0
    for t in range(block_len - 1):
        for p in range(w):
            a, b = t * w + p, (t + 1) * w + p
            mask[a, b] = 1.0
            mask[b, a] = 1.0
    np.fill_diagonal(mask, 1.0)
    if rolled_flags is not None:
        rolled_flags = np.asarray(rolled_flags, dtype=bool)
        if rolled_flags.shape != (block_len,):
            raise ConfigError("rolled_flags must have one entry per block frame")
        for t1 in range(block_len):
            for t2 in range(block_len):
                if rolled_flags[t1] != rolled_flags[t2]:
                    mask[t1 * w:(t1 + 1) * w, t2 * w:(t2 + 1) * w] = 0.0
    return BlockAdjacency(num_nodes=n, mask=mask)


def build_stacked_adjacency(
    layout: WindowLayout,
    block_len: int,
    rolled_flags: np.ndarray | None = None,
) -> np.ndarray:
    """All windows' block masks assembled window-major: literally block-diagonal.

    Node order is (window, frame, slot), so the (block_len * total_nodes)^2
    matrix is num_windows diagonal copies of the per-window mask with zeros
    everywhere else.
    """
    per_window = build_block_adjacency(layout, block_len, rolled_flags).mask
    n = per_window.shape[0]
    full = np.zeros((layout.num_windows * n, layout.num_windows * n))
    for s in range(layout.num_windows):
        full[s * n:(s + 1) * n, s * n:(s + 1) * n] = per_window
    return full


def format_windows_text(
    layout: WindowLayout, block_len: int, rolled_flags: np.ndarray | None = None
) -> str:
    """Window node lists plus one block's adjacency as a text matrix."""
    lines = [
        f"window-layout mode={layout.mode} windows={layout.num_windows} "
        f"window_size={layout.window_size} total_nodes={layout.total_nodes}"
    ]
    for i, nodes in enumerate(layout.window_nodes):
        lines.append(f"window {i}: " + " ".join(str(n) for n in nodes))
    block = build_block_adjacency(layout, block_len, rolled_flags)
    kind = "plain" if rolled_flags is None else "rolled"
    lines.append(f"adjacency block_len={block_len} kind={kind} n={block.num_nodes}")
    for row in block.mask.astype(int):
        lines.append("".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
