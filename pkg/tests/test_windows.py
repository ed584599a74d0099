"""Window layouts, frame shifting, and block adjacency masks."""

import numpy as np
import pytest

from hwgat.errors import ConfigError
from hwgat.skeleton import LEFT_HAND, RIGHT_HAND, build_default_schema
from hwgat.windows import (
    TemporalBlocking,
    apply_windows,
    build_block_adjacency,
    build_stacked_adjacency,
    build_window_layout,
    format_windows_text,
    shift_frames,
)


@pytest.fixture(scope="module")
def schema():
    return build_default_schema()


def test_mode_sizes(schema):
    one = build_window_layout(schema, "one")
    two = build_window_layout(schema, "two")
    four = build_window_layout(schema, "four")
    assert (one.num_windows, one.window_size, one.total_nodes) == (1, 27, 27)
    assert (two.num_windows, two.window_size, two.total_nodes) == (2, 16, 32)
    assert (four.num_windows, four.window_size, four.total_nodes) == (4, 16, 64)


def test_mode_one_is_the_whole_graph(schema):
    layout = build_window_layout(schema, "one")
    assert layout.window_nodes[0] == tuple(range(27))
    assert set(layout.slot_edges) == set(schema.spatial_edges)


def test_four_windows_cover_arm_hand_combinations(schema):
    layout = build_window_layout(schema, "four")
    combos = set()
    for nodes in layout.window_nodes:
        # face triple leads every window
        assert nodes[:3] == (0, 1, 2)
        arm_side = "left" if nodes[3] == 3 else "right"
        hand = nodes[6:]
        assert len(hand) == 10
        hand_side = "left" if hand == tuple(LEFT_HAND) else "right"
        assert hand == tuple(LEFT_HAND) or hand == tuple(RIGHT_HAND)
        # the arm triple's wrist is a copy of the hand window's wrist
        assert nodes[5] == hand[0]
        combos.add((arm_side, hand_side))
    assert combos == {("left", "left"), ("left", "right"),
                      ("right", "left"), ("right", "right")}


def test_two_windows_pair_same_side(schema):
    layout = build_window_layout(schema, "two")
    sides = []
    for nodes in layout.window_nodes:
        arm_side = "left" if nodes[3] == 3 else "right"
        hand_side = "left" if nodes[6:] == tuple(LEFT_HAND) else "right"
        sides.append((arm_side, hand_side))
    assert sides == [("left", "left"), ("right", "right")]


def test_bad_mode_rejected(schema):
    with pytest.raises(ConfigError):
        build_window_layout(schema, "three")


def test_apply_windows_is_a_pure_gather(schema):
    layout = build_window_layout(schema, "four")
    rng = np.random.default_rng(0)
    frames = rng.standard_normal((5, 27, 2))
    out = apply_windows(frames, layout)
    assert out.shape == (5, 64, 2)
    # brute-force per-index gather oracle
    for f in range(5):
        slot = 0
        for nodes in layout.window_nodes:
            for node in nodes:
                assert np.array_equal(out[f, slot], frames[f, node])
                slot += 1


def test_apply_windows_duplicates_face_values(schema):
    layout = build_window_layout(schema, "four")
    frames = np.random.default_rng(1).standard_normal((3, 27, 2))
    out = apply_windows(frames, layout)
    w = layout.window_size
    for s in range(1, 4):
        assert np.array_equal(out[:, s * w:s * w + 3], out[:, 0:3])


def test_shift_round_trip_exact():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 4, 3))
    for s in range(8):
        rolled, mask = shift_frames(x, s)
        back, _ = shift_frames(rolled, (8 - s) % 8)
        assert np.array_equal(back, x)
        assert mask.sum() == s
        if s:
            assert mask[-s:].all()


def test_shift_zero_is_identity():
    x = np.random.default_rng(3).standard_normal((4, 2, 2))
    rolled, mask = shift_frames(x, 0)
    assert np.array_equal(rolled, x)
    assert not mask.any()


def test_shift_order_matches_roll_semantics():
    x = np.arange(4, dtype=float).reshape(4, 1, 1)
    rolled, mask = shift_frames(x, 1)
    assert rolled.ravel().tolist() == [1.0, 2.0, 3.0, 0.0]
    assert mask.tolist() == [False, False, False, True]


def test_shift_rejects_out_of_range():
    x = np.zeros((4, 2, 2))
    with pytest.raises(ConfigError):
        shift_frames(x, 4)
    with pytest.raises(ConfigError):
        shift_frames(x, -1)


def _adjacency_oracle(layout, block_len, rolled_flags=None):
    """Brute-force edge enumeration: spatial within a frame, temporal
    between consecutive frames on the same slot, self-loops, then rolled
    severing."""
    w = layout.window_size
    n = block_len * w
    sym_edges = {(min(p, q), max(p, q)) for p, q in layout.slot_edges}
    mask = np.zeros((n, n))
    for a in range(n):
        ta, pa = divmod(a, w)
        for b in range(n):
            tb, pb = divmod(b, w)
            if a == b:
                mask[a, b] = 1.0
            elif ta == tb and (min(pa, pb), max(pa, pb)) in sym_edges:
                mask[a, b] = 1.0
            elif pa == pb and abs(ta - tb) == 1:
                mask[a, b] = 1.0
            if rolled_flags is not None and rolled_flags[ta] != rolled_flags[tb]:
                mask[a, b] = 0.0
    return mask


@pytest.mark.parametrize("mode", ["one", "two", "four"])
@pytest.mark.parametrize("block_len", [1, 2, 4])
def test_block_adjacency_matches_enumeration_oracle(schema, mode, block_len):
    layout = build_window_layout(schema, mode)
    got = build_block_adjacency(layout, block_len).mask
    assert np.array_equal(got, _adjacency_oracle(layout, block_len))


def test_block_adjacency_invariants(schema):
    layout = build_window_layout(schema, "four")
    adj = build_block_adjacency(layout, 4)
    mask = adj.mask
    assert adj.num_nodes == 64
    assert np.array_equal(mask, mask.T)
    assert np.array_equal(np.diag(mask), np.ones(64))
    # zero between non-consecutive frames
    w = layout.window_size
    assert not mask[:w, 2 * w:].any()


def test_block_adjacency_rolled_severing(schema):
    layout = build_window_layout(schema, "four")
    flags = np.array([False, True])
    got = build_block_adjacency(layout, 2, flags).mask
    assert np.array_equal(got, _adjacency_oracle(layout, 2, flags))
    w = layout.window_size
    # the whole cross quadrant is zero, diagonals stay intact
    assert not got[:w, w:].any()
    assert not got[w:, :w].any()
    assert np.array_equal(np.diag(got), np.ones(2 * w))


def test_block_adjacency_rejects_bad_flags(schema):
    layout = build_window_layout(schema, "four")
    with pytest.raises(ConfigError):
        build_block_adjacency(layout, 2, np.array([True]))


def test_stacked_adjacency_is_block_diagonal(schema):
    layout = build_window_layout(schema, "four")
    per = build_block_adjacency(layout, 2).mask
    full = build_stacked_adjacency(layout, 2)
    n = per.shape[0]
    assert full.shape == (4 * n, 4 * n)
    for s in range(4):
        assert np.array_equal(full[s * n:(s + 1) * n, s * n:(s + 1) * n], per)
    off = full.copy()
    for s in range(4):
        off[s * n:(s + 1) * n, s * n:(s + 1) * n] = 0.0
    assert not off.any()


def test_temporal_blocking_validation():
    blocking = TemporalBlocking(block_len=4, num_frames=16)
    assert blocking.num_blocks == 4
    with pytest.raises(ConfigError):
        TemporalBlocking(block_len=3, num_frames=16)
    with pytest.raises(ConfigError):
        TemporalBlocking(block_len=0, num_frames=16)


def test_format_windows_text_mentions_every_window(schema):
    layout = build_window_layout(schema, "four")
    text = format_windows_text(layout, 2)
    assert "window" in text
    for idx in range(layout.num_windows):
        assert str(idx) in text
