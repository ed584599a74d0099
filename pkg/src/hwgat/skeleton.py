"""The 27-keypoint upper-body skeleton and its mapping from full pose output.

The skeleton keeps 3 facial keypoints (nose, both eyes), both shoulders and
elbows, and 10 landmarks per hand.  Hand landmarks are a fixed subset of the
standard 21-landmark hand model: the wrist, all four fingertips, the thumb
tip, and the four finger MCP knuckles.  Edges follow anatomical joint-bone
connectivity.

A missing detection is encoded as NaN on both coordinates; it is never fed
to the network and is filled during preprocessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NUM_NODES = 27
POSE_LANDMARKS = 33
HAND_LANDMARKS = 21

# name, part; index is the list position
_NODE_TABLE = [
    ("nose", "face"),
    ("left_eye", "face"),
    ("right_eye", "face"),
    ("left_shoulder", "left_arm"),
    ("right_shoulder", "right_arm"),
    ("left_elbow", "left_arm"),
    ("right_elbow", "right_arm"),
]
_HAND_NODE_NAMES = [
    "wrist",
    "thumb_tip",
    "index_mcp",
    "index_tip",
    "middle_mcp",
    "middle_tip",
    "ring_mcp",
    "ring_tip",
    "pinky_mcp",
    "pinky_tip",
]
for _side in ("left", "right"):
    for _n in _HAND_NODE_NAMES:
        _NODE_TABLE.append((f"{_side}_{_n}", f"{_side}_hand"))

# Convenience indices into the 27-node layout.
NOSE, LEFT_EYE, RIGHT_EYE = 0, 1, 2
LEFT_SHOULDER, RIGHT_SHOULDER = 3, 4
LEFT_ELBOW, RIGHT_ELBOW = 5, 6
LEFT_HAND = list(range(7, 17))
RIGHT_HAND = list(range(17, 27))
LEFT_WRIST = LEFT_HAND[0]
RIGHT_WRIST = RIGHT_HAND[0]
HAND_NODES = LEFT_HAND + RIGHT_HAND

# Source indices in the full pose model (nose, eye centers, shoulders, elbows).
_POSE_SOURCES = [0, 2, 5, 11, 12, 13, 14]
# Source indices in the 21-landmark hand model for the 10 kept landmarks.
_HAND_SOURCES = [0, 4, 5, 8, 9, 12, 13, 16, 17, 20]


def _hand_edges(nodes: list[int]) -> list[tuple[int, int]]:
    wrist, thumb, imcp, itip, mmcp, mtip, rmcp, rtip, pmcp, ptip = nodes
    return [
        (wrist, thumb),
        (wrist, imcp),
        (imcp, itip),
        (wrist, mmcp),
        (mmcp, mtip),
        (wrist, rmcp),
        (rmcp, rtip),
        (wrist, pmcp),
        (pmcp, ptip),
    ]


@dataclass(frozen=True)
class SkeletonSchema:
    """Node table, spatial edge list, and body-part assignment.

    Immutable after construction and safe to share across threads.
    """

    nodes: tuple[str, ...]
    spatial_edges: tuple[tuple[int, int], ...]
    parts: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        if len(self.nodes) != NUM_NODES:
            raise DataError(f"schema must have {NUM_NODES} nodes, got {len(self.nodes)}")
        seen = set()
        for i, j in self.spatial_edges:
            if not (0 <= i < NUM_NODES and 0 <= j < NUM_NODES):
                raise DataError(f"edge ({i}, {j}) references an invalid node index")
            if i == j:
                raise DataError(f"self-edge on node {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataError(f"duplicate edge {key}")
            seen.add(key)
        covered = [idx for members in self.parts.values() for idx in members]
        if sorted(covered) != list(range(NUM_NODES)):
            raise DataError("parts must partition the node set exactly once")
        sizes = {name: len(members) for name, members in self.parts.items()}
        expected = {"face": 3, "left_arm": 2, "right_arm": 2, "left_hand": 10, "right_hand": 10}
        if sizes != expected:
            raise DataError(f"unexpected part sizes {sizes}")
        degree = np.zeros(NUM_NODES, dtype=int)
        for i, j in self.spatial_edges:
            degree[i] += 1
            degree[j] += 1
        if (degree == 0).any():
            raise DataError(f"isolated nodes: {np.flatnonzero(degree == 0).tolist()}")

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 spatial adjacency with self-loops, shape (27, 27)."""
        a = np.zeros((NUM_NODES, NUM_NODES))
        for i, j in self.spatial_edges:
            a[i, j] = a[j, i] = 1.0
        np.fill_diagonal(a, 1.0)
        return a


@dataclass(frozen=True)
class SelectionMap:
    """Mapping from a full pose-model frame onto the 27 schema nodes.

    Each entry is (source_index, target_index, source_group) where the group
    is one of ``pose`` (33 landmarks), ``left_hand`` or ``right_hand``
    (21 landmarks each).
    """

    entries: tuple[tuple[int, int, str], ...]

    def __post_init__(self):
        if len(self.entries) != NUM_NODES:
            raise DataError(f"selection map needs {NUM_NODES} entries")
        targets = sorted(t for _, t, _ in self.entries)
        if targets != list(range(NUM_NODES)):
            raise DataError("selection targets must be a permutation of 0..26")
        for src, _, group in self.entries:
            limit = POSE_LANDMARKS if group == "pose" else HAND_LANDMARKS
            if group not in ("pose", "left_hand", "right_hand"):
                raise DataError(f"unknown source group {group!r}")
            if not 0 <= src < limit:
                raise DataError(f"source index {src} out of range for group {group!r}")


def build_default_schema() -> SkeletonSchema:
    """The canonical 27-node skeleton with joint-bone edges."""
    edges = [
        (NOSE, LEFT_EYE),
        (NOSE, RIGHT_EYE),
        (LEFT_SHOULDER, RIGHT_SHOULDER),
        (NOSE, LEFT_SHOULDER),
        (NOSE, RIGHT_SHOULDER),
        (LEFT_SHOULDER, LEFT_ELBOW),
        (RIGHT_SHOULDER, RIGHT_ELBOW),
        (LEFT_ELBOW, LEFT_WRIST),
        (RIGHT_ELBOW, RIGHT_WRIST),
    ]
    edges += _hand_edges(LEFT_HAND)
    edges += _hand_edges(RIGHT_HAND)
    parts = {
        "face": (NOSE, LEFT_EYE, RIGHT_EYE),
        "left_arm": (LEFT_SHOULDER, LEFT_ELBOW),
        "right_arm": (RIGHT_SHOULDER, RIGHT_ELBOW),
        "left_hand": tuple(LEFT_HAND),
        "right_hand": tuple(RIGHT_HAND),
    }
    return SkeletonSchema(
        nodes=tuple(name for name, _ in _NODE_TABLE),
        spatial_edges=tuple(edges),
        parts=parts,
    )


def build_default_selection_map() -> SelectionMap:
    """Mapping from (pose 33, left hand 21, right hand 21) onto the schema."""
    entries = [(src, tgt, "pose") for tgt, src in enumerate(_POSE_SOURCES)]
    entries += [(src, LEFT_HAND[k], "left_hand") for k, src in enumerate(_HAND_SOURCES)]
    entries += [(src, RIGHT_HAND[k], "right_hand") for k, src in enumerate(_HAND_SOURCES)]
    return SelectionMap(entries=tuple(entries))


def node_part(schema: SkeletonSchema, index: int) -> str:
    for name, members in schema.parts.items():
        if index in members:
            return name
    raise DataError(f"node {index} not assigned to any part")


def select_keypoints(
    pose: np.ndarray,
    left_hand: np.ndarray,
    right_hand: np.ndarray,
    smap: SelectionMap,
    missing_policy: str = "propagate",
) -> np.ndarray:
    """Gather one frame's 27 schema keypoints from full pose-model blocks.

    Missing landmarks (NaN) propagate to the output when the policy is
    ``propagate``; with ``error`` a missing selected landmark raises.
    A pure gather: unrelated source landmarks never affect the output.
    """
    blocks = {"pose": np.asarray(pose, dtype=float),
              "left_hand": np.asarray(left_hand, dtype=float),
              "right_hand": np.asarray(right_hand, dtype=float)}
    for group, want in (("pose", POSE_LANDMARKS), ("left_hand", HAND_LANDMARKS),
                        ("right_hand", HAND_LANDMARKS)):
        if blocks[group].shape != (want, 2):
            raise DataError(
                f"{group} block must have shape ({want}, 2), got {blocks[group].shape}"
            )
    if missing_policy not in ("propagate", "error"):
        raise DataError(f"unknown missing policy {missing_policy!r}")
    out = np.empty((NUM_NODES, 2))
    for src, tgt, group in smap.entries:
        point = blocks[group][src]
        if missing_policy == "error" and not np.isfinite(point).all():
            raise DataError(f"missing landmark {src} in group {group!r}")
        out[tgt] = point
    return out


def format_schema_text(schema: SkeletonSchema, smap: SelectionMap) -> str:
    """Versioned plain-text description used for cross-implementation checks."""
    lines = ["skeleton-schema v1", f"nodes {schema.num_nodes}"]
    for idx, name in enumerate(schema.nodes):
        lines.append(f"node {idx} {name} {node_part(schema, idx)}")
    lines.append(f"edges {len(schema.spatial_edges)}")
    for i, j in schema.spatial_edges:
        lines.append(f"edge {i} {j}")
    lines.append(f"selection {len(smap.entries)}")
    for src, tgt, group in smap.entries:
        lines.append(f"select {group} {src} -> {tgt}")
    return "\n".join(lines) + "\n"
