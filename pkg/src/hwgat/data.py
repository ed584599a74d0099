"""Sequence file format, dataset manifests, and the synthetic generator.

Sequence files are line-delimited text: a header line with id, label, fps,
frame size, and frame count, then one line per frame holding 27 x,y pairs
written with repr precision; "nan" marks a missing coordinate.  Manifests
are line-delimited tables referencing sequence files relative to the
manifest's directory.  The synthetic generator renders separable parametric
hand motions onto the 27-node skeleton for desk-scale end-to-end runs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, IoError
from .rng import DATA_STREAM, stream_rng
from .sequence import SkeletonSequence
from .skeleton import (NUM_NODES, SelectionMap, build_default_selection_map,
                       select_keypoints)

SEQUENCE_MAGIC = "hwgat-sequence v1"
MANIFEST_MAGIC = "hwgat-manifest v1"
SPLITS = ("train", "val", "test")


def _format_floats(values: np.ndarray) -> str:
    return " ".join("nan" if math.isnan(v) else repr(float(v)) for v in values)


def save_sequence(seq: SkeletonSequence, path: str) -> None:
    """Write one sequence in the documented text format."""
    if any(ch.isspace() for ch in seq.id) or not seq.id:
        raise DataError(f"sequence id must be non-empty without whitespace: {seq.id!r}")
    width, height = seq.frame_size
    lines = [
        f"{SEQUENCE_MAGIC} id={seq.id} label={seq.label} fps={repr(float(seq.fps))} "
        f"frame_size={width}x{height} frames={seq.num_frames}"
    ]
    for frame in seq.frames:
        lines.append(_format_floats(frame.reshape(-1)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line: str, path: str) -> dict:
    if not line.startswith(SEQUENCE_MAGIC + " "):
        raise DataError(f"{path} line 1: not a {SEQUENCE_MAGIC} file")
    fields = {}
    for token in line[len(SEQUENCE_MAGIC) + 1:].split():
        if "=" not in token:
            raise DataError(f"{path} line 1: malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    for key in ("id", "label", "fps", "frame_size", "frames"):
        if key not in fields:
            raise DataError(f"{path} line 1: header is missing {key}")
    try:
        label = int(fields["label"])
        fps = float(fields["fps"])
        count = int(fields["frames"])
        w_str, h_str = fields["frame_size"].split("x")
        frame_size = (int(w_str), int(h_str))
    except ValueError as exc:
        raise DataError(f"{path} line 1: bad header value ({exc})") from exc
    if count < 1:
        raise DataError(f"{path} line 1: frame count must be >= 1, got {count}")
    return {"id": fields["id"], "label": label, "fps": fps,
            "frame_size": frame_size, "frames": count}


def load_sequence(path: str) -> SkeletonSequence:
    """Parse one sequence file, reporting the offending line/field on error."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read sequence file {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != header["frames"]:
        raise DataError(
            f"{path}: header declares {header['frames']} frames, "
            f"found {len(body)}"
        )
    frames = np.empty((header["frames"], NUM_NODES, 2))
    for row, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != NUM_NODES * 2:
            raise DataError(
                f"{path} line {row + 2}: expected {NUM_NODES * 2} coordinates, "
                f"got {len(tokens)}"
            )
        for col, token in enumerate(tokens):
            try:
                value = float(token)
            except ValueError as exc:
                raise DataError(
                    f"{path} line {row + 2}, field {col + 1}: "
                    f"not a number: {token!r}"
                ) from exc
            if math.isinf(value):
                raise DataError(
                    f"{path} line {row + 2}, field {col + 1}: "
                    f"non-finite coordinate {token!r}"
                )
            frames[row, col // 2, col % 2] = value
    return SkeletonSequence(
        id=header["id"], frames=frames, label=header["label"],
        fps=header["fps"], frame_size=header["frame_size"])


FULL_POSE_COUNTS = (33, 21, 21)  # body, left hand, right hand landmarks


def load_full_pose_sequence(path: str, smap: SelectionMap | None = None
                            ) -> SkeletonSequence:
    """Parse a full-extractor dump (75 landmarks per frame) and select 27."""
    total = sum(FULL_POSE_COUNTS)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read pose file {path}: {exc}") from exc
    if not lines or not lines[0].startswith("hwgat-fullpose v1 "):
        raise DataError(f"{path} line 1: not a hwgat-fullpose v1 file")
    header = _parse_header(lines[0].replace("hwgat-fullpose", "hwgat-sequence", 1), path)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != header["frames"]:
        raise DataError(
            f"{path}: header declares {header['frames']} frames, found {len(body)}")
    if smap is None:
        smap = build_default_selection_map()
    pose_n, left_n, right_n = FULL_POSE_COUNTS
    frames = np.empty((header["frames"], NUM_NODES, 2))
    for row, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != total * 2:
            raise DataError(
                f"{path} line {row + 2}: expected {total * 2} coordinates, "
                f"got {len(tokens)}"
            )
        try:
            flat = np.array([float(t) for t in tokens]).reshape(total, 2)
        except ValueError as exc:
            raise DataError(f"{path} line {row + 2}: bad coordinate ({exc})") from exc
        frames[row] = select_keypoints(
            flat[:pose_n], flat[pose_n:pose_n + left_n],
            flat[pose_n + left_n:], smap)
    return SkeletonSequence(
        id=header["id"], frames=frames, label=header["label"],
        fps=header["fps"], frame_size=header["frame_size"])


@dataclass(frozen=True)
class ManifestEntry:
    path: str          # relative to the manifest directory
    label: int
    split: str
    signer: str | None = None


@dataclass
class DatasetManifest:
    class_names: list[str]
    entries: list[ManifestEntry] = field(default_factory=list)
    root: str = "."

    def validate(self) -> None:
        for entry in self.entries:
            if entry.split not in SPLITS:
                raise DataError(
                    f"manifest entry {entry.path}: unknown split {entry.split!r}")
            if not 0 <= entry.label < len(self.class_names):
                raise DataError(
                    f"manifest entry {entry.path}: label {entry.label} outside "
                    f"[0, {len(self.class_names)})"
                )

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> str:
        return os.path.join(self.root, entry.path)

    def check_signer_disjoint(self) -> None:
        """Signer-independent splits: no signer id may appear in two splits."""
        seen: dict[str, str] = {}
        for entry in self.entries:
            if entry.signer is None:
                continue
            prior = seen.get(entry.signer)
            if prior is not None and prior != entry.split:
                raise DataError(
                    f"signer {entry.signer} appears in splits "
                    f"{prior} and {entry.split}"
                )
            seen[entry.signer] = entry.split


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    manifest.validate()
    lines = [f"{MANIFEST_MAGIC} classes={len(manifest.class_names)}"]
    for idx, name in enumerate(manifest.class_names):
        lines.append(f"class {idx} {name}")
    for entry in manifest.entries:
        parts = ["seq", entry.path, str(entry.label), entry.split]
        if entry.signer is not None:
            parts.append(entry.signer)
        lines.append(" ".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path: str, check_files: bool = True) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or not lines[0].startswith(MANIFEST_MAGIC + " "):
        raise DataError(f"{path} line 1: not a {MANIFEST_MAGIC} file")
    try:
        declared = int(lines[0].split("classes=", 1)[1])
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path} line 1: bad class count") from exc
    root = os.path.dirname(os.path.abspath(path))
    names: dict[int, str] = {}
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if tokens[0] == "class":
            if len(tokens) < 3:
                raise DataError(f"{path} line {lineno}: malformed class line")
            names[int(tokens[1])] = " ".join(tokens[2:])
        elif tokens[0] == "seq":
            if len(tokens) not in (4, 5):
                raise DataError(f"{path} line {lineno}: malformed seq line")
            try:
                label = int(tokens[2])
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: bad label") from exc
            entries.append(ManifestEntry(
                path=tokens[1], label=label, split=tokens[3],
                signer=tokens[4] if len(tokens) == 5 else None))
        else:
            raise DataError(f"{path} line {lineno}: unknown record {tokens[0]!r}")
    if sorted(names) != list(range(declared)):
        raise DataError(f"{path}: class lines do not cover 0..{declared - 1}")
    manifest = DatasetManifest(
        class_names=[names[i] for i in range(declared)],
        entries=entries, root=root)
    manifest.validate()
    if check_files:
        for entry in entries:
            if not os.path.exists(manifest.resolve(entry)):
                raise DataError(
                    f"{path}: dangling file reference {entry.path}")
    return manifest


def load_split(manifest: DatasetManifest, split: str) -> list[SkeletonSequence]:
    """All sequences of a split, in manifest order, labels from the manifest."""
    seqs = []
    for entry in manifest.split_entries(split):
        seq = load_sequence(manifest.resolve(entry))
        if seq.label != entry.label:
            raise DataError(
                f"{entry.path}: file label {seq.label} disagrees with "
                f"manifest label {entry.label}"
            )
        seqs.append(seq)
    return seqs


# --- synthetic motions -----------------------------------------------------

NOMINAL_FRAME_SIZE = (1200, 950)

# rest pose in pixel space, mirrored left/right around x = 600
_FACE = np.array([[600.0, 170.0], [560.0, 150.0], [640.0, 150.0]])
_SHOULDERS = np.array([[460.0, 330.0], [740.0, 330.0]])
_ELBOWS = np.array([[420.0, 520.0], [780.0, 520.0]])
_HAND_CENTERS = np.array([[330.0, 640.0], [870.0, 640.0]])

# 10-node hand template (wrist, thumb tip, then mcp/tip pairs), right hand
_HAND_TEMPLATE = np.array([
    [0.0, 0.0], [-35.0, -20.0],
    [-20.0, -45.0], [-25.0, -85.0],
    [0.0, -50.0], [0.0, -95.0],
    [18.0, -45.0], [22.0, -85.0],
    [32.0, -38.0], [40.0, -70.0],
])

_ELBOW_FOLLOW = 0.35   # fraction of the wrist displacement the elbow follows
_AMPLITUDE = 110.0


def _tri(u: float) -> float:
    u = u % 1.0
    return 4.0 * abs(u - 0.5) - 1.0


def _path_circle(t: float) -> tuple[float, float]:
    return math.cos(2 * math.pi * t), math.sin(2 * math.pi * t)


def _path_hline(t: float) -> tuple[float, float]:
    return math.sin(2 * math.pi * t), 0.0


def _path_vline(t: float) -> tuple[float, float]:
    return 0.0, math.sin(2 * math.pi * t)


def _path_zigzag(t: float) -> tuple[float, float]:
    return 2.0 * (t % 1.0) - 1.0, _tri(2.0 * t)


def _path_figure8(t: float) -> tuple[float, float]:
    return math.sin(2 * math.pi * t), 0.5 * math.sin(4 * math.pi * t)


# (name, hands, path, antiphase): hands is a subset of {0: left, 1: right}
_FAMILIES = (
    ("right_circle", (1,), _path_circle, False),
    ("right_hline", (1,), _path_hline, False),
    ("right_zigzag", (1,), _path_zigzag, False),
    ("left_circle", (0,), _path_circle, False),
    ("left_vline", (0,), _path_vline, False),
    ("both_circle", (0, 1), _path_circle, False),
    ("both_updown", (0, 1), _path_vline, True),
    ("right_figure8", (1,), _path_figure8, False),
    ("left_zigzag", (0,), _path_zigzag, False),
    ("both_hline", (0, 1), _path_hline, True),
)


@dataclass
class SyntheticSpec:
    """Parametric dataset description; classes cycle the motion families."""

    num_classes: int = 8
    per_class: int = 20
    frames_min: int = 24
    frames_max: int = 48
    noise: float = 3.0
    seed: int = 0
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    fps: float = 30.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.per_class < 1:
            raise ConfigError(f"per_class must be >= 1, got {self.per_class}")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError(
                f"need 1 <= frames_min <= frames_max, got "
                f"({self.frames_min}, {self.frames_max})"
            )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) \
                or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be >= 0 and sum to 1: {self.ratios}")


def class_family(spec: SyntheticSpec, class_idx: int) -> tuple:
    """Motion family for a class; repeats speed up by the cycle count."""
    name, hands, fn, anti = _FAMILIES[class_idx % len(_FAMILIES)]
    cycle = class_idx // len(_FAMILIES)
    if cycle == 0:
        return name, hands, fn, anti
    speedup = cycle + 1
    return (f"{name}_x{speedup}", hands,
            lambda t, _fn=fn, _k=speedup: _fn((_k * t) % 1.0), anti)


def synthesize_sequence(spec: SyntheticSpec, class_idx: int,
                        seq_idx: int) -> SkeletonSequence:
    """Render one motion instance with per-sequence phase/amplitude jitter."""
    _, hands, fn, anti = class_family(spec, class_idx)
    rng = stream_rng(spec.seed, DATA_STREAM, class_idx, seq_idx)
    frames_n = int(rng.integers(spec.frames_min, spec.frames_max + 1))
    phase = float(rng.uniform(0.0, 1.0))
    amp = _AMPLITUDE * float(rng.uniform(0.9, 1.1))
    frames = np.empty((frames_n, NUM_NODES, 2))
    for i in range(frames_n):
        t = phase + i / frames_n
        offsets = np.zeros((2, 2))
        for side in hands:
            ts = t + 0.5 if (anti and side == 0) else t
            dx, dy = fn(ts % 1.0)
            if side == 0:
                dx = -dx  # mirror so two-handed motions stay symmetric
            offsets[side] = (amp * dx, amp * dy)
        frame = np.empty((NUM_NODES, 2))
        frame[0:3] = _FACE
        frame[3:5] = _SHOULDERS
        frame[5:7] = _ELBOWS + _ELBOW_FOLLOW * offsets
        hand_sign = np.array([[-1.0, 1.0], [1.0, 1.0]])
        for side in (0, 1):
            base = _HAND_CENTERS[side] + offsets[side]
            frame[7 + 10 * side: 17 + 10 * side] = \
                base + _HAND_TEMPLATE * hand_sign[side]
        frames[i] = frame
    if spec.noise > 0:
        frames = frames + rng.normal(0.0, spec.noise, frames.shape)
    width, height = NOMINAL_FRAME_SIZE
    frames[..., 0] = np.clip(frames[..., 0], 0.0, width - 1.0)
    frames[..., 1] = np.clip(frames[..., 1], 0.0, height - 1.0)
    return SkeletonSequence(
        id=f"c{class_idx:02d}_s{seq_idx:02d}", frames=frames, label=class_idx,
        fps=spec.fps, frame_size=NOMINAL_FRAME_SIZE)


def split_sizes(total: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Cumulative-floor rounding: sizes partition ``total`` exactly."""
    c0 = math.floor(ratios[0] * total)
    c1 = math.floor((ratios[0] + ratios[1]) * total)
    return c0, c1 - c0, total - c1


def generate_synthetic(spec: SyntheticSpec, out_dir: str) -> tuple[DatasetManifest, str]:
    """Write sequence files plus manifest; returns (manifest, manifest path).

    Sequence index ranges map to splits identically for every class and the
    signer id equals the sequence index, so splits are signer-disjoint.
    """
    seq_dir = os.path.join(out_dir, "sequences")
    os.makedirs(seq_dir, exist_ok=True)
    n_train, n_val, _ = split_sizes(spec.per_class, spec.ratios)
    class_names = [
        f"c{idx:02d}_{class_family(spec, idx)[0]}"
        for idx in range(spec.num_classes)
    ]
    entries = []
    for class_idx in range(spec.num_classes):
        for seq_idx in range(spec.per_class):
            seq = synthesize_sequence(spec, class_idx, seq_idx)
            rel = os.path.join("sequences", f"{seq.id}.txt")
            save_sequence(seq, os.path.join(out_dir, rel))
            if seq_idx < n_train:
                split = "train"
            elif seq_idx < n_train + n_val:
                split = "val"
            else:
                split = "test"
            entries.append(ManifestEntry(
                path=rel, label=class_idx, split=split,
                signer=f"signer{seq_idx:02d}"))
    manifest = DatasetManifest(class_names=class_names, entries=entries,
                               root=os.path.abspath(out_dir))
    manifest_path = os.path.join(out_dir, "manifest.txt")
    save_manifest(manifest, manifest_path)
    manifest.check_signer_disjoint()
    return manifest, manifest_path
