"""Sequence normalization and training-time augmentation.

Pipeline order (normalization first, then augmentation, documented choice):

    to_pixel_coords (only for [0,1]-normalized input)
    normalize_bbox
    fill_missing
    augment_geometry          (training only)
    mask_and_fill_hands       (training only)
    temporal_speed_augment    (training only)
    resample_to_length

Every operation is pure and deterministic given (inputs, rng); batch
pipelines may run sequences in parallel as long as each sequence's RNG
stream is derived from (seed, sequence id).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .sequence import SkeletonSequence
from .skeleton import HAND_NODES


@dataclass(frozen=True)
class AugmentConfig:
    """Training-time augmentation magnitudes; zero-width ranges disable."""

    shear_range: float = 0.1
    rotation_range: float = 10.0  # degrees
    hand_mask_prob: float = 0.2
    speed_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.shear_range < 0 or self.rotation_range < 0:
            raise ConfigError("shear/rotation ranges must be nonnegative")
        if not 0.0 <= self.hand_mask_prob <= 1.0:
            raise ConfigError("hand_mask_prob must be in [0, 1]")
        if self.speed_range[0] > self.speed_range[1]:
            raise ConfigError("speed_range low must not exceed high")
        if self.speed_range[0] <= 0:
            raise ConfigError("speed factors must be positive")


def sequence_rng(seed: int, epoch: int, sequence_id: str) -> np.random.Generator:
    """Independent RNG stream for one sequence, stable across scheduling."""
    key = zlib.crc32(sequence_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, key]))


def to_pixel_coords(seq: SkeletonSequence, frame_size: tuple[int, int]) -> SkeletonSequence:
    """Scale [0,1]-normalized coordinates by frame width/height."""
    width, height = frame_size
    if width <= 0 or height <= 0:
        raise ConfigError(f"frame size must be positive, got {frame_size}")
    frames = seq.frames.copy()
    frames[:, :, 0] *= width
    frames[:, :, 1] *= height
    out = seq.with_frames(frames)
    out.frame_size = (int(width), int(height))
    return out


def normalize_bbox(seq: SkeletonSequence) -> SkeletonSequence:
    """Map the sequence-wide tight bounding box into [-1, 1]^2.

    The scale is isotropic (aspect preserved): the wider axis spans exactly
    [-1, 1] and the box center lands at the origin.  The box is computed
    once over the whole sequence so within-sign motion amplitude survives.
    """
    pts = seq.frames
    valid = ~np.isnan(pts).any(axis=2)
    if not valid.any():
        raise DataError(f"sequence {seq.id!r}: all keypoints missing")
    xs = pts[:, :, 0][valid]
    ys = pts[:, :, 1][valid]
    cx = (xs.min() + xs.max()) / 2.0
    cy = (ys.min() + ys.max()) / 2.0
    half = max(xs.max() - xs.min(), ys.max() - ys.min()) / 2.0
    if half == 0.0:
        half = 1.0  # degenerate single-point sequence
    frames = pts.copy()
    frames[:, :, 0] -= cx
    frames[:, :, 1] -= cy
    frames /= half
    return seq.with_frames(frames)


def fill_missing(seq: SkeletonSequence) -> SkeletonSequence:
    """Fill missing landmarks by temporal interpolation per node.

    Interior gaps use the same direction/magnitude interpolation as hand
    masking; boundary gaps copy the nearest observed frame.  A node missing
    in every frame falls back to the origin.
    """
    frames = seq.frames.copy()
    missing = np.isnan(frames).any(axis=2)
    for node in range(frames.shape[1]):
        col = missing[:, node]
        if not col.any():
            continue
        if col.all():
            frames[:, node, :] = 0.0
            continue
        frames[:, node, :] = _fill_track(frames[:, node, :], col)
    return seq.with_frames(frames)


def _slerp_point(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Interpolate direction about the origin, magnitude linearly.

    Equal endpoints short-circuit to the endpoint value exactly; a zero
    endpoint falls back to linear interpolation.
    """
    if np.array_equal(a, b):
        return a.copy()
    ra = math.hypot(a[0], a[1])
    rb = math.hypot(b[0], b[1])
    if ra == 0.0 or rb == 0.0:
        return (1.0 - t) * a + t * b
    theta_a = math.atan2(a[1], a[0])
    theta_b = math.atan2(b[1], b[0])
    delta = math.remainder(theta_b - theta_a, 2.0 * math.pi)  # shorter arc
    theta = theta_a + t * delta
    radius = (1.0 - t) * ra + t * rb
    return np.array([radius * math.cos(theta), radius * math.sin(theta)])


def _fill_track(track: np.ndarray, gap: np.ndarray) -> np.ndarray:
    """Fill gap frames of one node track (F, 2); gap marks frames to fill."""
    out = track.copy()
    known = np.flatnonzero(~gap)
    for f in np.flatnonzero(gap):
        before = known[known < f]
        after = known[known > f]
        if before.size and after.size:
            lo, hi = before[-1], after[0]
            t = (f - lo) / (hi - lo)
            out[f] = _slerp_point(track[lo], track[hi], t)
        elif before.size:
            out[f] = track[before[-1]]
        else:
            out[f] = track[after[0]]
    return out


def augment_geometry(
    seq: SkeletonSequence, cfg: AugmentConfig, rng: np.random.Generator
) -> SkeletonSequence:
    """Apply one sampled shear + rotation about the origin to all frames.

    One transform per sequence (camera/signer pose is constant within a
    video).  Shear is applied first, then a counterclockwise rotation.
    """
    sx, sy = rng.uniform(-cfg.shear_range, cfg.shear_range, size=2)
    angle = math.radians(rng.uniform(-cfg.rotation_range, cfg.rotation_range))
    shear = np.array([[1.0, sx], [sy, 1.0]])
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    rot = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
    matrix = rot @ shear
    if cfg.shear_range == 0.0 and cfg.rotation_range == 0.0:
        return seq.with_frames(seq.frames.copy())
    frames = seq.frames @ matrix.T
    return seq.with_frames(frames)


def mask_and_fill_hands(
    seq: SkeletonSequence, mask_prob: float, rng: np.random.Generator
) -> SkeletonSequence:
    """Mask both hands on a sampled frame subset and fill by interpolation.

    round(mask_prob * F) frames are drawn without replacement; their 20 hand
    keypoints are replaced by the direction/magnitude interpolation between
    the nearest unmasked frames, copying the nearest unmasked frame at the
    boundaries.  The output never contains missing values.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ConfigError(f"mask probability must be in [0, 1], got {mask_prob}")
    total = seq.num_frames
    count = int(round(mask_prob * total))
    if count == 0:
        return seq.with_frames(seq.frames.copy())
    if count >= total:
        return seq.with_frames(seq.frames.copy())  # no anchor frames left
    picked = np.sort(rng.choice(total, size=count, replace=False))
    gap = np.zeros(total, dtype=bool)
    gap[picked] = True
    frames = seq.frames.copy()
    for node in HAND_NODES:
        frames[:, node, :] = _fill_track(seq.frames[:, node, :], gap)
    return seq.with_frames(frames)


def temporal_speed_augment(
    seq: SkeletonSequence, speed_range: tuple[float, float], rng: np.random.Generator
) -> SkeletonSequence:
    """Resample the frame count by a random speed factor.

    Slowing down (target below F) keeps an order-preserving sample without
    replacement; speeding up keeps every original frame and duplicates a
    with-replacement sample, so the index sequence is nondecreasing.
    """
    if seq.num_frames < 2:
        return seq.with_frames(seq.frames.copy())
    factor = rng.uniform(speed_range[0], speed_range[1])
    total = seq.num_frames
    target = max(1, int(round(total * factor)))
    if target == total:
        return seq.with_frames(seq.frames.copy())
    if target < total:
        idx = np.sort(rng.choice(total, size=target, replace=False))
    else:
        extra = rng.choice(total, size=target - total, replace=True)
        idx = np.sort(np.concatenate([np.arange(total), extra]))
    return seq.with_frames(seq.frames[idx])


def resample_to_length(
    seq: SkeletonSequence,
    target: int,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> SkeletonSequence:
    """Force the sequence to exactly ``target`` frames.

    Short sequences replicate the first frame ``offset`` times at the head
    (offset is a random integer during training, 0 otherwise) and the last
    frame at the tail.  Long sequences keep uniformly spaced frames: jittered
    within equal bins during training, rint(linspace(0, F-1, target)) at
    evaluation.
    """
    if target < 1:
        raise ConfigError(f"target length must be >= 1, got {target}")
    total = seq.num_frames
    if total == target:
        return seq.with_frames(seq.frames.copy())
    if total < target:
        pad = target - total
        offset = int(rng.integers(0, pad + 1)) if (training and rng is not None) else 0
        idx = np.concatenate([
            np.zeros(offset, dtype=int),
            np.arange(total),
            np.full(pad - offset, total - 1, dtype=int),
        ])
    elif training and rng is not None:
        # one random frame per equal-width bin keeps indices strictly increasing
        edges = np.floor(np.arange(target + 1) * total / target).astype(int)
        idx = np.array([
            int(rng.integers(edges[k], max(edges[k] + 1, edges[k + 1])))
            for k in range(target)
        ])
    else:
        idx = np.rint(np.linspace(0.0, total - 1, num=target)).astype(int)
    return seq.with_frames(seq.frames[idx])


def augment_sequence(
    seq: SkeletonSequence, cfg: AugmentConfig, rng: np.random.Generator
) -> SkeletonSequence:
    """The full training-time augmentation chain on a normalized sequence."""
    seq = augment_geometry(seq, cfg, rng)
    seq = mask_and_fill_hands(seq, cfg.hand_mask_prob, rng)
    seq = temporal_speed_augment(seq, cfg.speed_range, rng)
    return seq
