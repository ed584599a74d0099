"""One sign sample: a frames x 27 x 2 coordinate tensor with metadata."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .skeleton import NUM_NODES


@dataclass
class SkeletonSequence:
    """A keypoint sequence for a single sign.

    ``frames`` has shape (F, 27, 2) of float64; missing landmarks are NaN on
    both coordinates.  ``label`` may be None for unlabeled data.
    """

    id: str
    frames: np.ndarray
    label: int | None = None
    fps: float = 30.0
    frame_size: tuple[int, int] = (1, 1)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (NUM_NODES, 2):
            raise DataError(
                f"sequence {self.id!r}: frames must be (F, {NUM_NODES}, 2), "
                f"got {self.frames.shape}"
            )
        if self.frames.shape[0] < 1:
            raise DataError(f"sequence {self.id!r}: needs at least one frame")
        finite_or_nan = np.isfinite(self.frames) | np.isnan(self.frames)
        if not finite_or_nan.all():
            raise DataError(f"sequence {self.id!r}: contains non-finite, non-NaN values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def missing_mask(self) -> np.ndarray:
        """Boolean (F, 27) mask of missing landmarks."""
        return np.isnan(self.frames).any(axis=2)

    def with_frames(self, frames: np.ndarray) -> "SkeletonSequence":
        """Copy of this sequence with replaced frame data."""
        return replace(self, frames=np.asarray(frames, dtype=float))
