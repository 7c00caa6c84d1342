import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from motion.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_JOINTS = 75
DEFAULT_FRAME_RATE = 30.0


@dataclass(frozen=True)
class ActionSegment:
    """Inclusive, 1-based frame interval with a class label."""
    begin: int
    end: int
    label: int

    def __post_init__(self):
        if self.begin < 1 or self.end < self.begin:
            raise DataError(f"Invalid segment bounds ({self.begin}, {self.end})")
        if self.label < 0:
            raise DataError(f"Segment label must be non-negative, got {self.label}")

    @property
    def length(self) -> int:
        return self.end - self.begin + 1


@dataclass(eq=False)
class MotionSequence:
    frames: np.ndarray
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise DataError(f"Motion frames must be a non-empty T x J matrix, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("Motion frames contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.frame_rate == other.frame_rate
                and self.frames.dtype == other.frames.dtype
                and np.array_equal(self.frames, other.frames))


@dataclass(eq=False)
class AnnotatedSequence:
    sequence: MotionSequence
    segments: List[ActionSegment] = field(default_factory=list)

    def __post_init__(self):
        validate_segments(self.segments, self.sequence.num_frames)

    @property
    def num_frames(self) -> int:
        return self.sequence.num_frames

    def frame_labels(self, background_id: int) -> np.ndarray:
        return frame_labels(self, background_id)

    def background_ranges(self) -> List[Tuple[int, int]]:
        """Maximal 1-based inclusive frame ranges not covered by any segment."""
        ranges = []
        cursor = 1
        for seg in self.segments:
            if seg.begin > cursor:
                ranges.append((cursor, seg.begin - 1))
            cursor = seg.end + 1
        if cursor <= self.num_frames:
            ranges.append((cursor, self.num_frames))
        return ranges

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotatedSequence):
            return NotImplemented
        return self.sequence == other.sequence and list(self.segments) == list(other.segments)


def validate_segments(segments: List[ActionSegment], num_frames: int):
    previous_end = 0
    for seg in segments:
        if seg.begin <= previous_end:
            raise DataError(f"Segments overlap or are unsorted at ({seg.begin}, {seg.end})")
        if seg.end > num_frames:
            raise DataError(f"Segment ({seg.begin}, {seg.end}) exceeds sequence length {num_frames}")
        previous_end = seg.end


def frame_labels(annotated: AnnotatedSequence, background_id: int) -> np.ndarray:
    labels = np.full(annotated.num_frames, background_id, dtype=np.int64)
    for seg in annotated.segments:
        labels[seg.begin - 1:seg.end] = seg.label
    return labels
