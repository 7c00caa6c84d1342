"""Pre-action segments: maximal runs of one class code, and the boundary targets built from them."""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from motion.sequence import ActionSegment


@dataclass
class BoundaryTargets:
    target: np.ndarray        # T x J, every row replaced by its segment's final frame
    boundary_map: np.ndarray  # T, 1-based end frame of the segment holding each frame


def runs(values: np.ndarray) -> List[Tuple[int, int]]:
    """0-based half-open [start, stop) runs of equal consecutive values."""
    values = np.asarray(values)
    if values.size == 0:
        return []
    cuts = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [values.size]))
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


def segments_from_codes(class_indices: np.ndarray) -> List[ActionSegment]:
    class_indices = np.asarray(class_indices)
    if class_indices.ndim != 1 or class_indices.size < 1:
        raise ValueError(f"Expected a non-empty 1-D code sequence, got shape {class_indices.shape}")
    return [ActionSegment(start + 1, stop, int(class_indices[start])) for start, stop in runs(class_indices)]


def run_length_decode(segments: List[ActionSegment]) -> np.ndarray:
    _check_tiling(segments)
    return np.concatenate([np.full(seg.length, seg.label, dtype=np.int64) for seg in segments])


def boundary_targets(frames: np.ndarray, segments: List[ActionSegment]) -> BoundaryTargets:
    frames = np.asarray(frames)
    _check_tiling(segments, frames.shape[0])
    boundary_map = np.concatenate([np.full(seg.length, seg.end, dtype=np.int64) for seg in segments])
    return BoundaryTargets(frames[boundary_map - 1].copy(), boundary_map)


def _check_tiling(segments: List[ActionSegment], num_frames: int = None):
    if not segments:
        raise ValueError("Empty segment list")
    expected = 1
    for seg in segments:
        if seg.begin != expected:
            raise ValueError(f"Segments do not tile the sequence: expected a segment starting at {expected}, "
                             f"got ({seg.begin}, {seg.end})")
        expected = seg.end + 1
    if num_frames is not None and expected != num_frames + 1:
        raise ValueError(f"Segments cover frames 1..{expected - 1}, sequence has {num_frames}")
