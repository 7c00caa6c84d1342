import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bidnet.segments import runs
from motion.sequence import ActionSegment

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Detection:
    segment: ActionSegment
    score: float
    sequence_id: int = 0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"Detection score must be finite, got {self.score}")

    @property
    def label(self) -> int:
        return self.segment.label


def check_probabilities(probs: np.ndarray):
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ValueError(f"Frame predictions must be T x (C+1), got {probs.shape}")
    if np.any(probs < -SIMPLEX_TOLERANCE) or np.any(np.abs(probs.sum(axis=1) - 1.0) > SIMPLEX_TOLERANCE):
        raise ValueError("Frame prediction rows must be probability vectors")


def predictions_to_segments(probs: np.ndarray, score_thresholds: Sequence[float], sequence_id: int = 0,
                            background_id: Optional[int] = None) -> List[Detection]:
    """
    Every maximal run of frames with probs[:, c] >= tau becomes a candidate
    for class c, scored by the mean class probability over the run. The
    same (class, begin, end) found at several thresholds is kept once with
    its highest score. The background column never produces detections.
    """
    if not score_thresholds:
        raise ValueError("At least one score threshold is required")
    if any(not 0.0 < t < 1.0 for t in score_thresholds):
        raise ValueError(f"Score thresholds must lie in (0, 1), got {list(score_thresholds)}")
    probs = np.asarray(probs, dtype=np.float64)
    check_probabilities(probs)
    background_id = probs.shape[1] - 1 if background_id is None else background_id

    best: Dict[Tuple[int, int, int], float] = {}
    for c in range(probs.shape[1]):
        if c == background_id:
            continue
        column = probs[:, c]
        for tau in score_thresholds:
            above = column >= tau
            for start, stop in runs(above):
                if not above[start]:
                    continue
                key = (c, start + 1, stop)
                score = float(np.mean(column[start:stop]))
                if score > best.get(key, -1.0):
                    best[key] = score
    return [Detection(ActionSegment(b, e, c), best[(c, b, e)], sequence_id) for c, b, e in sorted(best)]


def temporal_iou(a: ActionSegment, b: ActionSegment) -> float:
    """Intersection over union of two inclusive frame intervals."""
    inter = max(0, min(a.end, b.end) - max(a.begin, b.begin) + 1)
    union = a.length + b.length - inter
    return inter / union
