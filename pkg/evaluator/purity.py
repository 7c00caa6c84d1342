"""How well unsupervised pre-action segments line up with the annotated actions."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bidnet.segments import runs

logger = logging.getLogger(__name__)


@dataclass
class PurityStats:
    segments: List[Tuple[int, int, int, int, float]]  # (begin, end, code, majority label, purity)
    cooccurrence: np.ndarray                          # codes x labels frame counts
    majority_frames: int
    total_frames: int

    @property
    def mean_purity(self) -> float:
        """Frame-weighted: frames agreeing with their segment's majority label over all frames."""
        return self.majority_frames / self.total_frames if self.total_frames else 0.0

    @property
    def segment_purity(self) -> np.ndarray:
        return np.array([s[4] for s in self.segments])

    @property
    def code_purity(self) -> float:
        """Frame-weighted agreement of every code with its majority label, read off the co-occurrence map."""
        total = int(self.cooccurrence.sum())
        return int(self.cooccurrence.max(axis=1).sum()) / total if total else 0.0


def _purity_of_runs(bounds: List[Tuple[int, int]], labels: np.ndarray) -> Tuple[List[Tuple[int, int, int, float]], int]:
    result = []
    majority_frames = 0
    for start, stop in bounds:
        counts = np.bincount(labels[start:stop])
        # argmax takes the lowest label on ties
        majority = int(np.argmax(counts))
        result.append((start, stop, majority, counts[majority] / (stop - start)))
        majority_frames += int(counts[majority])
    return result, majority_frames


def preaction_purity(class_indices: np.ndarray, labels: np.ndarray, num_codes: Optional[int] = None,
                     num_labels: Optional[int] = None) -> PurityStats:
    codes = np.asarray(class_indices, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if codes.shape != labels.shape or codes.ndim != 1:
        raise ValueError(f"Codes {codes.shape} and labels {labels.shape} must be equal-length vectors")
    num_codes = int(codes.max()) + 1 if num_codes is None else num_codes
    num_labels = int(labels.max()) + 1 if num_labels is None else num_labels

    bounds = runs(codes)
    measured, majority_frames = _purity_of_runs(bounds, labels)
    segments = [(start + 1, stop, int(codes[start]), majority, float(purity))
                for start, stop, majority, purity in measured]
    cooccurrence = np.zeros((num_codes, num_labels), dtype=np.int64)
    np.add.at(cooccurrence, (codes, labels), 1)
    return PurityStats(segments, cooccurrence, majority_frames, codes.size)


def merge_purity(stats: Sequence[PurityStats]) -> PurityStats:
    """Pools per-sequence statistics; co-occurrence matrices must share a shape."""
    segments = [s for st in stats for s in st.segments]
    cooccurrence = np.sum([st.cooccurrence for st in stats], axis=0)
    return PurityStats(segments, cooccurrence, sum(st.majority_frames for st in stats),
                       sum(st.total_frames for st in stats))


def shuffled_segment_purity(codes: Sequence[np.ndarray], labels: Sequence[np.ndarray], trials: int = 100,
                            seed: int = 0) -> float:
    """
    Monte-Carlo baseline: the pre-action segment lengths of each sequence
    are laid out again in a random order, giving random boundaries with the
    same length distribution. Returns the mean frame-weighted purity over
    the trials.
    """
    if trials < 1:
        raise ValueError("shuffled_segment_purity needs at least one trial")
    rng = np.random.default_rng([seed, 0xc4a])
    lengths = [np.array([stop - start for start, stop in runs(c)]) for c in codes]
    labels = [np.asarray(l, dtype=np.int64) for l in labels]
    total = sum(l.size for l in labels)
    results = []
    for _ in range(trials):
        agreeing = 0
        for seq_lengths, seq_labels in zip(lengths, labels):
            stops = np.cumsum(rng.permutation(seq_lengths))
            starts = np.concatenate(([0], stops[:-1]))
            _, majority = _purity_of_runs(list(zip(starts, stops)), seq_labels)
            agreeing += majority
        results.append(agreeing / total)
    return float(np.mean(results))


def label_frequency_purity(labels: Sequence[np.ndarray]) -> float:
    """Share of the most frequent label over all frames: the purity any label-blind coding settles at."""
    pooled = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels])
    if pooled.size == 0:
        raise ValueError("label_frequency_purity needs at least one frame")
    return float(np.bincount(pooled).max() / pooled.size)


def random_code_purity(labels: Sequence[np.ndarray], num_codes: int, trials: int = 100, seed: int = 0) -> float:
    """
    Monte-Carlo chance baseline: every frame gets a code drawn uniformly
    from num_codes, and purity is measured per code over the pooled
    co-occurrence map.
    """
    if trials < 1:
        raise ValueError("random_code_purity needs at least one trial")
    if num_codes < 1:
        raise ValueError(f"num_codes must be >= 1, got {num_codes}")
    pooled = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels])
    num_labels = int(pooled.max()) + 1
    rng = np.random.default_rng([seed, 0x7a2])
    results = []
    for _ in range(trials):
        codes = rng.integers(0, num_codes, size=pooled.size)
        cooccurrence = np.zeros((num_codes, num_labels), dtype=np.int64)
        np.add.at(cooccurrence, (codes, pooled), 1)
        results.append(cooccurrence.max(axis=1).sum() / pooled.size)
    return float(np.mean(results))
