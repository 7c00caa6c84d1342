import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from diffcore.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

EMA_EPSILON = 1e-5
DEFAULT_DECAY = 0.99


@dataclass(eq=False)
class Codebook:
    """
    K x d code matrix trained only by exponential moving averages.
    `usage` counts assignments since the last reset_usage() and drives
    dead-code detection; it is bookkeeping, not part of the EMA state.
    """
    entries: np.ndarray
    ema_cluster_size: np.ndarray
    ema_sum: np.ndarray
    decay: float = DEFAULT_DECAY
    trainable: bool = True
    usage: Optional[np.ndarray] = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float32)
        if self.entries.ndim != 2 or self.entries.shape[0] < 1:
            raise ShapeError(f"Codebook entries must be K x d with K >= 1, got {self.entries.shape}")
        if not np.all(np.isfinite(self.entries)):
            raise NumericalError("Codebook entries must be finite")
        self.ema_cluster_size = np.asarray(self.ema_cluster_size, dtype=np.float32)
        self.ema_sum = np.asarray(self.ema_sum, dtype=np.float32)
        if self.ema_cluster_size.shape != (self.size,) or self.ema_sum.shape != self.entries.shape:
            raise ShapeError("EMA accumulators do not match the codebook shape")
        if np.any(self.ema_cluster_size < 0):
            raise ValueError("ema_cluster_size must be non-negative")
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {self.decay}")
        if self.usage is None:
            self.usage = np.zeros(self.size, dtype=np.int64)

    @classmethod
    def create(cls, size: int, dim: int, rng: np.random.Generator, decay: float = DEFAULT_DECAY) -> "Codebook":
        bound = 1.0 / np.sqrt(dim)
        entries = rng.uniform(-bound, bound, size=(size, dim)).astype(np.float32)
        return cls(entries, np.ones(size, dtype=np.float32), entries.copy(), decay=decay)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.entries.copy(), self.ema_cluster_size.copy(), self.ema_sum.copy(),
                        decay=self.decay, trainable=self.trainable, usage=self.usage.copy())

    def reset_usage(self):
        self.usage = np.zeros(self.size, dtype=np.int64)

    def to_arrays(self, name: str) -> Dict[str, np.ndarray]:
        return {
            name: self.entries,
            f"{name}.ema_cluster_size": self.ema_cluster_size,
            f"{name}.ema_sum": self.ema_sum,
        }

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], name: str, decay: float = DEFAULT_DECAY,
                    trainable: bool = True) -> "Codebook":
        try:
            return cls(arrays[name], arrays[f"{name}.ema_cluster_size"], arrays[f"{name}.ema_sum"],
                       decay=decay, trainable=trainable)
        except KeyError as e:
            raise ShapeError(f"Container is missing codebook array {e}") from e


def squared_distances(features: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """N x K matrix of ||f_n - c_k||^2, from explicit differences."""
    diff = features[:, None, :] - entries[None, :, :].astype(features.dtype)
    return np.sum(diff * diff, axis=-1)


def assign(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Index of the nearest entry for every row of an N x d feature matrix; lowest index wins ties."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != codebook.dim:
        raise ShapeError(f"Features {features.shape} do not match codebook dim {codebook.dim}")
    if not np.all(np.isfinite(features)):
        raise NumericalError("Cannot quantize non-finite features")
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    # np.argmin returns the first minimum
    return np.argmin(squared_distances(features, codebook.entries), axis=1).astype(np.int64)


def nearest_code(feature: np.ndarray, codebook: Codebook) -> Tuple[int, np.ndarray]:
    index = int(assign(np.asarray(feature)[None, :], codebook)[0])
    return index, codebook.entries[index].copy()


def lookup(indices: np.ndarray, codebook: Codebook, dtype=np.float32) -> np.ndarray:
    return codebook.entries[np.asarray(indices)].astype(dtype)


def ema_update(codebook: Codebook, indices: np.ndarray, features: np.ndarray,
               decay: Optional[float] = None) -> Codebook:
    """
    One EMA step from the features assigned in a batch:
        size_k <- decay * size_k + (1 - decay) * count_k
        sum_k  <- decay * sum_k  + (1 - decay) * sum of features assigned to k
        entry_k = sum_k / (size_k + eps)
    Entries whose accumulated size is exactly zero keep their value.
    """
    if not codebook.trainable:
        raise ValueError("ema_update called on a frozen codebook")
    decay = codebook.decay if decay is None else float(decay)
    indices = np.asarray(indices, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (indices.size, codebook.dim):
        raise ShapeError(f"EMA features {features.shape} do not match {indices.size} indices of dim {codebook.dim}")

    counts = np.bincount(indices, minlength=codebook.size).astype(np.float64)
    sums = np.zeros((codebook.size, codebook.dim), dtype=np.float64)
    # add.at accumulates in index order, so the sum is reproducible
    np.add.at(sums, indices, features)

    size = decay * codebook.ema_cluster_size.astype(np.float64) + (1.0 - decay) * counts
    total = decay * codebook.ema_sum.astype(np.float64) + (1.0 - decay) * sums
    live = size > 0
    entries = codebook.entries.astype(np.float64)
    entries[live] = total[live] / (size[live] + EMA_EPSILON)[:, None]

    codebook.ema_cluster_size = size.astype(np.float32)
    codebook.ema_sum = total.astype(np.float32)
    codebook.entries = entries.astype(np.float32)
    codebook.usage += counts.astype(np.int64)
    return codebook


def usage_stats(history: Iterable[np.ndarray], size: int, dead_code_threshold: float = 1.0) -> Dict:
    """Per-code counts, perplexity exp(H(p)) of the empirical usage, and codes used fewer than threshold times."""
    chunks = [np.asarray(h, dtype=np.int64).reshape(-1) for h in history]
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    if flat.size == 0:
        raise ValueError("usage_stats needs a non-empty index history")
    counts = np.bincount(flat, minlength=size)
    return stats_from_counts(counts, dead_code_threshold)


def stats_from_counts(counts: np.ndarray, dead_code_threshold: float = 1.0) -> Dict:
    counts = np.asarray(counts, dtype=np.int64)
    p = counts[counts > 0] / counts.sum()
    entropy = float(-np.sum(p * np.log(p)))
    dead = [int(k) for k in np.flatnonzero(counts < dead_code_threshold)]
    return {
        "counts": counts,
        "perplexity": float(np.exp(entropy)),
        "dead_codes": dead,
        "used": int(np.count_nonzero(counts)),
    }


def reinit_dead_codes(codebook: Codebook, candidates: np.ndarray, seed: int,
                      dead_codes: Optional[Sequence[int]] = None,
                      dead_code_threshold: float = 1.0) -> Codebook:
    """
    Replaces every dead code with a randomly drawn candidate feature and
    restarts its EMA accumulators there. Without an explicit list, codes
    whose usage counter is below the threshold are dead.
    """
    candidates = np.asarray(candidates)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("reinit_dead_codes needs a non-empty N x d candidate matrix")
    if candidates.shape[1] != codebook.dim:
        raise ShapeError(f"Candidates have dim {candidates.shape[1]}, codebook {codebook.dim}")
    if dead_codes is None:
        dead_codes = np.flatnonzero(codebook.usage < dead_code_threshold)
    dead: List[int] = sorted(int(k) for k in dead_codes)
    if not dead:
        return codebook

    rng = np.random.default_rng(seed)
    replace = len(dead) > candidates.shape[0]
    picks = rng.choice(candidates.shape[0], size=len(dead), replace=replace)
    for k, pick in zip(dead, picks):
        codebook.entries[k] = candidates[pick]
        codebook.ema_sum[k] = candidates[pick]
        codebook.ema_cluster_size[k] = 1.0
    logger.debug(f"Re-initialised {len(dead)} of {codebook.size} codes")
    return codebook
