import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

from motion.dataset import DatasetManifest
from motion.errors import DataError
from motion.sequence import AnnotatedSequence

logger = logging.getLogger(__name__)


class SequenceBank:
    """
    One manifest split held in memory as fixed-length arrays:
    inputs N x J x T (zero padded), valid N x T, labels N x T (background
    on unannotated and padded frames).
    """

    def __init__(self, manifest: DatasetManifest, split: str, seq_len: int, labeled_only: bool = False,
                 workers: int = 4):
        entries = manifest.labeled(split) if labeled_only else manifest.split(split)
        self.entries = entries
        self.seq_len = seq_len
        self.joints = manifest.joints
        self.background_id = manifest.background_id
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            self.sequences: List[AnnotatedSequence] = list(pool.map(manifest.load, entries))

        count = len(self.sequences)
        self.inputs = np.zeros((count, self.joints, seq_len), dtype=np.float32)
        self.valid = np.zeros((count, seq_len), dtype=bool)
        self.labels = np.full((count, seq_len), self.background_id, dtype=np.int64)
        for i, annotated in enumerate(self.sequences):
            frames = annotated.sequence.frames
            if frames.shape[1] != self.joints:
                raise DataError(f"{entries[i].path} has J={frames.shape[1]}, manifest says {self.joints}")
            if frames.shape[0] > seq_len:
                raise DataError(f"{entries[i].path} has {frames.shape[0]} frames, longer than {seq_len}")
            n = frames.shape[0]
            self.inputs[i, :, :n] = frames.T
            self.valid[i, :n] = True
            self.labels[i, :n] = annotated.frame_labels(self.background_id)
        logger.info(f"Loaded {count} {split} sequences{' (labeled only)' if labeled_only else ''}")

    def __len__(self) -> int:
        return len(self.sequences)

    def batches(self, batch_size: int, seed: Optional[Union[int, Sequence[int]]] = None) -> Iterator[np.ndarray]:
        """Index arrays covering every sequence once; shuffled when a seed is given."""
        order = np.arange(len(self))
        if seed is not None:
            order = np.random.default_rng(seed).permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]
