import logging
from typing import List, Tuple

import numpy as np

from bidnet.classifier import classifier_probs
from diffcore.errors import ShapeError
from diffcore.graph import constant
from motion.dataset import DatasetManifest
from motion.sequence import AnnotatedSequence, MotionSequence
from trainer.checkpoint import Checkpoint

logger = logging.getLogger(__name__)

INFERENCE_BATCH = 16


def _frames(sequence) -> np.ndarray:
    if isinstance(sequence, AnnotatedSequence):
        sequence = sequence.sequence
    if isinstance(sequence, MotionSequence):
        return sequence.frames
    return np.asarray(sequence)


def frame_probabilities(ckpt: Checkpoint, sequence) -> np.ndarray:
    """T x (C+1) class probabilities for one sequence (background in the last column)."""
    return batch_frame_probabilities(ckpt, [_frames(sequence)])[0]


def batch_frame_probabilities(ckpt: Checkpoint, sequences: List[np.ndarray]) -> List[np.ndarray]:
    if not ckpt.has_classifier:
        raise ShapeError("Checkpoint has no classifier head; fine-tune it first")
    return _run(ckpt, sequences, lambda model, p, xb: np.transpose(classifier_probs(p, model.encode(p, constant(xb))),
                                                                   (0, 2, 1)))


def class_codes(ckpt: Checkpoint, sequence) -> np.ndarray:
    """Pre-action class code per frame from the checkpoint's frozen class codebook."""
    return batch_class_codes(ckpt, [_frames(sequence)])[0]


def batch_class_codes(ckpt: Checkpoint, sequences: List[np.ndarray]) -> List[np.ndarray]:
    return _run(ckpt, sequences, lambda model, p, xb: model.class_codes(p, xb, ckpt.class_codebook))


def _run(ckpt: Checkpoint, sequences: List[np.ndarray], fn) -> List:
    """
    Applies fn to batches of sequences zero-padded to the training length,
    the same layout the network saw during training, and crops the result
    back to each sequence's own length.
    """
    model = ckpt.model()
    p = ckpt.params.leaves(requires_grad=False)
    for i, frames in enumerate(sequences):
        if frames.ndim != 2 or frames.shape[1] != model.joints:
            raise ShapeError(f"Sequence {i} has shape {frames.shape}, model expects T x {model.joints}")
    if not sequences:
        return []
    length = max([ckpt.train_config().seq_len] + [s.shape[0] for s in sequences])

    results: List = []
    for start in range(0, len(sequences), INFERENCE_BATCH):
        chunk = sequences[start:start + INFERENCE_BATCH]
        xb = np.zeros((len(chunk), model.joints, length), dtype=np.float32)
        for j, frames in enumerate(chunk):
            xb[j, :, :frames.shape[0]] = frames.T
        out = fn(model, p, xb)
        results.extend(out[j][:frames.shape[0]] for j, frames in enumerate(chunk))
    return results


def predict_split(ckpt: Checkpoint, manifest: DatasetManifest, split: str = "test") -> Tuple[
        List[AnnotatedSequence], List[np.ndarray], List[np.ndarray]]:
    """Sequences of a split with their frame probabilities (if the checkpoint has a head) and class codes."""
    sequences = [manifest.load(e) for e in manifest.split(split)]
    frames = [a.sequence.frames for a in sequences]
    probs = batch_frame_probabilities(ckpt, frames) if ckpt.has_classifier else []
    codes = batch_class_codes(ckpt, frames)
    logger.info(f"Ran inference on {len(sequences)} {split} sequences")
    return sequences, probs, codes
