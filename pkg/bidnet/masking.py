import logging
from typing import Optional, Sequence, Union

import numpy as np

from bidnet.specs import MaskSpec

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]


def make_mask(length: int, spec: MaskSpec, seed: Optional[Seed] = None) -> np.ndarray:
    """
    Binary frame mask of the given length, 0 where the input is hidden.

    span mode: round(mask_ratio * length) zeros laid out as spans of
    span_len frames (the last one shorter if needed), separated by at least
    one visible frame whenever the visible frames allow it.
    bernoulli mode: each frame hidden independently with probability mask_ratio.
    """
    if length < 1:
        raise ValueError(f"Mask length must be >= 1, got {length}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    mask = np.ones(length, dtype=np.float32)
    if spec.mask_ratio == 0:
        return mask

    if spec.mode == "bernoulli":
        mask[rng.random(length) < spec.mask_ratio] = 0.0
        return mask

    hidden = min(length - 1, int(np.floor(spec.mask_ratio * length + 0.5)))
    if hidden <= 0:
        return mask
    num_spans = -(-hidden // spec.span_len)
    spans = [spec.span_len] * (num_spans - 1) + [hidden - (num_spans - 1) * spec.span_len]

    visible = length - hidden
    gaps = np.zeros(num_spans + 1, dtype=np.int64)
    if visible >= num_spans - 1:
        gaps[1:-1] = 1
    spare = visible - int(gaps.sum())
    gaps += rng.multinomial(spare, np.full(num_spans + 1, 1.0 / (num_spans + 1)))

    position = 0
    for gap, span in zip(gaps[:-1], spans):
        position += int(gap)
        mask[position:position + span] = 0.0
        position += span
    return mask
