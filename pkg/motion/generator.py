"""
Procedural skeletal motion: every action class is a deterministic flow field
over joint channels (per-joint sinusoid mixtures with limb-coupled phases
around a class-specific posture), sampled with seeded low-amplitude noise.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np

from motion.errors import DataError
from motion.sequence import (ActionSegment, AnnotatedSequence, MotionSequence,
                             DEFAULT_FRAME_RATE, DEFAULT_JOINTS)

logger = logging.getLogger(__name__)

NUM_GENERATORS = 16
NOISE_STD = 0.01
HARMONICS = 2
LIMBS = 5
FLOW_FIELD_SALT = 7919


@dataclass(frozen=True)
class FlowField:
    posture: np.ndarray      # (J,)
    amplitudes: np.ndarray   # (H, J)
    frequencies: np.ndarray  # (H, J) cycles per second
    phases: np.ndarray       # (H, J)
    drift: np.ndarray        # (J,) slow linear component per second


@lru_cache(maxsize=256)
def flow_field(class_id: int, joints: int) -> FlowField:
    if class_id not in range(NUM_GENERATORS):
        raise DataError(f"Unknown action generator id {class_id} (registered: 0..{NUM_GENERATORS - 1})")
    rng = np.random.default_rng([FLOW_FIELD_SALT, class_id, joints])

    posture = rng.normal(0.0, 0.5, size=joints)
    amplitudes = rng.uniform(0.1, 0.5, size=(HARMONICS, joints))
    # joints of one limb share a base frequency and phase, each joint adds a small offset
    limb_of = np.arange(joints) % LIMBS
    limb_freq = rng.uniform(0.2, 2.0, size=(HARMONICS, LIMBS))
    limb_phase = rng.uniform(0.0, 2 * np.pi, size=(HARMONICS, LIMBS))
    frequencies = limb_freq[:, limb_of] * rng.uniform(0.9, 1.1, size=(HARMONICS, joints))
    phases = limb_phase[:, limb_of] + rng.normal(0.0, 0.3, size=(HARMONICS, joints))
    drift = rng.normal(0.0, 0.05, size=joints)

    return FlowField(posture, amplitudes, frequencies, phases, drift)


def render_flow_field(field: FlowField, times: np.ndarray, frame_rate: float) -> np.ndarray:
    """Noise-free joint values at integer frame times (may be negative)."""
    seconds = np.asarray(times, dtype=np.float64)[:, None] / frame_rate
    values = field.posture[None, :] + field.drift[None, :] * seconds
    for h in range(field.amplitudes.shape[0]):
        values = values + field.amplitudes[h] * np.sin(
            2 * np.pi * field.frequencies[h] * seconds + field.phases[h])
    return values


def _render_clip(class_id: int, start: int, stop: int, joints: int, noise_seed: Sequence[int],
                 frame_rate: float) -> np.ndarray:
    field = flow_field(class_id, joints)
    clean = render_flow_field(field, np.arange(start, stop), frame_rate)
    rng = np.random.default_rng(list(noise_seed))
    return clean + rng.normal(0.0, NOISE_STD, size=clean.shape)


def generate_action_clip(class_id: int, duration: int, joints: int = DEFAULT_JOINTS, seed: int = 0,
                         frame_rate: float = DEFAULT_FRAME_RATE) -> MotionSequence:
    if duration < 1:
        raise DataError(f"Clip duration must be >= 1, got {duration}")
    frames = _render_clip(class_id, 0, duration, joints, (seed, class_id, duration, joints), frame_rate)
    return MotionSequence(frames.astype(np.float32), frame_rate)


def synthesize_sequence(class_list: List[int], durations: List[int], transition_len: int, seed: int,
                        joints: int = DEFAULT_JOINTS, frame_rate: float = DEFAULT_FRAME_RATE,
                        labels: List[int] = None) -> AnnotatedSequence:
    """
    Concatenates clips, bridging consecutive clips with a linear cross-fade of
    transition_len frames: the outgoing flow field continued past its end is
    blended into the incoming one sampled before its start. Cross-fade frames
    are left unannotated (background). Segment labels default to the
    generator ids; pass labels to map them to dataset label ids.
    """
    if not class_list:
        raise DataError("class_list must not be empty")
    if len(class_list) != len(durations):
        raise DataError(f"class_list and durations differ in length ({len(class_list)} vs {len(durations)})")
    if transition_len < 0:
        raise DataError(f"transition_len must be >= 0, got {transition_len}")
    if any(d < 1 for d in durations):
        raise DataError(f"All durations must be >= 1, got {list(durations)}")
    labels = list(class_list) if labels is None else list(labels)

    n = len(class_list)
    rendered = []
    for i, (class_id, duration) in enumerate(zip(class_list, durations)):
        lead = transition_len if i > 0 else 0
        tail = transition_len if i < n - 1 else 0
        rendered.append(_render_clip(class_id, -lead, duration + tail, joints, (seed, i, class_id), frame_rate))

    blend = (np.arange(1, transition_len + 1, dtype=np.float64) / (transition_len + 1))[:, None]
    pieces = []
    segments = []
    cursor = 1
    for i, duration in enumerate(durations):
        lead = transition_len if i > 0 else 0
        pieces.append(rendered[i][lead:lead + duration])
        segments.append(ActionSegment(cursor, cursor + duration - 1, labels[i]))
        cursor += duration
        if i < n - 1 and transition_len > 0:
            outgoing = rendered[i][lead + duration:]
            incoming = rendered[i + 1][:transition_len]
            pieces.append((1.0 - blend) * outgoing + blend * incoming)
            cursor += transition_len

    frames = np.concatenate(pieces, axis=0).astype(np.float32)
    logger.debug(f"Synthesized sequence of {frames.shape[0]} frames from classes {list(class_list)}")
    return AnnotatedSequence(MotionSequence(frames, frame_rate), segments)
