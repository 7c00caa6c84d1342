import os
import struct
import logging
from typing import List

import numpy as np

from motion.errors import DataError, FormatError
from motion.sequence import ActionSegment, AnnotatedSequence, MotionSequence, validate_segments

logger = logging.getLogger(__name__)

MAGIC = b"BIDS"
VERSION = 1
# magic, version, reserved, T, J
HEADER = struct.Struct("<4sHHII")
FRAME_DTYPE = np.dtype("<f4")


def write_sequence(path: str, annotated: AnnotatedSequence):
    """
    Writes the 16-byte header, the row-major float32 frames and the text
    annotation block ("begin end label" per line, frame rate as a comment).
    """
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"Parent directory does not exist: {parent}")

    frames = annotated.sequence.frames
    num_frames, joints = frames.shape
    lines = [f"# frame_rate {float(annotated.sequence.frame_rate)!r}"]
    lines += [f"{seg.begin} {seg.end} {seg.label}" for seg in annotated.segments]

    try:
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, VERSION, 0, num_frames, joints))
            f.write(np.ascontiguousarray(frames, dtype=FRAME_DTYPE).tobytes())
            f.write(("\n".join(lines) + "\n").encode("utf-8"))
    except IOError as e:
        logger.error(f"Error writing sequence {path}: {e}")
        raise


def read_sequence(path: str) -> AnnotatedSequence:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except IOError as e:
        logger.error(f"Error reading sequence {path}: {e}")
        raise DataError(f"Cannot read sequence file {path}: {e}") from e

    if len(blob) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, _, num_frames, joints = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if num_frames < 1 or joints < 1:
        raise FormatError(f"{path}: invalid dimensions T={num_frames} J={joints}")

    payload_end = HEADER.size + num_frames * joints * FRAME_DTYPE.itemsize
    if len(blob) < payload_end:
        raise FormatError(f"{path}: dimension mismatch, header says {num_frames}x{joints} "
                          f"but payload holds {len(blob) - HEADER.size} bytes")
    frames = np.frombuffer(blob, dtype=FRAME_DTYPE, count=num_frames * joints, offset=HEADER.size)
    frames = frames.reshape(num_frames, joints).astype(np.float32)

    frame_rate, segments = _parse_annotations(blob[payload_end:], path)
    try:
        validate_segments(segments, num_frames)
        sequence = MotionSequence(frames, frame_rate)
    except DataError as e:
        raise FormatError(f"{path}: {e}") from e
    return AnnotatedSequence(sequence, segments)


def _parse_annotations(block: bytes, path: str):
    frame_rate = None
    segments: List[ActionSegment] = []
    try:
        text = block.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: annotation block is not text") from e

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "frame_rate":
                try:
                    frame_rate = float(parts[1])
                except ValueError as e:
                    raise FormatError(f"{path}: annotation line {lineno}: bad frame_rate {parts[1]!r}") from e
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}: annotation line {lineno} must be 'begin end label': {line!r}")
        try:
            begin, end, label = (int(p) for p in parts)
            segments.append(ActionSegment(begin, end, label))
        except ValueError as e:
            # DataError from ActionSegment is a ValueError too
            raise FormatError(f"{path}: annotation line {lineno}: {e}") from e

    if frame_rate is None:
        raise FormatError(f"{path}: missing frame_rate annotation")
    return frame_rate, segments
