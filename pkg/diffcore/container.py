"""
Named-array container used for parameters, codebooks and checkpoints.

Layout: magic b"BIDP" | version u16 | header length u32 | JSON header |
payload. The header lists every array (name, shape, byte offset into the
payload), the SHA-256 of the payload and free-form metadata. The payload
is little-endian float32, arrays concatenated in header order.
"""
import json
import struct
import hashlib
import logging
from typing import Any, Dict, Tuple

import numpy as np

from diffcore.errors import ContainerError

logger = logging.getLogger(__name__)

MAGIC = b"BIDP"
VERSION = 1
PREAMBLE = struct.Struct("<4sHI")
ARRAY_DTYPE = np.dtype("<f4")


def write_container(path: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any] = None):
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype=ARRAY_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arrays[name])), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = json.dumps({
        "arrays": entries,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")

    try:
        with open(path, "wb") as f:
            f.write(PREAMBLE.pack(MAGIC, VERSION, len(header)))
            f.write(header)
            f.write(payload)
    except IOError as e:
        logger.error(f"Could not write container {path}: {e}")
        raise
    logger.debug(f"Wrote {len(entries)} arrays ({len(payload)} bytes) to {path}")


def read_container(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except IOError as e:
        logger.error(f"Could not read container {path}: {e}")
        raise

    if len(blob) < PREAMBLE.size:
        raise ContainerError(f"{path}: truncated container")
    magic, version, header_len = PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError(f"{path}: not a parameter container (magic {magic!r})")
    if version != VERSION:
        raise ContainerError(f"{path}: container version {version}, expected {VERSION}")
    try:
        header = json.loads(blob[PREAMBLE.size:PREAMBLE.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: corrupted header ({e})") from e

    payload = blob[PREAMBLE.size + header_len:]
    if len(payload) != header.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        logger.warning(f"Container integrity check FAILED for {path}")
        raise ContainerError(f"{path}: payload does not match its checksum")

    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        values = np.frombuffer(payload, dtype=ARRAY_DTYPE, count=count, offset=entry["offset"])
        arrays[entry["name"]] = values.reshape(entry["shape"]).astype(np.float32)
    return arrays, header["meta"]
