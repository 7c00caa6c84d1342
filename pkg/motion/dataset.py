import os
import math
import queue
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Set

import numpy as np
from tqdm import tqdm

from motion.errors import DataError, FormatError
from motion.generator import synthesize_sequence
from motion.seq_io import read_sequence, write_sequence
from motion.sequence import AnnotatedSequence

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.txt"
NUM_WORKERS = 4


@dataclass
class GeneratorConfig:
    classes: List[int] = field(default_factory=lambda: [0, 1, 2, 3])
    train_count: int = 200
    val_count: int = 0
    test_count: int = 50
    joints: int = 24
    min_len: int = 96
    max_len: int = 120
    min_segments: int = 2
    max_segments: int = 4
    min_duration: int = 12
    min_transition: int = 4
    max_transition: int = 12
    label_fraction: float = 0.1
    frame_rate: float = 30.0

    def __post_init__(self):
        self.classes = [int(c) for c in self.classes]
        if len(self.classes) < 2:
            raise DataError(f"At least 2 action classes are required, got {self.classes}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError(f"Duplicate generator ids in {self.classes}")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise DataError(f"label_fraction must be in [0, 1], got {self.label_fraction}")
        if min(self.train_count, self.val_count, self.test_count) < 0:
            raise DataError("Sequence counts must be non-negative")
        if not 1 <= self.min_segments <= self.max_segments:
            raise DataError(f"Invalid segment count range [{self.min_segments}, {self.max_segments}]")
        if not 0 <= self.min_transition <= self.max_transition:
            raise DataError(f"Invalid transition range [{self.min_transition}, {self.max_transition}]")
        shortest = self.max_segments * self.min_duration + (self.max_segments - 1) * self.max_transition
        if not shortest <= self.min_len <= self.max_len:
            raise DataError(f"min_len {self.min_len} cannot hold {self.max_segments} segments "
                            f"(needs >= {shortest}) or exceeds max_len {self.max_len}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def background_id(self) -> int:
        return len(self.classes)


@dataclass
class ManifestEntry:
    path: str
    split: str
    labeled: bool


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    seed: int
    classes: List[int]
    joints: int
    root: str = "."

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def background_id(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def labeled(self, name: str = "train") -> List[ManifestEntry]:
        return [e for e in self.split(name) if e.labeled]

    def resolve(self, entry: ManifestEntry) -> str:
        return os.path.join(self.root, entry.path)

    def load(self, entry: ManifestEntry) -> AnnotatedSequence:
        return read_sequence(self.resolve(entry))

    def with_label_fraction(self, fraction: float, seed: Optional[int] = None) -> "DatasetManifest":
        """Copy with train label-visibility flags re-drawn for a new fraction."""
        chosen = select_labeled(len(self.split("train")), fraction, self.seed if seed is None else seed)
        entries = []
        train_index = 0
        for e in self.entries:
            labeled = e.labeled
            if e.split == "train":
                labeled = train_index in chosen
                train_index += 1
            entries.append(ManifestEntry(e.path, e.split, labeled))
        return DatasetManifest(entries, self.seed, list(self.classes), self.joints, self.root)

    def verify(self):
        splits: Dict[str, Set[str]] = {s: set() for s in SPLITS}
        for entry in self.entries:
            if entry.split not in splits:
                raise FormatError(f"Unknown split {entry.split!r} for {entry.path}")
            if any(entry.path in paths for paths in splits.values()):
                raise FormatError(f"{entry.path} listed more than once")
            splits[entry.split].add(entry.path)
            full = self.resolve(entry)
            if not os.path.exists(full):
                raise DataError(f"Manifest lists missing file {full}")
            annotated = read_sequence(full)
            if annotated.sequence.joints != self.joints:
                raise DataError(f"{full} has J={annotated.sequence.joints}, manifest says {self.joints}")
            for seg in annotated.segments:
                if seg.label >= self.num_classes:
                    raise DataError(f"{full} has label {seg.label} outside {self.num_classes} classes")
        logger.info(f"Verified manifest: {len(self.entries)} sequences")

    def write(self, path: str):
        lines = [f"# seed={self.seed}",
                 f"# classes={','.join(str(c) for c in self.classes)}",
                 f"# joints={self.joints}"]
        lines += [f"{e.path} {e.split} {int(e.labeled)}" for e in self.entries]
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path: str) -> "DatasetManifest":
        header: Dict[str, str] = {}
        entries = []
        try:
            with open(path, "r") as f:
                text = f.read()
        except IOError as e:
            raise DataError(f"Cannot read manifest {path}: {e}") from e

        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 3 or parts[1] not in SPLITS or parts[2] not in ("0", "1"):
                raise FormatError(f"{path}: manifest line {lineno} must be 'path split labeled(0|1)': {line!r}")
            entries.append(ManifestEntry(parts[0], parts[1], parts[2] == "1"))

        try:
            seed = int(header["seed"])
            classes = [int(c) for c in header["classes"].split(",")]
            joints = int(header["joints"])
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}: incomplete manifest header ({e})") from e
        return cls(entries, seed, classes, joints, root=os.path.dirname(os.path.abspath(path)))


def select_labeled(train_count: int, fraction: float, seed: int) -> Set[int]:
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"label fraction must be in [0, 1], got {fraction}")
    # round first so 0.1 * 200 is 20, not a float hair above it
    count = min(train_count, math.ceil(round(fraction * train_count, 9)))
    rng = np.random.default_rng([seed, 0x1abe1])
    return set(int(i) for i in rng.permutation(train_count)[:count])


def _random_layout(config: GeneratorConfig, rng: np.random.Generator):
    total = int(rng.integers(config.min_len, config.max_len + 1))
    count = int(rng.integers(config.min_segments, config.max_segments + 1))
    transition = int(rng.integers(config.min_transition, config.max_transition + 1))

    labels = []
    for _ in range(count):
        options = [i for i in range(config.num_classes) if not labels or i != labels[-1]]
        labels.append(int(rng.choice(options)))

    spare = total - (count - 1) * transition - count * config.min_duration
    shares = np.floor(rng.dirichlet(np.ones(count)) * spare).astype(int)
    shares[: spare - int(shares.sum())] += 1
    durations = [config.min_duration + int(s) for s in shares]
    return labels, durations, transition


def plan_dataset(config: GeneratorConfig, seed: int) -> List[Dict[str, Any]]:
    rng = np.random.default_rng([seed, 0xda7a])
    plan = []
    counts = {"train": config.train_count, "val": config.val_count, "test": config.test_count}
    for split in SPLITS:
        for _ in range(counts[split]):
            labels, durations, transition = _random_layout(config, rng)
            plan.append({
                "path": f"seq_{len(plan):05d}.bids",
                "split": split,
                "labels": labels,
                "durations": durations,
                "transition": transition,
                "seed": int(rng.integers(2 ** 31 - 1)),
            })
    return plan


def build_dataset(config: GeneratorConfig, seed: int, out_dir: str, workers: int = NUM_WORKERS) -> DatasetManifest:
    """
    Generates every planned sequence into out_dir and writes the manifest.
    Sequences are generated by a small pool of worker threads; each worker
    owns the files it writes.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create dataset directory {out_dir}: {e}")
        raise

    plan = plan_dataset(config, seed)
    train_items = [item for item in plan if item["split"] == "train"]
    chosen = select_labeled(len(train_items), config.label_fraction, seed)
    labeled_paths = {train_items[i]["path"] for i in chosen}

    q: queue.Queue = queue.Queue()
    for item in plan:
        q.put(item)
    errors: List[Exception] = []
    lock = threading.Lock()
    pbar = tqdm(total=len(plan), desc="Generating sequences", unit="seq")

    def worker():
        while True:
            try:
                item = q.get_nowait()
            except queue.Empty:
                return
            try:
                annotated = synthesize_sequence(
                    [config.classes[i] for i in item["labels"]], item["durations"], item["transition"],
                    item["seed"], joints=config.joints, frame_rate=config.frame_rate, labels=item["labels"])
                write_sequence(os.path.join(out_dir, item["path"]), annotated)
            except Exception as e:
                with lock:
                    errors.append(e)
            with lock:
                pbar.update(1)
            q.task_done()

    threads = [threading.Thread(target=worker) for _ in range(max(1, workers))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    pbar.close()
    if errors:
        logger.error(f"Dataset generation failed for {len(errors)} sequences: {errors[0]}")
        raise errors[0]

    entries = [ManifestEntry(item["path"], item["split"], item["path"] in labeled_paths) for item in plan]
    manifest = DatasetManifest(entries, seed, list(config.classes), config.joints, root=os.path.abspath(out_dir))
    manifest.write(os.path.join(out_dir, MANIFEST_NAME))
    logger.info(f"Built dataset in {out_dir}: {len(plan)} sequences, {len(chosen)} labeled train sequences")
    return manifest


def dataset_summary(manifest: DatasetManifest) -> Dict[str, Any]:
    """Split counts, per-label segment histogram and frame totals."""
    histogram = {label: 0 for label in range(manifest.num_classes)}
    counts = {s: len(manifest.split(s)) for s in SPLITS}
    total_frames = 0
    background_frames = 0
    for entry in manifest.entries:
        annotated = manifest.load(entry)
        total_frames += annotated.num_frames
        background_frames += sum(e - b + 1 for b, e in annotated.background_ranges())
        for seg in annotated.segments:
            histogram[seg.label] += 1
    return {
        "counts": counts,
        "labeled_train": len(manifest.labeled("train")),
        "class_histogram": histogram,
        "total_frames": total_frames,
        "background_frames": background_frames,
    }
