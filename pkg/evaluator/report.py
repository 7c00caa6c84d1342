import os
import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from evaluator.detection import Detection, predictions_to_segments
from evaluator.metrics import GroundTruth, IOU_THRESHOLDS, confusion_matrix, map_report
from evaluator.purity import (PurityStats, merge_purity, preaction_purity, random_code_purity,
                              shuffled_segment_purity)
from motion.sequence import AnnotatedSequence

logger = logging.getLogger(__name__)

TABLE_HEADER = "0.1 0.2 0.3 0.4 0.5 Avg"


@dataclass
class EvalConfig:
    iou_thresholds: List[float] = field(default_factory=lambda: list(IOU_THRESHOLDS))
    score_thresholds: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])
    purity_trials: int = 100
    seed: int = 0


@dataclass
class EvaluationReport:
    thresholds: List[float]
    class_ap: Dict[int, Dict[float, Optional[float]]]
    map_by_threshold: Dict[float, Optional[float]]
    average: Optional[float]
    confusion: np.ndarray
    purity: Optional[PurityStats] = None
    chance_purity: Optional[float] = None
    shuffled_purity: Optional[float] = None
    detections: List[Detection] = field(default_factory=list)

    def map_row(self) -> List[Optional[float]]:
        """mAP at each threshold then the average, in percent."""
        cells = [self.map_by_threshold[t] for t in self.thresholds] + [self.average]
        return [None if v is None else 100.0 * v for v in cells]


def _cell(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def table_header(thresholds: Sequence[float]) -> str:
    return " ".join(f"{t:g}" for t in thresholds) + " Avg"


def format_table(report: EvaluationReport) -> str:
    """Detection mAP (%) at each IoU threshold plus the average, one header line and one value line."""
    return table_header(report.thresholds) + "\n" + " ".join(_cell(v) for v in report.map_row()) + "\n"


def format_comparison(rows: Dict[str, EvaluationReport]) -> str:
    """One labelled mAP row per run, under the same column layout as format_table."""
    thresholds = next(iter(rows.values())).thresholds
    width = max(len(name) for name in rows)
    lines = [" " * width + " " + table_header(thresholds)]
    for name, report in rows.items():
        lines.append(name.ljust(width) + " " + " ".join(_cell(v) for v in report.map_row()))
    return "\n".join(lines) + "\n"


def evaluate_dataset(probs: List[np.ndarray], sequences: List[AnnotatedSequence], num_classes: int,
                     cfg: Optional[EvalConfig] = None, codes: Optional[List[np.ndarray]] = None,
                     num_codes: Optional[int] = None) -> EvaluationReport:
    """
    Detections, mAP table and frame confusion matrix for a list of
    sequences with their T x (C+1) frame probabilities; with class codes,
    pre-action purity with its random-code chance baseline and the
    shuffled-segment baseline as well.
    """
    cfg = cfg or EvalConfig()
    if len(probs) != len(sequences):
        raise ValueError(f"{len(probs)} predictions for {len(sequences)} sequences")
    background = num_classes
    detections: List[Detection] = []
    ground_truth: List[GroundTruth] = []
    confusion = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    labels_per_seq = []

    for i, (p, annotated) in enumerate(zip(probs, sequences)):
        if p.shape != (annotated.num_frames, num_classes + 1):
            raise ValueError(f"Sequence {i}: predictions {p.shape}, expected ({annotated.num_frames}, {num_classes + 1})")
        detections.extend(predictions_to_segments(p, cfg.score_thresholds, sequence_id=i, background_id=background))
        ground_truth.extend((i, seg) for seg in annotated.segments)
        labels = annotated.frame_labels(background)
        labels_per_seq.append(labels)
        confusion += confusion_matrix(np.argmax(p, axis=1), labels, num_classes + 1)

    result = map_report(detections, ground_truth, num_classes, cfg.iou_thresholds)
    report = EvaluationReport(list(cfg.iou_thresholds), result["class_ap"], result["map"], result["average"],
                              confusion, detections=detections)

    if codes is not None:
        num_codes = num_codes or int(max(int(c.max()) for c in codes)) + 1
        report.purity = merge_purity([preaction_purity(c, l, num_codes, num_classes + 1)
                                      for c, l in zip(codes, labels_per_seq)])
        report.chance_purity = random_code_purity(labels_per_seq, num_codes, cfg.purity_trials, cfg.seed)
        report.shuffled_purity = shuffled_segment_purity(codes, labels_per_seq, cfg.purity_trials, cfg.seed)
    logger.info(f"Evaluated {len(sequences)} sequences: {len(detections)} detections, "
                f"average mAP {_cell(report.map_row()[-1])}")
    return report


def write_report(report: EvaluationReport, out_dir: str) -> Dict[str, str]:
    """Writes the mAP table and the delimited per-class AP, confusion and purity files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "table": os.path.join(out_dir, "map_table.txt"),
        "class_ap": os.path.join(out_dir, "class_ap.csv"),
        "confusion": os.path.join(out_dir, "confusion.csv"),
    }
    with open(paths["table"], "w") as f:
        f.write(format_table(report))
    with open(paths["class_ap"], "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "threshold", "ap"])
        for c in sorted(report.class_ap):
            for t in report.thresholds:
                ap = report.class_ap[c][t]
                writer.writerow([c, t, "" if ap is None else repr(ap)])
    with open(paths["confusion"], "w", newline="") as f:
        writer = csv.writer(f)
        size = report.confusion.shape[0]
        writer.writerow(["truth"] + [f"pred_{p}" for p in range(size)])
        for g in range(size):
            writer.writerow([g] + [int(v) for v in report.confusion[g]])

    if report.purity is not None:
        paths["purity"] = os.path.join(out_dir, "purity.csv")
        paths["cooccurrence"] = os.path.join(out_dir, "cooccurrence.csv")
        with open(paths["purity"], "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["begin", "end", "code", "majority_label", "purity"])
            writer.writerows(report.purity.segments)
            writer.writerow([])
            writer.writerow(["mean_purity", repr(report.purity.mean_purity)])
            writer.writerow(["code_purity", repr(report.purity.code_purity)])
            writer.writerow(["chance_purity", repr(report.chance_purity)])
            writer.writerow(["shuffled_purity", repr(report.shuffled_purity)])
        with open(paths["cooccurrence"], "w", newline="") as f:
            writer = csv.writer(f)
            labels = report.purity.cooccurrence.shape[1]
            writer.writerow(["code"] + [f"label_{l}" for l in range(labels)])
            for code, row in enumerate(report.purity.cooccurrence):
                writer.writerow([code] + [int(v) for v in row])
    logger.info(f"Wrote evaluation report to {out_dir}")
    return paths
