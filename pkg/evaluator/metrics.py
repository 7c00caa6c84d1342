import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from evaluator.detection import Detection, temporal_iou
from motion.sequence import ActionSegment

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)

GroundTruth = Tuple[int, ActionSegment]  # (sequence id, segment)


def ap_from_pr(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the all-point interpolated precision/recall curve."""
    mprec = np.hstack([[0.0], precision, [0.0]])
    mrec = np.hstack([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def match_detections(detections: List[Detection], ground_truth: List[GroundTruth],
                     iou_threshold: float) -> np.ndarray:
    """
    Greedy matching in descending score order (stable for equal scores):
    each detection takes the unmatched ground truth of its sequence with the
    highest IoU, if that IoU reaches the threshold. Returns the TP flags in
    ranked order.
    """
    ranked = sorted(detections, key=lambda d: -d.score)
    matched = [False] * len(ground_truth)
    tp = np.zeros(len(ranked), dtype=bool)
    for rank, det in enumerate(ranked):
        best, best_iou = -1, -1.0
        for g, (seq, seg) in enumerate(ground_truth):
            if matched[g] or seq != det.sequence_id:
                continue
            iou = temporal_iou(det.segment, seg)
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            matched[best] = True
            tp[rank] = True
    return tp


def average_precision(detections: List[Detection], ground_truth: List[GroundTruth], class_id: int,
                      iou_threshold: float) -> Optional[float]:
    """AP of one class; None when the class has no ground-truth segment."""
    dets = [d for d in detections if d.label == class_id]
    gts = [(s, seg) for s, seg in ground_truth if seg.label == class_id]
    if not gts:
        return None
    if not dets:
        return 0.0
    tp = match_detections(dets, gts, iou_threshold)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / len(gts)
    precision = tp_cum / (tp_cum + fp_cum)
    return ap_from_pr(precision, recall)


def map_report(detections: List[Detection], ground_truth: List[GroundTruth], num_classes: int,
               iou_thresholds: Sequence[float] = IOU_THRESHOLDS) -> Dict:
    """
    Per-class AP at every threshold, mAP per threshold over the classes that
    have ground truth, and the average of those mAPs.
    """
    class_ap: Dict[int, Dict[float, Optional[float]]] = {}
    for c in range(num_classes):
        class_ap[c] = {t: average_precision(detections, ground_truth, c, t) for t in iou_thresholds}

    map_by_threshold: Dict[float, Optional[float]] = {}
    for t in iou_thresholds:
        defined = [class_ap[c][t] for c in range(num_classes) if class_ap[c][t] is not None]
        map_by_threshold[t] = float(np.mean(defined)) if defined else None
    defined_maps = [m for m in map_by_threshold.values() if m is not None]
    average = float(np.mean(defined_maps)) if defined_maps else None
    undefined = [c for c in range(num_classes) if all(v is None for v in class_ap[c].values())]
    if undefined:
        logger.warning(f"Classes {undefined} have no ground truth and are excluded from mAP")
    return {"class_ap": class_ap, "map": map_by_threshold, "average": average}


def confusion_matrix(predicted: np.ndarray, labels: np.ndarray, num_labels: int) -> np.ndarray:
    """Entry (g, p) counts frames with ground truth g predicted as p."""
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.shape != labels.shape:
        raise ValueError(f"Prediction length {predicted.shape} differs from labels {labels.shape}")
    for name, values in (("prediction", predicted), ("label", labels)):
        if values.size and (values.min() < 0 or values.max() >= num_labels):
            raise ValueError(f"{name} ids must lie in [0, {num_labels}), got [{values.min()}, {values.max()}]")
    matrix = np.zeros((num_labels, num_labels), dtype=np.int64)
    np.add.at(matrix, (labels, predicted), 1)
    return matrix
