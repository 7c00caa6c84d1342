import unittest
import csv
import os
import shutil
import sys

import numpy as np

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from evaluator.detection import Detection, predictions_to_segments, temporal_iou
from evaluator.metrics import average_precision, confusion_matrix, map_report, match_detections
from evaluator.purity import (label_frequency_purity, merge_purity, preaction_purity, random_code_purity,
                              shuffled_segment_purity)
from evaluator.report import (EvalConfig, TABLE_HEADER, evaluate_dataset, format_comparison, format_table,
                              write_report)
from motion.sequence import ActionSegment, AnnotatedSequence, MotionSequence


def confident_probs(labels: np.ndarray, num_outputs: int, peak: float = 0.91) -> np.ndarray:
    """Rows with `peak` on the labelled column and the rest spread evenly."""
    probs = np.full((labels.size, num_outputs), (1.0 - peak) / (num_outputs - 1))
    probs[np.arange(labels.size), labels] = peak
    return probs


def tp_by_detection(detections, ground_truth, iou_threshold: float) -> np.ndarray:
    """TP flags indexed like `detections` rather than by rank."""
    tp = match_detections(detections, ground_truth, iou_threshold)
    ranked = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    flags = np.zeros(len(detections), dtype=bool)
    flags[ranked] = tp
    return flags


def prefix_oracle_ap(tp: np.ndarray, num_gt: int) -> float:
    """Sum over true positives of the best precision at that rank or later, divided by the ground truth count."""
    precision = np.cumsum(tp) / np.arange(1, len(tp) + 1)
    return sum(precision[k:].max() for k in range(len(tp)) if tp[k]) / num_gt


class TestEvaluator(unittest.TestCase):

    def setUp(self):
        self.test_dir = "test_temp_evaluator"
        os.makedirs(self.test_dir, exist_ok=True)
        self.rng = np.random.default_rng(17)

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def _random_segment(self) -> ActionSegment:
        begin = int(self.rng.integers(1, 50))
        return ActionSegment(begin, begin + int(self.rng.integers(0, 20)), 0)

    def test_01_temporal_iou(self):
        print("\nTesting detection: temporal IoU...")
        self.assertAlmostEqual(temporal_iou(ActionSegment(1, 10, 0), ActionSegment(6, 15, 0)), 1 / 3, places=12)
        self.assertEqual(temporal_iou(ActionSegment(1, 5, 0), ActionSegment(6, 9, 0)), 0.0)
        self.assertEqual(temporal_iou(ActionSegment(3, 7, 0), ActionSegment(3, 7, 1)), 1.0)

    def test_02_predictions_to_segments(self):
        print("\nTesting detection: runs above each threshold...")
        probs = np.array([[0.8, 0.1, 0.1], [0.7, 0.2, 0.1], [0.2, 0.2, 0.6], [0.6, 0.3, 0.1]])
        found = predictions_to_segments(probs, [0.5, 0.75], sequence_id=4)
        self.assertEqual([d.segment for d in found],
                         [ActionSegment(1, 1, 0), ActionSegment(1, 2, 0), ActionSegment(4, 4, 0)])
        self.assertEqual([round(d.score, 9) for d in found], [0.8, 0.75, 0.6])
        self.assertTrue(all(d.sequence_id == 4 for d in found))

        pattern = np.array([0.9, 0.9, 0.1, 0.9])
        found = predictions_to_segments(np.stack([pattern, 1.0 - pattern], axis=1), [0.5])
        self.assertEqual([d.segment for d in found], [ActionSegment(1, 2, 0), ActionSegment(4, 4, 0)])
        one_hot = np.tile([0.0, 1.0, 0.0], (7, 1))
        found = predictions_to_segments(one_hot, [0.3, 0.6])
        self.assertEqual([(d.segment, d.score) for d in found], [(ActionSegment(1, 7, 1), 1.0)])
        self.assertEqual(predictions_to_segments(np.tile([0.0, 0.0, 1.0], (7, 1)), [0.5]), [])

        with self.assertRaises(ValueError):
            predictions_to_segments(np.array([[0.5, 0.6]]), [0.5])
        with self.assertRaises(ValueError):
            predictions_to_segments(probs, [1.0])
        with self.assertRaises(ValueError):
            predictions_to_segments(probs, [])

    def test_03_average_precision_by_hand(self):
        print("\nTesting metrics: AP on hand-made rankings...")
        gt = [(0, ActionSegment(1, 10, 0))]
        duplicate = [Detection(ActionSegment(1, 10, 0), 0.9), Detection(ActionSegment(1, 10, 0), 0.8)]
        self.assertEqual(average_precision(duplicate, gt, 0, 0.5), 1.0)

        two_gt = gt + [(0, ActionSegment(30, 40, 0))]
        ranked = [Detection(ActionSegment(60, 70, 0), 0.9), Detection(ActionSegment(2, 10, 0), 0.8)]
        self.assertAlmostEqual(average_precision(ranked, two_gt, 0, 0.5), 0.25, places=12)

        # one true positive at rank 1 out of three detections, two ground truth segments
        three = ranked[1:] + [Detection(ActionSegment(60, 70, 0), 0.5), Detection(ActionSegment(80, 90, 0), 0.4)]
        self.assertAlmostEqual(average_precision(three, two_gt, 0, 0.5), 0.5, places=12)

        other_sequence = [Detection(ActionSegment(1, 10, 0), 0.9, sequence_id=1)]
        self.assertEqual(average_precision(other_sequence, gt, 0, 0.1), 0.0)
        self.assertIsNone(average_precision(duplicate, gt, 1, 0.5))
        self.assertEqual(average_precision([], gt, 0, 0.5), 0.0)

    def test_04_average_precision_matches_oracle(self):
        print("\nTesting metrics: AP against a prefix-precision oracle...")
        for _ in range(500):
            gts = []
            for _ in range(int(self.rng.integers(1, 4))):
                begin = int(self.rng.integers(1, 50))
                gts.append((int(self.rng.integers(0, 2)), ActionSegment(begin, begin + int(self.rng.integers(0, 20)), 0)))
            dets = []
            for _ in range(int(self.rng.integers(1, 6))):
                begin = int(self.rng.integers(1, 50))
                dets.append(Detection(ActionSegment(begin, begin + int(self.rng.integers(0, 20)), 0),
                                      float(self.rng.random()), int(self.rng.integers(0, 2))))
            threshold = float(self.rng.choice([0.1, 0.3, 0.5]))
            tp = match_detections(dets, gts, threshold)
            self.assertAlmostEqual(average_precision(dets, gts, 0, threshold), prefix_oracle_ap(tp, len(gts)),
                                   places=12)

    def test_05_raising_a_true_positive_never_lowers_ap(self):
        print("\nTesting metrics: a higher-scored true positive keeps or raises AP...")
        checked = 0
        for _ in range(2000):
            gts = [(0, self._random_segment()) for _ in range(int(self.rng.integers(1, 4)))]
            dets = [Detection(self._random_segment(), float(self.rng.random()))
                    for _ in range(int(self.rng.integers(1, 6)))]
            threshold = float(self.rng.choice([0.1, 0.3, 0.5]))
            before = tp_by_detection(dets, gts, threshold)
            if not before.any():
                continue
            i = int(self.rng.choice(np.flatnonzero(before)))
            raised = list(dets)
            raised[i] = Detection(dets[i].segment, dets[i].score + float(self.rng.random()))
            # only rankings where the same detections stay true positives
            if not np.array_equal(tp_by_detection(raised, gts, threshold), before):
                continue
            self.assertGreaterEqual(average_precision(raised, gts, 0, threshold),
                                    average_precision(dets, gts, 0, threshold) - 1e-12)
            checked += 1
        self.assertGreater(checked, 200)

    def test_06_map_report(self):
        print("\nTesting metrics: mAP excludes classes without ground truth...")
        gt = [(0, ActionSegment(1, 10, 0)), (0, ActionSegment(20, 30, 1))]
        dets = [Detection(ActionSegment(1, 10, 0), 0.9)]
        result = map_report(dets, gt, 3, [0.1, 0.5])
        self.assertEqual(result["class_ap"][0][0.5], 1.0)
        self.assertEqual(result["class_ap"][1][0.5], 0.0)
        self.assertIsNone(result["class_ap"][2][0.5])
        self.assertEqual(result["map"][0.5], 0.5)
        self.assertEqual(result["average"], 0.5)
        self.assertIsNone(map_report([], [], 2, [0.5])["average"])

    def test_07_confusion_matrix(self):
        print("\nTesting metrics: frame confusion matrix...")
        matrix = confusion_matrix(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]), 3)
        np.testing.assert_array_equal(matrix, [[1, 0, 0], [0, 1, 0], [0, 1, 1]])
        with self.assertRaises(ValueError):
            confusion_matrix(np.array([0, 3]), np.array([0, 1]), 3)
        with self.assertRaises(ValueError):
            confusion_matrix(np.array([0]), np.array([0, 1]), 3)

    def test_08_preaction_purity(self):
        print("\nTesting purity: majority agreement of code runs...")
        stats = preaction_purity(np.array([0, 0, 0, 1, 1, 2]), np.array([0, 0, 1, 1, 1, 1]))
        self.assertEqual([s[:4] for s in stats.segments], [(1, 3, 0, 0), (4, 5, 1, 1), (6, 6, 2, 1)])
        np.testing.assert_allclose(stats.segment_purity, [2 / 3, 1.0, 1.0])
        self.assertAlmostEqual(stats.mean_purity, 5 / 6, places=12)
        np.testing.assert_array_equal(stats.cooccurrence, [[2, 1], [0, 2], [0, 1]])

        # ties go to the lower label
        tie = preaction_purity(np.array([4, 4]), np.array([1, 0]), 5, 2)
        self.assertEqual(tie.segments[0][3], 0)

        merged = merge_purity([stats, preaction_purity(np.array([1, 1]), np.array([0, 0]), 3, 2)])
        self.assertAlmostEqual(merged.mean_purity, 7 / 8, places=12)
        self.assertEqual(int(merged.cooccurrence[1, 0]), 2)
        with self.assertRaises(ValueError):
            preaction_purity(np.array([0, 1]), np.array([0]))

    def test_09_shuffled_segment_purity(self):
        print("\nTesting purity: shuffled-segment baseline...")
        labels = [np.array([0] * 7 + [1] * 3)]
        self.assertAlmostEqual(shuffled_segment_purity([np.zeros(10, dtype=np.int64)], labels, trials=5), 0.7, places=12)
        self.assertEqual(shuffled_segment_purity([np.arange(10)], labels, trials=5), 1.0)

        codes = [np.array([0] * 4 + [1] * 3 + [2] * 3)]
        a = shuffled_segment_purity(codes, labels, trials=20, seed=3)
        self.assertEqual(a, shuffled_segment_purity(codes, labels, trials=20, seed=3))
        self.assertTrue(0.7 <= a <= 1.0)
        with self.assertRaises(ValueError):
            shuffled_segment_purity(codes, labels, trials=0)

    def test_10_random_code_baseline(self):
        print("\nTesting purity: random codes settle at the label-frequency baseline...")
        labels = [np.array([0] * 200 + [2] * 100 + [1] * 100) for _ in range(4)]
        self.assertEqual(label_frequency_purity(labels), 0.5)
        self.assertEqual(random_code_purity(labels, 1, trials=3), 0.5)

        baseline = random_code_purity(labels, 8, trials=100, seed=5)
        self.assertAlmostEqual(baseline, label_frequency_purity(labels), delta=0.05)
        self.assertEqual(baseline, random_code_purity(labels, 8, trials=100, seed=5))
        with self.assertRaises(ValueError):
            random_code_purity(labels, 8, trials=0)
        with self.assertRaises(ValueError):
            random_code_purity(labels, 0)

        stats = preaction_purity(np.array([0, 0, 0, 1, 1, 2]), np.array([0, 0, 1, 1, 1, 1]))
        self.assertAlmostEqual(stats.code_purity, 5 / 6, places=12)

    def test_11_perfect_predictions_score_100(self):
        print("\nTesting report: perfect predictions give 100 mAP...")
        sequences, probs = [], []
        for segments in ([ActionSegment(1, 20, 0), ActionSegment(31, 50, 1)], [ActionSegment(5, 40, 2)]):
            annotated = AnnotatedSequence(MotionSequence(np.zeros((50, 3), dtype=np.float32)), segments)
            sequences.append(annotated)
            probs.append(confident_probs(annotated.frame_labels(3), 4))
        report = evaluate_dataset(probs, sequences, 3, EvalConfig())
        self.assertEqual(report.map_row(), [100.0] * 6)
        self.assertEqual(int(np.trace(report.confusion)), 100)
        self.assertEqual(format_table(report), TABLE_HEADER + "\n" + " ".join(["100.00"] * 6) + "\n")

        with self.assertRaises(ValueError):
            evaluate_dataset(probs[:1], sequences, 3)

    def test_12_report_files(self):
        print("\nTesting report: delimited output files...")
        annotated = AnnotatedSequence(MotionSequence(np.zeros((30, 2), dtype=np.float32)),
                                      [ActionSegment(1, 10, 0), ActionSegment(16, 30, 1)])
        labels = annotated.frame_labels(2)
        codes = [np.array([0] * 10 + [1] * 5 + [2] * 15)]
        report = evaluate_dataset([confident_probs(labels, 3)], [annotated], 2,
                                  EvalConfig(purity_trials=3), codes=codes, num_codes=4)
        self.assertEqual(report.purity.mean_purity, 1.0)
        self.assertEqual(report.purity.cooccurrence.shape, (4, 3))
        self.assertEqual(report.purity.code_purity, 1.0)
        self.assertTrue(0.5 <= report.chance_purity <= 1.0)
        self.assertTrue(0.5 <= report.shuffled_purity <= 1.0)

        paths = write_report(report, os.path.join(self.test_dir, "report"))
        self.assertEqual(set(paths), {"table", "class_ap", "confusion", "purity", "cooccurrence"})
        with open(paths["table"]) as f:
            self.assertEqual(f.readline().strip(), "0.1 0.2 0.3 0.4 0.5 Avg")
        with open(paths["class_ap"]) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "class,threshold,ap")
        self.assertEqual(len(lines), 1 + 2 * 5)
        with open(paths["confusion"]) as f:
            self.assertEqual(f.readline().strip(), "truth,pred_0,pred_1,pred_2")
        with open(paths["purity"], newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual([r[0] for r in rows[-4:]], ["mean_purity", "code_purity", "chance_purity", "shuffled_purity"])

        table = format_comparison({"full": report, "no-mask": report})
        lines = table.splitlines()
        self.assertEqual(lines[0].split(), TABLE_HEADER.split())
        self.assertTrue(lines[2].startswith("no-mask "))


if __name__ == '__main__':
    unittest.main()
