import unittest
import os
import shutil
import sys
from pathlib import Path

import numpy as np

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from bidnet.losses import total_loss
from diffcore.errors import ShapeError
from metrics.collector import Collector, read_log
from motion.dataset import GeneratorConfig, build_dataset
from motion.errors import DataError
from trainer.batching import SequenceBank
from trainer.checkpoint import load_checkpoint, save_checkpoint
from trainer.config import TrainConfig
from trainer.finetune import finetune
from trainer.inference import class_codes, frame_probabilities, predict_split
from trainer.pretrain import batch_masks, pretrain

MICRO = {
    "seed": 3,
    "data.joints": 6,
    "data.max_len": 80,
    "model.width": 8,
    "model.stages": 1,
    "model.dilations": [2, 1],
    "quantizer.k_class": 8,
    "quantizer.k_residual": 8,
    "quantizer.num_layers": 2,
    "quantizer.code_dim": 4,
    "optimizer.warmup_epochs": 1,
    "optimizer.decay_epochs": [1],
    "train.epochs": 2,
    "train.finetune_epochs": 2,
    "train.batch_size": 4,
}


class TestTrainer(unittest.TestCase):
    """One tiny dataset and one pre-trained checkpoint shared by every test."""

    test_dir = "test_temp_trainer"

    @classmethod
    def setUpClass(cls):
        os.makedirs(cls.test_dir, exist_ok=True)
        generator = GeneratorConfig(classes=[0, 1, 2], train_count=6, val_count=2, test_count=3, joints=6,
                                    min_len=60, max_len=80, min_segments=2, max_segments=3, min_duration=10,
                                    min_transition=2, max_transition=5, label_fraction=0.5)
        cls.manifest = build_dataset(generator, 1, os.path.join(cls.test_dir, "data"), workers=2)
        cls.cfg = TrainConfig.from_values(MICRO)
        cls.pretrained = pretrain(cls.manifest, cls.cfg)

    @classmethod
    def tearDownClass(cls):
        if os.path.exists(cls.test_dir):
            shutil.rmtree(cls.test_dir)

    def test_01_config_from_values(self):
        print("\nTesting config: flat values to typed view...")
        self.assertEqual(self.cfg.seq_len, 80)
        self.assertEqual(self.cfg.encoder.in_channels, 6)
        self.assertEqual(self.cfg.decoder.out_channels, 6)
        self.assertEqual(self.cfg.quantizer.feature_dim, 8)
        self.assertEqual(self.cfg.mask.seed, 3)
        self.assertEqual(self.cfg.snapshot["train.batch_size"], 4)
        self.assertEqual(self.cfg.optimizer_for(1).warmup_epochs, 1)
        with self.assertRaises(ValueError):
            TrainConfig.from_values(dict(MICRO, **{"train.epochs": 0}))

    def test_02_sequence_bank(self):
        print("\nTesting batching: padded bank and batch order...")
        bank = SequenceBank(self.manifest, "train", 80, workers=2)
        self.assertEqual(bank.inputs.shape, (6, 6, 80))
        for i, annotated in enumerate(bank.sequences):
            n = annotated.num_frames
            self.assertEqual(int(bank.valid[i].sum()), n)
            self.assertTrue(np.all(bank.inputs[i, :, n:] == 0))
            self.assertTrue(np.all(bank.labels[i, n:] == self.manifest.background_id))

        batches = list(bank.batches(4, seed=[0, 1]))
        self.assertEqual([len(b) for b in batches], [4, 2])
        self.assertEqual(sorted(np.concatenate(batches)), list(range(6)))
        np.testing.assert_array_equal(np.concatenate(list(bank.batches(4))), np.arange(6))

        labeled = SequenceBank(self.manifest, "train", 80, labeled_only=True)
        self.assertEqual(len(labeled), 3)
        with self.assertRaises(DataError):
            SequenceBank(self.manifest, "train", 50)

    def test_03_masks_follow_sequence_index(self):
        print("\nTesting pretrain: masks independent of batch order...")
        both = batch_masks(self.cfg, 80, 0, np.array([3, 1]))
        alone = batch_masks(self.cfg, 80, 0, np.array([3]))
        np.testing.assert_array_equal(both[0], alone[0])
        self.assertFalse(np.array_equal(batch_masks(self.cfg, 80, 1, np.array([3]))[0], alone[0]))

    def test_04_pretrain_deterministic(self):
        print("\nTesting pretrain: same seed, same parameters...")
        again = pretrain(self.manifest, self.cfg)
        for name in self.pretrained.params.names():
            np.testing.assert_array_equal(again.params[name], self.pretrained.params[name])
        np.testing.assert_array_equal(again.class_codebook.entries, self.pretrained.class_codebook.entries)
        self.assertEqual(again.history, self.pretrained.history)

        first, second = os.path.join(self.test_dir, "first.bidp"), os.path.join(self.test_dir, "second.bidp")
        save_checkpoint(first, self.pretrained)
        save_checkpoint(second, again)
        self.assertEqual(Path(first).read_bytes(), Path(second).read_bytes())

    def test_05_pretrain_history(self):
        print("\nTesting pretrain: logged components rebuild the total...")
        self.assertEqual(len(self.pretrained.history), 2)
        for row in self.pretrained.history:
            rebuilt = total_loss(row["interior"], row["boundary"], row["commitment"], self.cfg.loss)
            self.assertAlmostEqual(row["total"], rebuilt, delta=1e-9)
            self.assertTrue(np.isfinite(row["total"]))
        self.assertEqual(self.pretrained.history[0]["lr"], 0.0)
        self.assertEqual(self.pretrained.kind, "pretrain")
        self.assertFalse(self.pretrained.has_classifier)

    def test_06_pretrain_logs(self):
        print("\nTesting pretrain: collector log files...")
        log_dir = os.path.join(self.test_dir, "logs")
        collector = Collector(log_dir)
        pretrain(self.manifest, self.cfg, collector)
        rows = read_log(os.path.join(log_dir, "pretrain.log"))
        self.assertEqual([r["epoch"] for r in rows], ["0", "1"])
        self.assertEqual(set(rows[0]), {"epoch", "interior", "boundary", "commitment", "total", "lr"})
        codebook = read_log(os.path.join(log_dir, "codebook.log"))
        self.assertEqual(len(codebook), 4)  # class and residual, two epochs
        self.assertEqual(len(collector.get("pretrain")), 2)

    def test_07_checkpoint_round_trip(self):
        print("\nTesting checkpoint: save/load keeps the forward pass bit-exact...")
        path = os.path.join(self.test_dir, "pretrain.bidp")
        save_checkpoint(path, self.pretrained)
        loaded = load_checkpoint(path, expected_joints=6)
        books = (self.pretrained.class_codebook, self.pretrained.residual_codebook)
        payload = 4 * (3 * self.pretrained.params.num_parameters()
                       + sum(a.size for book in books for a in book.to_arrays("c").values()))
        size = os.path.getsize(path)
        self.assertGreater(size, payload)
        self.assertLess(size, payload + 200000)
        self.assertEqual(loaded.epoch, 2)
        self.assertEqual(loaded.history, self.pretrained.history)

        sequence = self.manifest.load(self.manifest.split("test")[0])
        np.testing.assert_array_equal(class_codes(loaded, sequence), class_codes(self.pretrained, sequence))

        model = loaded.model()
        x = np.zeros((1, 6, 80), dtype=np.float32)
        x[0, :, :sequence.num_frames] = sequence.sequence.frames.T
        mask = np.ones((1, 80), dtype=np.float32)
        a = model.pretrain_forward(loaded.params.leaves(requires_grad=False), x, None, mask,
                                   loaded.class_codebook.copy(), loaded.residual_codebook.copy())
        b = model.pretrain_forward(self.pretrained.params.leaves(requires_grad=False), x, None, mask,
                                   self.pretrained.class_codebook.copy(), self.pretrained.residual_codebook.copy())
        self.assertEqual(float(a.total.data), float(b.total.data))

        with self.assertRaises(ShapeError):
            load_checkpoint(path, expected_joints=7)

    def test_08_finetune_keeps_codebooks(self):
        print("\nTesting finetune: frozen codebooks, no decoders...")
        before = self.pretrained.class_codebook.entries.copy()
        tuned = finetune(self.pretrained, self.manifest, self.cfg)
        np.testing.assert_array_equal(tuned.class_codebook.entries, before)
        np.testing.assert_array_equal(tuned.residual_codebook.entries, self.pretrained.residual_codebook.entries)
        np.testing.assert_array_equal(self.pretrained.class_codebook.entries, before)
        self.assertFalse(tuned.class_codebook.trainable)
        self.assertTrue(tuned.has_classifier)
        self.assertEqual(tuned.num_classes, 3)
        self.assertFalse(any(n.startswith(("interior.", "boundary.")) for n in tuned.params.names()))
        self.assertEqual(tuned.params["classifier.out.w"].shape[0], 4)
        self.assertEqual(len(tuned.history), 2)

    def test_09_finetune_errors(self):
        print("\nTesting finetune: missing labels and checkpoints...")
        with self.assertRaises(DataError):
            finetune(self.pretrained, self.manifest, self.cfg, label_fraction=0.0)
        with self.assertRaises(ValueError):
            finetune(None, self.manifest, self.cfg)
        scratch = finetune(None, self.manifest, self.cfg, scratch=True)
        self.assertEqual(scratch.rng_state["scratch"], True)

    def test_10_finetune_validation(self):
        print("\nTesting finetune: periodic validation accuracy...")
        cfg = TrainConfig.from_values(dict(MICRO, **{"train.eval_every": 1}))
        collector = Collector()
        finetune(self.pretrained, self.manifest, cfg, collector=collector)
        rows = collector.get("validation")
        self.assertEqual([r["epoch"] for r in rows], [0, 1])
        self.assertTrue(all(0.0 <= r["accuracy"] <= 1.0 for r in rows))

    def test_11_inference_shapes(self):
        print("\nTesting inference: probabilities and codes per frame...")
        tuned = finetune(self.pretrained, self.manifest, self.cfg, label_fraction=1.0)
        sequence = self.manifest.load(self.manifest.split("test")[0])
        probs = frame_probabilities(tuned, sequence)
        self.assertEqual(probs.shape, (sequence.num_frames, 4))
        self.assertLess(np.max(np.abs(probs.sum(axis=1) - 1.0)), 1e-6)
        codes = class_codes(tuned, sequence)
        self.assertEqual(codes.shape, (sequence.num_frames,))
        self.assertTrue(np.all((codes >= 0) & (codes < 8)))

        sequences, all_probs, all_codes = predict_split(tuned, self.manifest, "test")
        self.assertEqual((len(sequences), len(all_probs), len(all_codes)), (3, 3, 3))
        sequences, all_probs, _ = predict_split(self.pretrained, self.manifest, "test")
        self.assertEqual(all_probs, [])

        with self.assertRaises(ShapeError):
            frame_probabilities(self.pretrained, sequence)
        with self.assertRaises(ShapeError):
            frame_probabilities(tuned, np.zeros((10, 5), dtype=np.float32))

    def test_12_pretrain_loss_decreases(self):
        print("\nTesting pretrain: 20 epochs on 16-frame clips lower the total loss...")
        generator = GeneratorConfig(classes=[0, 1], train_count=4, val_count=0, test_count=1, joints=6,
                                    min_len=16, max_len=16, min_segments=2, max_segments=2, min_duration=5,
                                    min_transition=2, max_transition=3, label_fraction=1.0)
        manifest = build_dataset(generator, 2, os.path.join(self.test_dir, "short"), workers=2)
        cfg = TrainConfig.from_values(dict(MICRO, **{
            "data.max_len": 16, "model.width": 16, "mask.span_len": 4, "train.epochs": 20,
            "train.batch_size": 2, "optimizer.base_lr": 5e-3, "optimizer.decay_epochs": []}))
        history = pretrain(manifest, cfg).history
        self.assertEqual(len(history), 20)
        self.assertLess(history[19]["total"], history[0]["total"])

    def test_13_finetune_beats_chance(self):
        print("\nTesting finetune: 30 epochs on every label beat the chance frame accuracy...")
        cfg = TrainConfig.from_values(dict(MICRO, **{
            "train.finetune_epochs": 30, "optimizer.base_lr": 5e-3, "optimizer.decay_epochs": []}))
        tuned = finetune(self.pretrained, self.manifest, cfg, label_fraction=1.0)
        chance = 1.0 / (self.manifest.num_classes + 1)
        self.assertEqual(len(tuned.history), 30)
        self.assertGreater(tuned.history[-1]["accuracy"], chance)


if __name__ == '__main__':
    unittest.main()
