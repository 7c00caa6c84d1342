import unittest
import contextlib
import csv
import io
import os
import shutil
import sys

import yaml

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from motion.dataset import MANIFEST_NAME, DatasetManifest
from pipeline.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from pipeline.commands import ablation_variants
from pipeline.run_config import SNAPSHOT_NAME, UsageError, load_run_config
from scripts.run_experiment import main as run_experiment_main

MICRO_CONFIG = {
    "data": {"classes": [0, 1, 2], "train_count": 6, "val_count": 0, "test_count": 3, "joints": 6,
             "min_len": 60, "max_len": 80, "min_segments": 2, "max_segments": 3, "min_duration": 10,
             "min_transition": 2, "max_transition": 5, "label_fraction": 0.5, "workers": 2},
    "model": {"width": 8, "stages": 1, "dilations": [2, 1]},
    "quantizer": {"k_class": 8, "k_residual": 8, "num_layers": 2, "code_dim": 4},
    "optimizer": {"warmup_epochs": 1, "decay_epochs": [1]},
    "train": {"epochs": 2, "finetune_epochs": 2, "batch_size": 4},
    "eval": {"purity_trials": 3},
    "ablate": {"k_values": [4, 8]},
}


def run_cli(*argv):
    """Runs the CLI in-process and returns (exit code, captured stdout)."""
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(list(argv))
    return code, out.getvalue()


class TestCLI(unittest.TestCase):

    def setUp(self):
        self.test_dir = "test_temp_cli"
        self.out = os.path.join(self.test_dir, "run")
        os.makedirs(self.test_dir, exist_ok=True)
        self.config_path = os.path.join(self.test_dir, "micro.yaml")
        with open(self.config_path, "w") as f:
            yaml.safe_dump(MICRO_CONFIG, f)

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def cli(self, command, *extra):
        return run_cli(command, "--config", self.config_path, "--out", self.out, *extra)

    def test_01_precedence(self):
        print("\nTesting config: file < environment < --set < flags...")
        self.assertEqual(load_run_config(env={})["quantizer.k_class"], 64)
        self.assertEqual(load_run_config(self.config_path, env={})["quantizer.k_class"], 8)

        env = {"BID_QUANTIZER__K_CLASS": "16"}
        self.assertEqual(load_run_config(self.config_path, env=env)["quantizer.k_class"], 16)
        run = load_run_config(self.config_path, ["quantizer.k_class=32"], env=env)
        self.assertEqual(run["quantizer.k_class"], 32)

        run = load_run_config(self.config_path, ["seed=4"], env={"BID_SEED": "3"}, flags={"seed": 5})
        self.assertEqual(run.seed, 5)
        run = load_run_config(None, ["seed=4"], env={"BID_SEED": "3"}, flags={"seed": None})
        self.assertEqual(run.seed, 4)

    def test_02_bad_keys_and_values(self):
        print("\nTesting config: unknown keys and mistyped values...")
        with self.assertRaises(UsageError):
            load_run_config(env={}, assignments=["quantizer.k_klass=8"])
        with self.assertRaises(UsageError):
            load_run_config(env={}, assignments=["train.epochs=many"])
        with self.assertRaises(UsageError):
            load_run_config(env={}, assignments=["loss.use_interior=1"])
        with self.assertRaises(UsageError):
            load_run_config(env={}, assignments=["seed"])
        self.assertEqual(load_run_config(env={"BID_NOT__A_KEY": "1", "BID_SLOW_TESTS": "1"}).seed, 0)

        code, _ = self.cli("gen-data", "--set", "nope.key=1")
        self.assertEqual(code, EXIT_USAGE)
        self.assertEqual(run_cli("bogus")[0], EXIT_USAGE)
        self.assertEqual(run_cli()[0], EXIT_USAGE)

    def test_03_gen_data_empty_classes(self):
        print("\nTesting gen-data: empty class list...")
        code, _ = self.cli("gen-data", "--set", "data.classes=[]")
        self.assertEqual(code, EXIT_USAGE)
        self.assertFalse(os.path.exists(os.path.join(self.out, "data", MANIFEST_NAME)))

    def test_04_snapshot_repeats_the_run(self):
        print("\nTesting gen-data: configuration snapshot...")
        code, stdout = self.cli("gen-data", "--seed", "7", "--set", "data.train_count=4")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("train=4", stdout)

        snapshot = os.path.join(self.out, SNAPSHOT_NAME)
        with open(snapshot) as f:
            tree = yaml.safe_load(f)
        self.assertEqual(tree["seed"], 7)
        self.assertEqual(tree["data"]["train_count"], 4)
        self.assertEqual(tree["output"]["dir"], self.out)
        self.assertEqual(load_run_config(snapshot, env={}).values,
                         load_run_config(self.config_path, ["data.train_count=4", "seed=7"], env={},
                                         flags={"output.dir": self.out}).values)

    def test_05_oracle_eval(self):
        print("\nTesting eval: ground truth scored as predictions...")
        self.assertEqual(self.cli("gen-data")[0], EXIT_OK)
        code, stdout = self.cli("eval", "--oracle")
        self.assertEqual(code, EXIT_OK)
        lines = stdout.strip().splitlines()
        self.assertEqual(lines[-2], "0.1 0.2 0.3 0.4 0.5 Avg")
        self.assertEqual(lines[-1].split(), ["100.00"] * 6)
        self.assertTrue(os.path.exists(os.path.join(self.out, "reports", "map_table.txt")))

    def test_06_data_errors(self):
        print("\nTesting CLI: data and shape failures exit with 2...")
        self.assertEqual(self.cli("pretrain")[0], EXIT_DATA)  # no manifest yet
        self.assertEqual(self.cli("gen-data")[0], EXIT_OK)
        self.assertEqual(self.cli("finetune")[0], EXIT_DATA)  # no checkpoint yet
        self.assertEqual(self.cli("pretrain", "--set", "data.joints=7")[0], EXIT_DATA)
        self.assertEqual(self.cli("ablate", "--variant", "no-such-variant")[0], EXIT_USAGE)

    def test_07_full_pipeline(self):
        print("\nTesting CLI: gen-data, pretrain, finetune, eval, inspect...")
        self.assertEqual(self.cli("gen-data")[0], EXIT_OK)
        self.assertEqual(self.cli("pretrain", "--epochs", "1")[0], EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(self.out, "checkpoints", "pretrain.bidp")))
        self.assertTrue(os.path.exists(os.path.join(self.out, "logs", "pretrain.log")))

        # a pre-trained checkpoint has no head to evaluate
        pretrained = os.path.join(self.out, "checkpoints", "pretrain.bidp")
        self.assertEqual(self.cli("eval", "--checkpoint", pretrained)[0], EXIT_DATA)
        self.assertEqual(self.cli("finetune", "--label-fraction", "0")[0], EXIT_DATA)

        self.assertEqual(self.cli("finetune", "--label-fraction", "1.0")[0], EXIT_OK)
        code, stdout = self.cli("eval")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("0.1 0.2 0.3 0.4 0.5 Avg", stdout)
        for name in ("map_table.txt", "class_ap.csv", "confusion.csv", "purity.csv", "cooccurrence.csv"):
            self.assertTrue(os.path.exists(os.path.join(self.out, "reports", name)), name)

        manifest = DatasetManifest.read(os.path.join(self.out, "data", MANIFEST_NAME))
        entry = manifest.split("test")[0]
        self.assertEqual(self.cli("inspect", manifest.resolve(entry), "--plot")[0], EXIT_OK)
        stem = os.path.splitext(os.path.basename(entry.path))[0]
        with open(os.path.join(self.out, "timeline", f"{stem}.csv"), newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["frame", "code", "predicted", "label"])
        self.assertEqual(len(rows) - 1, manifest.load(entry).num_frames)
        self.assertEqual(rows[1][0], "1")
        self.assertTrue(os.path.exists(os.path.join(self.out, "timeline", f"{stem}.svg")))

        missing = os.path.join(self.test_dir, "missing.bidp")
        self.assertEqual(self.cli("inspect", manifest.resolve(entry), "--checkpoint", missing)[0], EXIT_DATA)

    def test_08_ablation_variants(self):
        print("\nTesting ablate: variant selection...")
        run = load_run_config(self.config_path, env={})
        self.assertEqual(ablation_variants(run, "no-mask"), {"no-mask": {"mask.mask_ratio": 0.0}})
        self.assertEqual(list(ablation_variants(run, "k-sweep")), ["k=4", "k=8"])
        self.assertEqual(len(ablation_variants(run, "all")), 6)
        with self.assertRaises(UsageError):
            ablation_variants(run, "no-such-variant")

    @unittest.skipUnless(os.environ.get("BID_SLOW_TESTS") == "1", "set BID_SLOW_TESTS=1 to run")
    def test_09_ablate_all_variants(self):
        print("\nTesting ablate: every variant end to end (slow)...")
        self.assertEqual(self.cli("gen-data")[0], EXIT_OK)
        code, stdout = self.cli("ablate", "--variant", "all", "--epochs", "1")
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(self.out, "reports", "ablation.txt")) as f:
            table = f.read()
        for name in ("full", "no-rvq", "no-mask", "no-interior", "no-boundary", "shared-codebook"):
            self.assertIn(name, table)
        self.assertEqual(table, stdout)


    @unittest.skipUnless(os.environ.get("BID_SLOW_TESTS") == "1", "set BID_SLOW_TESTS=1 to run")
    def test_10_acceptance_experiment(self):
        print("\nTesting acceptance experiment: one seed on the micro config (slow)...")
        with contextlib.redirect_stdout(io.StringIO()):
            code = run_experiment_main(["--config", self.config_path, "--out", self.out, "--seeds", "0"])
        self.assertIn(code, (0, 1))
        with open(os.path.join(self.out, "experiment.yaml")) as f:
            summary = yaml.safe_load(f)

        self.assertEqual(summary["seeds"], [0])
        self.assertEqual(set(summary["avg_map"]), {"pretrained", "scratch", "no-mask", "no-interior", "no-boundary"})
        self.assertEqual(set(summary["purity"]), {"pretrained", "chance", "shuffled"})
        self.assertTrue(0.0 <= summary["purity"]["chance"] <= 1.0)
        self.assertEqual(summary["thresholds"]["purity_margin"], 0.15)
        self.assertEqual(set(summary["checks"]), {"transfer", "map_at_0.1", "purity", "full_vs_no-mask",
                                                  "full_vs_no-interior", "full_vs_no-boundary"})
        self.assertTrue(all(isinstance(v, bool) for v in summary["checks"].values()))
        self.assertEqual(code, 0 if all(summary["checks"].values()) else 1)


if __name__ == '__main__':
    unittest.main()
