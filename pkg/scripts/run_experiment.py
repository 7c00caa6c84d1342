"""
Desk-scale acceptance experiment:

  1. transfer: pre-train then fine-tune on 10% labels, against the same
     fine-tuning budget from a random encoder, averaged over seeds;
  2. ablation direction: full method against the no-mask, no-interior and
     no-boundary variants;
  3. pre-action purity of the pre-trained class codes against the
     random-code chance baseline, with the stricter shuffled-segment
     baseline reported alongside.

Usage: python3 scripts/run_experiment.py [--out runs/experiment] [--seeds 0 1 2] [--config config.yaml]
"""
import sys
import argparse
import logging
import os

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

import numpy as np
import yaml

from evaluator.purity import merge_purity, preaction_purity, random_code_purity, shuffled_segment_purity
from motion.dataset import build_dataset
from pipeline.commands import ABLATIONS, train_and_evaluate
from pipeline.run_config import load_run_config
from trainer.inference import predict_split

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - [%(name)s] - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

TRANSFER_MARGIN = 5.0      # mAP points, pre-trained over scratch
MIN_MAP_AT_01 = 60.0
ABLATION_SLACK = 1.0
PURITY_MARGIN = 0.15
ABLATED = ("no-mask", "no-interior", "no-boundary")


def pretrained_purity(ckpt, manifest, run):
    sequences, _, codes = predict_split(ckpt, manifest, "test")
    labels = [a.frame_labels(manifest.background_id) for a in sequences]
    stats = merge_purity([preaction_purity(c, l, ckpt.class_codebook.size, manifest.num_classes + 1)
                          for c, l in zip(codes, labels)])
    trials = run["eval.purity_trials"]
    return {
        "pretrained": stats.mean_purity,
        "chance": random_code_purity(labels, ckpt.class_codebook.size, trials, run.seed),
        "shuffled": shuffled_segment_purity(codes, labels, trials, run.seed),
    }


def run_seed(base_run, seed: int) -> dict:
    run = base_run.with_overrides({"seed": seed, "output.dir": os.path.join(base_run.out_dir, f"seed_{seed}")})
    manifest = build_dataset(run.generator_config(), seed, run.path("data"), workers=run["data.workers"])
    logs = run.path("logs")

    result = {}
    full = train_and_evaluate(manifest, run, os.path.join(logs, "full"))
    result["pretrained"] = full["report"].map_row()
    scratch = train_and_evaluate(manifest, run, os.path.join(logs, "scratch"), pretrained=False)
    result["scratch"] = scratch["report"].map_row()
    result["purity"] = pretrained_purity(full["pretrain"], manifest, run)

    for name in ABLATED:
        variant = train_and_evaluate(manifest, run.with_overrides(ABLATIONS[name]), os.path.join(logs, name))
        result[name] = variant["report"].map_row()
    logger.info(f"Seed {seed}: {result}")
    return result


def _mean(rows, column):
    return float(np.mean([0.0 if r[column] is None else r[column] for r in rows]))


def run_experiment(base_run, seeds) -> dict:
    """Runs every seed and returns the averaged summary with its pass/fail checks."""
    results = [run_seed(base_run, seed) for seed in seeds]

    pretrained_avg = _mean([r["pretrained"] for r in results], -1)
    scratch_avg = _mean([r["scratch"] for r in results], -1)
    pretrained_01 = _mean([r["pretrained"] for r in results], 0)
    purity = {key: float(np.mean([r["purity"][key] for r in results])) for key in ("pretrained", "chance", "shuffled")}

    checks = {
        "transfer": bool(pretrained_avg - scratch_avg >= TRANSFER_MARGIN),
        "map_at_0.1": bool(pretrained_01 >= MIN_MAP_AT_01),
        "purity": bool(purity["pretrained"] - purity["chance"] >= PURITY_MARGIN),
    }
    for name in ABLATED:
        checks[f"full_vs_{name}"] = bool(pretrained_avg >= _mean([r[name] for r in results], -1) - ABLATION_SLACK)

    return {
        "seeds": list(seeds),
        "thresholds": {"transfer_margin": TRANSFER_MARGIN, "min_map_at_0.1": MIN_MAP_AT_01,
                       "ablation_slack": ABLATION_SLACK, "purity_margin": PURITY_MARGIN},
        "avg_map": {"pretrained": pretrained_avg, "scratch": scratch_avg,
                    **{name: _mean([r[name] for r in results], -1) for name in ABLATED}},
        "map_at_0.1_pretrained": pretrained_01,
        "purity": purity,
        "checks": checks,
    }


def write_summary(summary: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "experiment.yaml")
    with open(path, "w") as f:
        yaml.safe_dump(summary, f, default_flow_style=False, sort_keys=False)
    return path


def main(argv=None):
    parser = argparse.ArgumentParser(description="Desk-scale transfer, ablation and purity experiment")
    parser.add_argument('--config', type=str, default=None)
    parser.add_argument('--out', type=str, default='runs/experiment')
    parser.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2])
    args = parser.parse_args(argv)

    base_run = load_run_config(args.config, flags={'output.dir': args.out})
    base_run.write_snapshot()
    summary = run_experiment(base_run, args.seeds)
    path = write_summary(summary, args.out)

    for name, passed in summary["checks"].items():
        print(f"{name:24s} {'PASS' if passed else 'FAIL'}")
    print(f"Summary written to {path}")
    return 0 if all(summary["checks"].values()) else 1


if __name__ == "__main__":
    sys.exit(main())
