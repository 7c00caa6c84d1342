"""The pipeline commands. Each takes a resolved RunConfig and works inside its output directory."""
import os
import csv
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from diffcore.errors import NumericalError, ShapeError
from evaluator.report import EvaluationReport, evaluate_dataset, format_comparison, format_table, write_report
from metrics.collector import Collector
from metrics.visualizer import plot_timeline
from motion.dataset import MANIFEST_NAME, DatasetManifest, build_dataset, dataset_summary
from motion.errors import DataError
from motion.seq_io import read_sequence
from pipeline.run_config import RunConfig, UsageError
from trainer.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from trainer.config import TrainConfig, build_model
from trainer.finetune import finetune
from trainer.inference import class_codes, frame_probabilities, predict_split
from trainer.pretrain import pretrain

logger = logging.getLogger(__name__)

PRETRAIN_CHECKPOINT = os.path.join("checkpoints", "pretrain.bidp")
FINETUNE_CHECKPOINT = os.path.join("checkpoints", "finetune.bidp")

ABLATIONS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "no-rvq": {"quantizer.num_layers": 0},
    "no-mask": {"mask.mask_ratio": 0.0},
    "no-interior": {"loss.use_interior": False},
    "no-boundary": {"loss.lambda_bound": 0.0},
    "shared-codebook": {"quantizer.shared_codebook": True},
}
ABLATION_GROUPS = ("k-sweep", "all")


def _makedirs(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create output directory {path}: {e}")
        raise


def _manifest(run: RunConfig, manifest_path: Optional[str]) -> DatasetManifest:
    path = manifest_path or run.path("data", MANIFEST_NAME)
    manifest = DatasetManifest.read(path)
    manifest.verify()
    return manifest


def _check_joints(run: RunConfig, manifest: DatasetManifest):
    if manifest.joints != run["data.joints"]:
        raise ShapeError(f"Manifest sequences have J={manifest.joints}, config data.joints={run['data.joints']}")


def write_diagnostics(run: RunConfig, error: NumericalError) -> str:
    path = run.path("logs", "diagnostics.yaml")
    _makedirs(os.path.dirname(path))
    with open(path, "w") as f:
        yaml.safe_dump({"error": str(error), "diagnostics": error.diagnostics}, f, default_flow_style=False)
    logger.error(f"Numerical failure; diagnostics written to {path}")
    return path


def cmd_gen_data(run: RunConfig) -> DatasetManifest:
    config = run.generator_config()
    manifest = build_dataset(config, run.seed, run.path("data"), workers=run["data.workers"])
    summary = dataset_summary(manifest)
    print(f"Dataset written to {run.path('data')}")
    print(f"  splits: " + ", ".join(f"{k}={v}" for k, v in summary["counts"].items()))
    print(f"  labeled train sequences: {summary['labeled_train']}")
    print(f"  segments per class: " + ", ".join(f"{k}:{v}" for k, v in summary["class_histogram"].items()))
    print(f"  frames: {summary['total_frames']} ({summary['background_frames']} background)")
    return manifest


def cmd_pretrain(run: RunConfig, manifest_path: Optional[str] = None) -> Checkpoint:
    manifest = _manifest(run, manifest_path)
    _check_joints(run, manifest)
    _makedirs(run.path("checkpoints"))
    collector = Collector(run.path("logs"))
    try:
        ckpt = pretrain(manifest, run.train_config(), collector)
    except NumericalError as e:
        write_diagnostics(run, e)
        raise
    save_checkpoint(run.path(PRETRAIN_CHECKPOINT), ckpt)
    return ckpt


def _check_compatible(cfg: TrainConfig, ckpt: Checkpoint):
    expected = build_model(cfg).expected_shapes()
    encoder = {n: s for n, s in expected.items() if n.startswith(("encoder.", "quantizer."))}
    try:
        ckpt.params.check_shapes(encoder)
    except ShapeError:
        logger.error("Checkpoint architecture does not match the configured model")
        raise


def cmd_finetune(run: RunConfig, checkpoint_path: Optional[str] = None, manifest_path: Optional[str] = None,
                 label_fraction: Optional[float] = None, scratch: bool = False) -> Checkpoint:
    manifest = _manifest(run, manifest_path)
    _check_joints(run, manifest)
    cfg = run.train_config()
    ckpt = None
    if not scratch:
        ckpt = load_checkpoint(checkpoint_path or run.path(PRETRAIN_CHECKPOINT), expected_joints=manifest.joints)
        _check_compatible(cfg, ckpt)
    _makedirs(run.path("checkpoints"))
    try:
        tuned = finetune(ckpt, manifest, cfg, label_fraction=label_fraction, scratch=scratch,
                         collector=Collector(run.path("logs")))
    except NumericalError as e:
        write_diagnostics(run, e)
        raise
    save_checkpoint(run.path(FINETUNE_CHECKPOINT), tuned)
    return tuned


def oracle_probabilities(annotated, num_classes: int) -> np.ndarray:
    """One-hot frame probabilities from the ground truth, background in the last column."""
    labels = annotated.frame_labels(num_classes)
    probs = np.zeros((annotated.num_frames, num_classes + 1))
    probs[np.arange(annotated.num_frames), labels] = 1.0
    return probs


def evaluate_checkpoint(ckpt: Checkpoint, manifest: DatasetManifest, run: RunConfig) -> EvaluationReport:
    sequences, probs, codes = predict_split(ckpt, manifest, "test")
    if not sequences:
        raise DataError("The test split is empty")
    if not probs:
        raise ShapeError("Checkpoint has no classifier head; evaluate a fine-tuned checkpoint")
    return evaluate_dataset(probs, sequences, manifest.num_classes, run.eval_config(), codes=codes,
                            num_codes=ckpt.class_codebook.size)


def cmd_eval(run: RunConfig, checkpoint_path: Optional[str] = None, manifest_path: Optional[str] = None,
             oracle: bool = False) -> EvaluationReport:
    manifest = _manifest(run, manifest_path)
    if oracle:
        sequences = [manifest.load(e) for e in manifest.split("test")]
        if not sequences:
            raise DataError("The test split is empty")
        probs = [oracle_probabilities(a, manifest.num_classes) for a in sequences]
        report = evaluate_dataset(probs, sequences, manifest.num_classes, run.eval_config())
    else:
        ckpt = load_checkpoint(checkpoint_path or run.path(FINETUNE_CHECKPOINT), expected_joints=manifest.joints)
        report = evaluate_checkpoint(ckpt, manifest, run)
    write_report(report, run.path("reports"))
    print(format_table(report), end="")
    return report


def cmd_inspect(run: RunConfig, checkpoint_path: Optional[str], sequence_path: str, plot: bool = False) -> str:
    """Writes timeline/<sequence>.csv (frame, code, predicted, label) and optionally an SVG of the same tracks."""
    path = checkpoint_path or run.path(FINETUNE_CHECKPOINT)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint {path} does not exist")
    annotated = read_sequence(sequence_path)
    ckpt = load_checkpoint(path, expected_joints=annotated.sequence.joints)
    background = ckpt.num_classes if ckpt.has_classifier else len(ckpt.config.get("data.classes", []))
    codes = class_codes(ckpt, annotated)
    labels = annotated.frame_labels(background)
    predicted = np.argmax(frame_probabilities(ckpt, annotated), axis=1) if ckpt.has_classifier else None

    out_dir = run.path("timeline")
    _makedirs(out_dir)
    stem = os.path.splitext(os.path.basename(sequence_path))[0]
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "code", "predicted", "label"])
        for t in range(annotated.num_frames):
            writer.writerow([t + 1, int(codes[t]), "" if predicted is None else int(predicted[t]), int(labels[t])])

    if plot:
        tracks = {"code": codes}
        if predicted is not None:
            tracks["predicted"] = predicted
        tracks["truth"] = labels
        plot_timeline(os.path.join(out_dir, f"{stem}.svg"), tracks,
                      background_ids={"predicted": background, "truth": background}, title=stem)
    logger.info(f"Timeline for {sequence_path} written to {csv_path}")
    return csv_path


def train_and_evaluate(manifest: DatasetManifest, run: RunConfig, log_dir: Optional[str] = None,
                       pretrained: bool = True, label_fraction: Optional[float] = None) -> Dict[str, Any]:
    """Pre-train (unless pretrained=False), fine-tune and evaluate on the test split with one configuration."""
    cfg = run.train_config()
    ckpt = pretrain(manifest, cfg, Collector(log_dir)) if pretrained else None
    tuned = finetune(ckpt, manifest, cfg, label_fraction=label_fraction, scratch=not pretrained,
                     collector=Collector(log_dir))
    return {"pretrain": ckpt, "finetune": tuned, "report": evaluate_checkpoint(tuned, manifest, run)}


def ablation_variants(run: RunConfig, variant: str) -> Dict[str, Dict[str, Any]]:
    if variant in ABLATIONS:
        return {variant: ABLATIONS[variant]}
    if variant == "k-sweep":
        return {f"k={k}": {"quantizer.k_class": int(k)} for k in run["ablate.k_values"]}
    if variant == "all":
        return dict(ABLATIONS)
    raise UsageError(f"Unknown ablation variant {variant!r}; choose from "
                     f"{', '.join(list(ABLATIONS) + list(ABLATION_GROUPS))}")


def cmd_ablate(run: RunConfig, manifest_path: Optional[str] = None, variant: str = "all") -> Dict[str, EvaluationReport]:
    variants = ablation_variants(run, variant)
    manifest = _manifest(run, manifest_path)
    _check_joints(run, manifest)
    reports: Dict[str, EvaluationReport] = {}
    for name, overrides in variants.items():
        logger.info(f"Ablation {name}: {overrides or 'defaults'}")
        variant_run = run.with_overrides(overrides)
        try:
            result = train_and_evaluate(manifest, variant_run, run.path("logs", "ablate", name))
        except NumericalError as e:
            write_diagnostics(run, e)
            raise
        reports[name] = result["report"]

    _makedirs(run.path("reports"))
    table = format_comparison(reports)
    with open(run.path("reports", "ablation.txt"), "w") as f:
        f.write(table)
    print(table, end="")
    return reports
