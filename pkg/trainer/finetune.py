"""Supervised fine-tuning of the encoder with a frame classifier head on the labeled train subset."""
import logging
import math
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from diffcore import ops
from diffcore.errors import NumericalError, ShapeError
from diffcore.graph import constant
from diffcore.optim import adam_step, lr_at
from metrics.collector import Collector
from motion.dataset import DatasetManifest
from motion.errors import DataError
from trainer.batching import SequenceBank
from trainer.checkpoint import Checkpoint
from trainer.config import TrainConfig, build_model

logger = logging.getLogger(__name__)

# decoders are pre-training only; the fine-tuned network keeps these
DOWNSTREAM_PREFIXES = ("encoder.", "quantizer.")
TRAINED_PREFIXES = ("encoder.", "classifier.")


def finetune(checkpoint: Optional[Checkpoint], manifest: DatasetManifest, cfg: TrainConfig,
             label_fraction: Optional[float] = None, scratch: bool = False,
             collector: Optional[Collector] = None) -> Checkpoint:
    """
    Trains encoder and classifier jointly with per-frame cross-entropy
    (background id for unannotated frames). scratch=True starts from a
    freshly initialised encoder instead of the checkpoint's. Codebooks are
    carried over untouched.
    """
    if label_fraction is not None:
        manifest = manifest.with_label_fraction(label_fraction)
    if not manifest.labeled("train"):
        logger.error("Fine-tuning requested but no train sequence is labeled")
        raise DataError("No labeled train sequences to fine-tune on")
    if checkpoint is None and not scratch:
        raise ValueError("finetune needs a checkpoint unless scratch=True")

    if checkpoint is not None and "encoder.in.w" in checkpoint.params:
        joints = checkpoint.params["encoder.in.w"].shape[1]
        if joints != manifest.joints:
            raise ShapeError(f"Checkpoint encoder expects J={joints}, dataset has J={manifest.joints}")

    bank = SequenceBank(manifest, "train", cfg.seq_len, labeled_only=True)
    num_outputs = manifest.num_classes + 1
    if bank.labels.max() >= num_outputs:
        raise ShapeError(f"Label id {bank.labels.max()} out of range for {manifest.num_classes} classes")
    collector = collector or Collector()
    collector.start("finetune")
    val_bank = None
    if cfg.eval_every > 0 and manifest.split("val"):
        val_bank = SequenceBank(manifest, "val", cfg.seq_len)
        collector.start("validation")

    model = build_model(cfg)
    if scratch:
        store = model.init_params(cfg.seed).copy(DOWNSTREAM_PREFIXES)
        class_cb, residual_cb = model.init_codebooks(cfg.seed)
    else:
        store = checkpoint.params.copy(DOWNSTREAM_PREFIXES, reset_state=True)
        class_cb = checkpoint.class_codebook.copy()
        residual_cb = checkpoint.residual_codebook.copy() if checkpoint.residual_codebook is not None else None
    class_cb.trainable = False
    if residual_cb is not None:
        residual_cb.trainable = False
    model.add_classifier(store, num_outputs, cfg.seed)
    names = [n for n in store.names() if n.startswith(TRAINED_PREFIXES)]
    optimizer = cfg.optimizer_for(cfg.finetune_epochs)
    history: List[Dict[str, float]] = []

    logger.info(f"Fine-tuning on {len(bank)} labeled sequences for {cfg.finetune_epochs} epochs "
                f"({'scratch' if scratch else 'pre-trained'} encoder)")
    for epoch in tqdm(range(cfg.finetune_epochs), desc="Fine-tuning", unit="epoch"):
        lr = lr_at(epoch, optimizer)
        loss_sum, frames, correct = 0.0, 0, 0
        batches = 0
        for batch, indices in enumerate(bank.batches(cfg.batch_size, seed=[cfg.seed, epoch, 0xf1])):
            x, valid, labels = bank.inputs[indices], bank.valid[indices], bank.labels[indices]
            leaves = store.leaves(names)
            logits = model.classify(leaves, constant(x))
            loss = ops.cross_entropy(logits, labels, valid)
            value = float(loss.data)
            if not math.isfinite(value):
                logger.error(f"Non-finite fine-tuning loss at epoch {epoch}, batch {batch}")
                raise NumericalError("Fine-tuning diverged (non-finite loss)",
                                     {"epoch": epoch, "batch": batch, "loss": value})
            loss.backward()
            adam_step(store, {n: leaves[n].grad for n in names if leaves[n].grad is not None}, lr, optimizer)

            predicted = np.argmax(logits.data, axis=1)
            correct += int(np.sum((predicted == labels) & valid))
            frames += int(valid.sum())
            loss_sum += value
            batches += 1

        record = {"epoch": epoch, "loss": loss_sum / batches, "accuracy": correct / frames, "lr": lr}
        history.append(record)
        collector.record("finetune", **record)
        if val_bank is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.finetune_epochs):
            accuracy = frame_accuracy(model, store, val_bank, cfg.batch_size)
            logger.info(f"Epoch {epoch}: validation frame accuracy {accuracy:.3f}")
            collector.record("validation", epoch=epoch, accuracy=accuracy)

    logger.info(f"Fine-tuning finished: frame accuracy {history[-1]['accuracy']:.3f}")
    return Checkpoint(store, class_cb, residual_cb, epoch=cfg.finetune_epochs, config=dict(cfg.snapshot),
                      kind="finetune", num_classes=manifest.num_classes,
                      rng_state={"seed": cfg.seed, "epoch": cfg.finetune_epochs, "scratch": scratch},
                      history=history)


def frame_accuracy(model, store, bank: SequenceBank, batch_size: int) -> float:
    """Fraction of valid frames in the bank whose argmax class matches the frame label."""
    p = store.leaves(requires_grad=False)
    correct, frames = 0, 0
    for indices in bank.batches(batch_size):
        logits = model.classify(p, constant(bank.inputs[indices]))
        valid = bank.valid[indices]
        correct += int(np.sum((np.argmax(logits.data, axis=1) == bank.labels[indices]) & valid))
        frames += int(valid.sum())
    return correct / frames if frames else 0.0
