"""Unsupervised pre-training loop."""
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from bidnet.losses import total_loss
from bidnet.masking import make_mask
from diffcore.errors import NumericalError
from diffcore.optim import adam_step, lr_at
from metrics.collector import Collector
from motion.dataset import DatasetManifest
from motion.errors import DataError
from quantizer.codebook import reinit_dead_codes, stats_from_counts
from trainer.batching import SequenceBank
from trainer.checkpoint import Checkpoint
from trainer.config import TrainConfig, build_model

logger = logging.getLogger(__name__)


def batch_masks(cfg: TrainConfig, length: int, epoch: int, indices: np.ndarray) -> np.ndarray:
    """One mask per sequence, seeded by (seed, epoch, sequence index) so batch order does not matter."""
    return np.stack([make_mask(length, cfg.mask, seed=[cfg.mask.seed, epoch, int(i)]) for i in indices])


def _diagnostics(epoch: int, batch: int, components: Dict[str, float], class_cb, residual_cb) -> Dict[str, Any]:
    usage = {"class": stats_from_counts(class_cb.usage)}
    if residual_cb is not None:
        usage["residual"] = stats_from_counts(residual_cb.usage)
    return {
        "epoch": epoch,
        "batch": batch,
        "losses": {k: float(v) for k, v in components.items()},
        "code_usage": {name: {"perplexity": s["perplexity"], "used": s["used"], "dead": len(s["dead_codes"])}
                       for name, s in usage.items()},
    }


def pretrain(manifest: DatasetManifest, cfg: TrainConfig, collector: Optional[Collector] = None) -> Checkpoint:
    """
    Runs the pre-training objective over the train split for cfg.epochs
    epochs. Per batch: forward with fresh code assignments, Adam on every
    network parameter, then an EMA step on the codebooks. At the end of an
    epoch codes unused during that epoch are re-seeded from the last batch.
    """
    bank = SequenceBank(manifest, "train", cfg.seq_len)
    if len(bank) == 0:
        raise DataError("Pre-training needs at least one train sequence")
    if bank.joints != cfg.encoder.in_channels:
        raise DataError(f"Dataset has J={bank.joints}, config says {cfg.encoder.in_channels}")
    collector = collector or Collector()
    collector.start("pretrain")
    collector.start("codebook")

    model = build_model(cfg)
    store = model.init_params(cfg.seed)
    class_cb, residual_cb = model.init_codebooks(cfg.seed)
    residual_in_use = model.residual_codebook(class_cb, residual_cb)
    names = store.names()
    optimizer = cfg.optimizer_for(cfg.epochs)
    history: List[Dict[str, float]] = []

    logger.info(f"Pre-training {store.num_parameters()} parameters on {len(bank)} sequences "
                f"for {cfg.epochs} epochs")
    for epoch in tqdm(range(cfg.epochs), desc="Pre-training", unit="epoch"):
        lr = lr_at(epoch, optimizer)
        sums = {"interior": 0.0, "boundary": 0.0, "commitment": 0.0}
        batches = 0
        last = None
        for batch, indices in enumerate(bank.batches(cfg.batch_size, seed=[cfg.seed, epoch])):
            x, valid = bank.inputs[indices], bank.valid[indices]
            if epoch == 0 and batch == 0:
                model.init_codebooks_from_data(store.leaves(requires_grad=False), x, valid, class_cb,
                                               residual_cb, cfg.seed)
            masks = batch_masks(cfg, bank.seq_len, epoch, indices)

            leaves = store.leaves(names)
            out = model.pretrain_forward(leaves, x, valid, masks, class_cb, residual_cb)
            components = out.components()
            if not all(math.isfinite(v) for v in components.values()):
                logger.error(f"Non-finite loss at epoch {epoch}, batch {batch}: {components}")
                raise NumericalError("Pre-training diverged (non-finite loss)",
                                     _diagnostics(epoch, batch, components, class_cb, residual_in_use))
            out.total.backward()
            grads = {n: leaves[n].grad for n in names if leaves[n].grad is not None}
            try:
                adam_step(store, grads, lr, optimizer)
            except NumericalError as e:
                e.diagnostics.update(_diagnostics(epoch, batch, components, class_cb, residual_in_use))
                raise
            model.update_codebooks(out, valid, class_cb, residual_cb)

            for key in sums:
                sums[key] += components[key]
            batches += 1
            last = (out, valid)

        means = {k: v / batches for k, v in sums.items()}
        means["total"] = total_loss(means["interior"], means["boundary"], means["commitment"], cfg.loss)
        history.append(dict(means, epoch=epoch, lr=lr))
        collector.record("pretrain", epoch=epoch, lr=lr, **means)
        _end_of_epoch(model, cfg, epoch, class_cb, residual_cb, last, collector)
        logger.debug(f"epoch {epoch}: total {means['total']:.5f} (lr {lr:.2e})")

    logger.info(f"Pre-training finished: final total loss {history[-1]['total']:.5f}")
    return Checkpoint(store, class_cb, residual_cb, epoch=cfg.epochs, config=dict(cfg.snapshot),
                      kind="pretrain", rng_state={"seed": cfg.seed, "epoch": cfg.epochs}, history=history)


def _end_of_epoch(model, cfg: TrainConfig, epoch: int, class_cb, residual_cb, last, collector: Collector):
    """Logs code usage for the epoch and re-seeds dead codes before the next one."""
    out, valid = last
    keep = valid.reshape(-1)
    books = [("class", class_cb, out.frames[keep])]
    if residual_cb is not None and model.quantizer.num_layers > 0:
        books.append(("residual", residual_cb, out.bundle.layer_inputs[0][keep]))

    for i, (name, codebook, candidates) in enumerate(books):
        stats = stats_from_counts(codebook.usage, cfg.quantizer.dead_code_threshold)
        collector.record("codebook", epoch=epoch, codebook=name, perplexity=stats["perplexity"],
                         dead=len(stats["dead_codes"]), used=stats["used"])
        if cfg.quantizer.reinit_dead_codes and epoch < cfg.epochs - 1 and stats["dead_codes"]:
            reinit_dead_codes(codebook, candidates, [cfg.seed, epoch, i], dead_codes=stats["dead_codes"])
        codebook.reset_usage()
