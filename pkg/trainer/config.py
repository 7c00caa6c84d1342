"""
Built-in defaults (desk scale) and the typed training view of a run's
flat dotted-key configuration.
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict

from bidnet.model import BIDModel
from bidnet.specs import DecoderSpec, EncoderSpec, LossWeights, MaskSpec
from diffcore.optim import OptimizerConfig
from quantizer.rvq import QuantizerConfig

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "data": {
        "classes": [0, 1, 2, 3],
        "train_count": 200,
        "val_count": 0,
        "test_count": 50,
        "joints": 24,
        "min_len": 96,
        "max_len": 120,
        "min_segments": 2,
        "max_segments": 4,
        "min_duration": 12,
        "min_transition": 4,
        "max_transition": 12,
        "label_fraction": 0.1,
        "frame_rate": 30.0,
        "workers": 4,
    },
    "model": {
        "width": 64,
        "kernel_size": 3,
        "stages": 2,
        "dilations": [9, 3, 1],
    },
    "quantizer": {
        "k_class": 64,
        "k_residual": 256,
        "num_layers": 4,
        "code_dim": 16,
        "ema_decay": 0.99,
        "dead_code_threshold": 1.0,
        "shared_codebook": False,
        "reinit_dead_codes": True,
    },
    "mask": {
        "mask_ratio": 0.4,
        "span_len": 8,
        "mode": "span",
    },
    "loss": {
        "lambda_bound": 1.0,
        "lambda_com": 0.05,
        "use_interior": True,
    },
    "optimizer": {
        "base_lr": 1.0e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1.0e-8,
        "warmup_epochs": 5,
        "decay_epochs": [30, 45],
        "decay_factor": 0.1,
    },
    "train": {
        "epochs": 50,
        "finetune_epochs": 50,
        "batch_size": 16,
        "eval_every": 0,
    },
    "eval": {
        "iou_thresholds": [0.1, 0.2, 0.3, 0.4, 0.5],
        "score_thresholds": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "purity_trials": 100,
    },
    "ablate": {
        "k_values": [16, 32, 64, 128, 256],
    },
    "output": {
        "dir": "runs/default",
    },
}


def flatten(tree: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def unflatten(flat: Dict[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key in sorted(flat):
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = copy.deepcopy(flat[key])
    return tree


DEFAULT_VALUES = flatten(DEFAULTS)


@dataclass
class TrainConfig:
    epochs: int = 50
    finetune_epochs: int = 50
    batch_size: int = 16
    seq_len: int = 120
    seed: int = 0
    eval_every: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    mask: MaskSpec = field(default_factory=MaskSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    snapshot: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1 or self.finetune_epochs < 1:
            raise ValueError("epochs and finetune_epochs must be >= 1")
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be >= 1")

    @classmethod
    def from_values(cls, values: Dict[str, Any]) -> "TrainConfig":
        v = dict(DEFAULT_VALUES)
        v.update(values)
        seed = int(v["seed"])
        joints = int(v["data.joints"])
        width = int(v["model.width"])
        epochs = int(v["train.epochs"])
        return cls(
            epochs=epochs,
            finetune_epochs=int(v["train.finetune_epochs"]),
            batch_size=int(v["train.batch_size"]),
            seq_len=int(v["data.max_len"]),
            seed=seed,
            eval_every=int(v["train.eval_every"]),
            optimizer=OptimizerConfig(
                base_lr=float(v["optimizer.base_lr"]),
                betas=(float(v["optimizer.beta1"]), float(v["optimizer.beta2"])),
                epsilon=float(v["optimizer.epsilon"]),
                warmup_epochs=int(v["optimizer.warmup_epochs"]),
                decay_epochs=list(v["optimizer.decay_epochs"]),
                decay_factor=float(v["optimizer.decay_factor"]),
                total_epochs=epochs,
                batch_size=int(v["train.batch_size"]),
            ),
            quantizer=QuantizerConfig(
                k_class=int(v["quantizer.k_class"]),
                k_residual=int(v["quantizer.k_residual"]),
                num_layers=int(v["quantizer.num_layers"]),
                code_dim=int(v["quantizer.code_dim"]),
                feature_dim=width,
                ema_decay=float(v["quantizer.ema_decay"]),
                dead_code_threshold=float(v["quantizer.dead_code_threshold"]),
                shared_codebook=bool(v["quantizer.shared_codebook"]),
                reinit_dead_codes=bool(v["quantizer.reinit_dead_codes"]),
            ),
            encoder=EncoderSpec(in_channels=joints, width=width, kernel_size=int(v["model.kernel_size"]),
                                stages=int(v["model.stages"]), dilations=list(v["model.dilations"])),
            decoder=DecoderSpec(width=width, out_channels=joints, kernel_size=int(v["model.kernel_size"]),
                                stages=int(v["model.stages"]), dilations=list(v["model.dilations"])),
            mask=MaskSpec(mask_ratio=float(v["mask.mask_ratio"]), span_len=int(v["mask.span_len"]),
                          seed=seed, mode=str(v["mask.mode"])),
            loss=LossWeights(lambda_bound=float(v["loss.lambda_bound"]), lambda_com=float(v["loss.lambda_com"]),
                             use_interior=bool(v["loss.use_interior"])),
            snapshot=dict(v),
        )

    def optimizer_for(self, epochs: int) -> OptimizerConfig:
        """The optimizer settings with the schedule stretched over `epochs`."""
        o = self.optimizer
        return OptimizerConfig(base_lr=o.base_lr, betas=o.betas, epsilon=o.epsilon,
                               warmup_epochs=min(o.warmup_epochs, epochs), decay_epochs=list(o.decay_epochs),
                               decay_factor=o.decay_factor, total_epochs=epochs, batch_size=o.batch_size)


def build_model(cfg: TrainConfig) -> BIDModel:
    return BIDModel(cfg.encoder, cfg.decoder, cfg.quantizer, cfg.mask, cfg.loss)
