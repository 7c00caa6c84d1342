import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from bidnet.model import BIDModel
from diffcore.container import read_container, write_container
from diffcore.errors import ContainerError, ShapeError
from diffcore.params import ParamStore
from quantizer.codebook import Codebook
from trainer.config import TrainConfig, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PARAM_PREFIX = "param."
CLASS_CODEBOOK = "codebook_class"
RESIDUAL_CODEBOOK = "codebook_residual"


@dataclass
class Checkpoint:
    params: ParamStore
    class_codebook: Codebook
    residual_codebook: Optional[Codebook]
    epoch: int
    config: Dict[str, Any]
    kind: str = "pretrain"
    num_classes: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def has_classifier(self) -> bool:
        return any(name.startswith("classifier.") for name in self.params.names())

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_values(self.config)

    def model(self) -> BIDModel:
        return build_model(self.train_config())


def save_checkpoint(path: str, ckpt: Checkpoint):
    arrays = ckpt.params.to_arrays(PARAM_PREFIX)
    arrays.update(ckpt.class_codebook.to_arrays(CLASS_CODEBOOK))
    if ckpt.residual_codebook is not None:
        arrays.update(ckpt.residual_codebook.to_arrays(RESIDUAL_CODEBOOK))
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "kind": ckpt.kind,
        "epoch": ckpt.epoch,
        "num_classes": ckpt.num_classes,
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "adam_steps": ckpt.params.steps,
        "history": ckpt.history,
    }
    write_container(path, arrays, meta)
    logger.info(f"Saved {ckpt.kind} checkpoint (epoch {ckpt.epoch}, "
                f"{ckpt.params.num_parameters()} parameters) to {path}")


def load_checkpoint(path: str, expected_joints: Optional[int] = None) -> Checkpoint:
    arrays, meta = read_container(path)
    version = meta.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise ContainerError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    params = ParamStore.from_arrays({k: v for k, v in arrays.items() if k.startswith(PARAM_PREFIX)},
                                    meta.get("adam_steps", {}), PARAM_PREFIX)
    config = meta["config"]
    decay = float(config.get("quantizer.ema_decay", 0.99))
    class_cb = Codebook.from_arrays(arrays, CLASS_CODEBOOK, decay=decay)
    residual_cb = None
    if RESIDUAL_CODEBOOK in arrays:
        residual_cb = Codebook.from_arrays(arrays, RESIDUAL_CODEBOOK, decay=decay)

    ckpt = Checkpoint(params, class_cb, residual_cb, int(meta["epoch"]), config, kind=meta.get("kind", "pretrain"),
                      num_classes=int(meta.get("num_classes", 0)), rng_state=meta.get("rng_state", {}),
                      history=meta.get("history", []))

    joints = params["encoder.in.w"].shape[1] if "encoder.in.w" in params else None
    if expected_joints is not None and joints != expected_joints:
        logger.error(f"Checkpoint {path} was trained on J={joints}, data has J={expected_joints}")
        raise ShapeError(f"Checkpoint expects J={joints} input channels, data has J={expected_joints}")
    expected = {n: s for n, s in ckpt.model().expected_shapes().items() if n in params}
    params.check_shapes(expected)
    return ckpt
