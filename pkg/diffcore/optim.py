import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from diffcore.errors import NumericalError, ShapeError
from diffcore.params import ParamStore

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    warmup_epochs: int = 20
    decay_epochs: List[int] = field(default_factory=lambda: [20, 40])
    decay_factor: float = 0.1
    total_epochs: int = 500
    batch_size: int = 128

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.decay_epochs = sorted(int(e) for e in self.decay_epochs)
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError(f"warmup_epochs {self.warmup_epochs} must lie in [0, total_epochs={self.total_epochs}]")
        if self.base_lr <= 0 or self.batch_size < 1:
            raise ValueError("base_lr must be positive and batch_size >= 1")


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    """Linear warm-up from 0 over [0, warmup), then a step decay at each decay epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    lr = cfg.base_lr
    if epoch < cfg.warmup_epochs:
        lr = cfg.base_lr * epoch / cfg.warmup_epochs
    passed = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return lr * cfg.decay_factor ** passed


def adam_step(store: ParamStore, grads: Dict[str, np.ndarray], lr: float,
              cfg: OptimizerConfig = None) -> ParamStore:
    cfg = cfg or OptimizerConfig()
    beta1, beta2 = cfg.betas
    for name in sorted(grads):
        if name not in store:
            raise KeyError(f"Gradient for unknown parameter {name}")
        if grads[name].shape != store[name].shape:
            raise ShapeError(f"Gradient for {name} has shape {grads[name].shape}, parameter {store[name].shape}")
        if not np.all(np.isfinite(grads[name])):
            logger.error(f"Non-finite gradient for {name}; training diverged")
            raise NumericalError(f"Non-finite gradient for parameter {name}", {"parameter": name})

    for name in sorted(grads):
        g = grads[name]
        store.steps[name] += 1
        t = store.steps[name]
        m = store.first_moment[name]
        v = store.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        store.params[name] -= (lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)).astype(store.params[name].dtype)
    return store
