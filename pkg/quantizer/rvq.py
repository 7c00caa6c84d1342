"""
Residual vector quantization with two codebooks: layer 0 assigns every
frame to the class codebook (the pre-action class code), layers 1..L
quantize what is left with a residual codebook shared by all of them.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from diffcore.errors import ShapeError
from quantizer.codebook import Codebook, assign, lookup, DEFAULT_DECAY

logger = logging.getLogger(__name__)


@dataclass
class QuantizerConfig:
    k_class: int = 64
    k_residual: int = 256
    num_layers: int = 4
    code_dim: int = 16
    feature_dim: int = 256
    ema_decay: float = DEFAULT_DECAY
    dead_code_threshold: float = 1.0
    shared_codebook: bool = False
    reinit_dead_codes: bool = True

    def __post_init__(self):
        if min(self.k_class, self.k_residual, self.code_dim, self.feature_dim) < 1:
            raise ValueError("Codebook sizes and dimensions must be positive")
        if self.num_layers < 0:
            raise ValueError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.code_dim > self.feature_dim:
            raise ValueError(f"code_dim {self.code_dim} exceeds feature_dim {self.feature_dim}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.dead_code_threshold < 0:
            raise ValueError("dead_code_threshold must be non-negative")


@dataclass
class LatentBundle:
    class_indices: np.ndarray      # (N,)
    residual_indices: np.ndarray   # (L, N)
    z0: np.ndarray                 # (N, d)
    residuals: np.ndarray          # (L, N, d)
    z_sum: np.ndarray              # (N, d)
    commitment: float
    layer_inputs: np.ndarray       # (L, N, d), what each residual layer quantized
    layer_errors: np.ndarray       # (L + 1,), mean ||F_low - partial sum|| after each layer

    @property
    def num_layers(self) -> int:
        return self.residual_indices.shape[0]


def rvq_quantize(frames: np.ndarray, class_cb: Codebook, residual_cb: Optional[Codebook], num_layers: int) -> LatentBundle:
    """
    Quantizes an N x d frame matrix. z_sum is accumulated as
    z0 + r1 + ... + rL in that order; commitment is the mean over frames of
    ||frames - z_sum||^2.
    """
    if num_layers < 0:
        raise ValueError(f"Number of residual layers must be >= 0, got {num_layers}")
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != class_cb.dim:
        raise ShapeError(f"Frames {frames.shape} do not match code dim {class_cb.dim}")
    if num_layers > 0 and (residual_cb is None or residual_cb.dim != class_cb.dim):
        raise ShapeError("Residual layers need a residual codebook of the same code dim")
    dtype = frames.dtype
    count, dim = frames.shape

    class_indices = assign(frames, class_cb)
    z0 = lookup(class_indices, class_cb, dtype)
    z_sum = z0.copy()
    residual = frames - z0
    errors = [_mean_norm(residual)]

    residual_indices = np.zeros((num_layers, count), dtype=np.int64)
    residuals = np.zeros((num_layers, count, dim), dtype=dtype)
    layer_inputs = np.zeros((num_layers, count, dim), dtype=dtype)
    for layer in range(num_layers):
        layer_inputs[layer] = residual
        indices = assign(residual, residual_cb)
        code = lookup(indices, residual_cb, dtype)
        residual_indices[layer] = indices
        residuals[layer] = code
        z_sum = z_sum + code
        residual = residual - code
        errors.append(_mean_norm(residual))

    diff = frames.astype(np.float64) - z_sum
    commitment = float(np.mean(np.sum(diff * diff, axis=1))) if count else 0.0
    return LatentBundle(class_indices, residual_indices, z0, residuals, z_sum, commitment,
                        layer_inputs, np.asarray(errors))


def _mean_norm(residual: np.ndarray) -> float:
    if residual.shape[0] == 0:
        return 0.0
    return float(np.mean(np.sqrt(np.sum(residual.astype(np.float64) ** 2, axis=1))))
