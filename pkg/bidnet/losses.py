import logging
import math
from typing import Optional

import numpy as np

from bidnet.specs import LossWeights
from diffcore import ops
from diffcore.errors import NumericalError
from diffcore.graph import Tensor, add, constant, scale

logger = logging.getLogger(__name__)


def interior_loss(pred: Tensor, target: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error of the inpainted sequence over every valid (frame, channel) entry."""
    return ops.mse_loss(pred, target, valid)


def boundary_loss(pred: Tensor, target: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    return ops.mse_loss(pred, target, valid)


def commitment_loss(f_low: Tensor, z_sum: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """||F_low - sg(Z)||^2 per frame, averaged over valid frames. z_sum is a constant."""
    return ops.frame_squared_error(f_low, z_sum, valid)


def total_loss(interior: float, boundary: float, commitment: float, weights: LossWeights) -> float:
    for name, value in (("interior", interior), ("boundary", boundary), ("commitment", commitment)):
        if not math.isfinite(value):
            raise NumericalError(f"Non-finite {name} loss: {value}",
                                 {"interior": interior, "boundary": boundary, "commitment": commitment})
    return interior + weights.lambda_bound * boundary + weights.lambda_com * commitment


def combine_losses(interior: Optional[Tensor], boundary: Optional[Tensor], commitment: Tensor,
                   weights: LossWeights) -> Tensor:
    """Graph form of total_loss; a missing term contributes exactly 0."""
    interior = interior if interior is not None else constant(np.float64(0.0))
    boundary = boundary if boundary is not None else constant(np.float64(0.0))
    return add(add(interior, scale(boundary, weights.lambda_bound)), scale(commitment, weights.lambda_com))
