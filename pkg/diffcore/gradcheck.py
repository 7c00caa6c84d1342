import logging
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from diffcore.errors import NumericalError
from diffcore.graph import Tensor

logger = logging.getLogger(__name__)

# Denominator floor for the relative error, so entries whose true gradient
# is zero are compared on an absolute scale instead of dividing noise by noise.
SCALE_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(fn: Callable[[Dict[str, Tensor]], Tensor], inputs: Dict[str, np.ndarray], eps: float = 1e-5,
               names: Optional[Iterable[str]] = None) -> float:
    """
    Max relative error between backward() gradients and central differences
    (f(x+eps) - f(x-eps)) / (2 eps), over every element of the checked inputs.
    Runs in double precision; fn maps named tensors to a scalar tensor.
    """
    arrays = {k: np.array(v, dtype=np.float64, copy=True) for k, v in inputs.items()}
    checked = list(arrays) if names is None else list(names)

    leaves = {k: Tensor(a, requires_grad=k in checked, name=k) for k, a in arrays.items()}
    out = fn(leaves)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError("grad_check: non-finite output")
    out.backward()

    def evaluate() -> float:
        value = fn({k: Tensor(a) for k, a in arrays.items()}).data
        if not np.all(np.isfinite(value)):
            raise NumericalError("grad_check: non-finite output under perturbation")
        return float(value)

    worst = 0.0
    for name in checked:
        array = arrays[name]
        analytic = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(array)
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = evaluate()
            flat[i] = original - eps
            minus = evaluate()
            flat[i] = original
            numeric.reshape(-1)[i] = (plus - minus) / (2 * eps)
        err = relative_error(analytic, numeric)
        logger.debug(f"grad_check {name}: max relative error {err:.3e}")
        worst = max(worst, err)
    return worst
