"""Frame classifier head used for fine-tuning: one residual block, a pointwise map to C+1 logits, softmax."""
import numpy as np

from bidnet.layers import Params, conv, init_conv, init_res_block, res_block
from diffcore import ops
from diffcore.graph import Tensor
from diffcore.params import ParamStore

PREFIX = "classifier"


def init_classifier(store: ParamStore, width: int, num_outputs: int, kernel_size: int, rng: np.random.Generator):
    init_res_block(store, f"{PREFIX}.res", width, kernel_size, rng)
    init_conv(store, f"{PREFIX}.out", num_outputs, width, 1, rng)


def classifier_logits(p: Params, features: Tensor) -> Tensor:
    return conv(p, f"{PREFIX}.out", res_block(p, f"{PREFIX}.res", features, 1))


def classifier_probs(p: Params, features: Tensor) -> np.ndarray:
    """Per-frame class probabilities, (C+1) x T or B x (C+1) x T."""
    return ops.softmax(classifier_logits(p, features).data.astype(np.float64), axis=-2)
