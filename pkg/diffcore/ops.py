"""
Differentiable operations on channel-major sequences: C x T for a single
sequence or B x C x T for a batch. Stride is always 1 and padding is
"same", so every layer preserves T.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from diffcore.errors import ShapeError
from diffcore.graph import Tensor, make_result

logger = logging.getLogger(__name__)


def _batched(a: np.ndarray) -> np.ndarray:
    return a[None] if a.ndim == 2 else a


def same_padding(kernel_size: int, dilation: int) -> int:
    if kernel_size % 2 == 0:
        raise ShapeError(f"Kernel size must be odd for same padding, got {kernel_size}")
    return dilation * (kernel_size - 1) // 2


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1,
           padding: Optional[int] = None) -> Tensor:
    """Cross-correlation with zero padding: out[o,t] = b[o] + sum_c,j w[o,c,j] x[c, t + j*d - pad]."""
    if x.data.ndim not in (2, 3) or weight.data.ndim != 3:
        raise ShapeError(f"conv1d expects (C,T)/(B,C,T) input and (Cout,Cin,k) weight, "
                         f"got {x.data.shape} and {weight.data.shape}")
    c_out, c_in, k = weight.data.shape
    pad = same_padding(k, dilation)
    if padding is not None and padding != pad:
        raise ShapeError(f"padding {padding} does not preserve length for k={k}, dilation={dilation} (need {pad})")
    squeeze = x.data.ndim == 2
    xb = _batched(x.data)
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv1d input has {xb.shape[1]} channels, weight expects {c_in}")
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.data.shape} != ({c_out},)")

    steps = xb.shape[2]
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad)))
    w = weight.data
    out = np.zeros((xb.shape[0], c_out, steps), dtype=np.result_type(xb, w))
    for j in range(k):
        out += np.matmul(w[:, :, j], xp[:, :, j * dilation:j * dilation + steps])
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gb = _batched(g)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=np.result_type(xp, gb))
            for j in range(k):
                gxp[:, :, j * dilation:j * dilation + steps] += np.matmul(w[:, :, j].T, gb)
            gx = gxp[:, :, pad:pad + steps]
            x.accumulate(gx[0] if squeeze else gx)
        if weight.requires_grad:
            gw = np.empty(w.shape, dtype=np.result_type(w, gb))
            for j in range(k):
                gw[:, :, j] = np.tensordot(gb, xp[:, :, j * dilation:j * dilation + steps], axes=([0, 2], [0, 2]))
            weight.accumulate(gw)
        if bias is not None:
            bias.accumulate(gb.sum(axis=(0, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out[0] if squeeze else out, parents, backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-frame linear map over channels: (Cout, Cin) applied to every time step."""
    if weight.data.ndim != 2:
        raise ShapeError(f"linear weight must be (Cout, Cin), got {weight.data.shape}")
    squeeze = x.data.ndim == 2
    xb = _batched(x.data)
    if xb.ndim != 3 or xb.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"linear input {x.data.shape} does not match weight {weight.data.shape}")
    out = np.matmul(weight.data, xb)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        gb = _batched(g)
        if x.requires_grad:
            gx = np.matmul(weight.data.T, gb)
            x.accumulate(gx[0] if squeeze else gx)
        if weight.requires_grad:
            weight.accumulate(np.tensordot(gb, xb, axes=([0, 2], [0, 2])))
        if bias is not None:
            bias.accumulate(gb.sum(axis=(0, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out[0] if squeeze else out, parents, backward)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    out = np.where(active, x.data, 0).astype(x.data.dtype)

    def backward(g):
        x.accumulate(g * active)

    return make_result(out, (x,), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    axis = tensors[0].data.ndim - 2
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        start = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + size)
            t.accumulate(g[tuple(index)])
            start += size

    return make_result(out, tuple(tensors), backward)


def mask_frames(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiplies by a constant frame mask broadcast over channels: mask is (T,) or (B, T)."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    factor = mask[..., None, :]
    out = x.data * factor

    def backward(g):
        x.accumulate(g * factor)

    return make_result(out, (x,), backward)


def straight_through(x: Tensor, quantized: np.ndarray) -> Tensor:
    """Forward value is the quantized code; the gradient passes to x unchanged."""
    if quantized.shape != x.data.shape:
        raise ShapeError(f"straight_through shapes differ: {x.data.shape} vs {quantized.shape}")
    out = np.array(quantized, dtype=x.data.dtype, copy=True)

    def backward(g):
        x.accumulate(g)

    return make_result(out, (x,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) as a scalar; turns any output into a checkable loss."""
    out = np.sum(x.data.astype(np.float64) * weights)

    def backward(g):
        x.accumulate(g * weights)

    return make_result(out, (x,), backward)


def _valid_weights(valid: Optional[np.ndarray], shape) -> np.ndarray:
    """(B,T) or (T,) validity -> weights broadcastable against a (B,C,T)/(C,T) array."""
    if valid is None:
        return np.ones(shape[:-2] + (1, shape[-1]))
    return np.asarray(valid, dtype=np.float64)[..., None, :]


def mse_loss(pred: Tensor, target: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error over every channel of every valid frame."""
    if pred.data.shape != np.shape(target):
        raise ShapeError(f"mse_loss shapes differ: {pred.data.shape} vs {np.shape(target)}")
    weights = _valid_weights(valid, pred.data.shape)
    count = float(np.sum(np.broadcast_to(weights, pred.data.shape)))
    if count == 0:
        raise ShapeError("mse_loss over zero valid frames")
    diff = pred.data.astype(np.float64) - target
    out = np.sum(weights * diff * diff) / count

    def backward(g):
        pred.accumulate(g * 2.0 * weights * diff / count)

    return make_result(out, (pred,), backward)


def frame_squared_error(pred: Tensor, target: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """Squared L2 distance per frame (summed over channels), averaged over valid frames."""
    if pred.data.shape != np.shape(target):
        raise ShapeError(f"frame_squared_error shapes differ: {pred.data.shape} vs {np.shape(target)}")
    weights = _valid_weights(valid, pred.data.shape)
    frames = float(np.sum(weights))
    if frames == 0:
        raise ShapeError("frame_squared_error over zero valid frames")
    diff = pred.data.astype(np.float64) - target
    out = np.sum(weights * diff * diff) / frames

    def backward(g):
        pred.accumulate(g * 2.0 * weights * diff / frames)

    return make_result(out, (pred,), backward)


def softmax(logits: np.ndarray, axis: int = -2) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean negative log-likelihood of integer frame labels under a softmax over
    the channel axis; logits are (K,T) or (B,K,T), labels (T,) or (B,T).
    """
    squeeze = logits.data.ndim == 2
    lb = _batched(logits.data).astype(np.float64)
    labels = np.asarray(labels)
    labels_b = labels[None] if squeeze else labels
    num_classes = lb.shape[1]
    if labels_b.shape != (lb.shape[0], lb.shape[2]):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.data.shape}")
    if labels_b.size and (labels_b.min() < 0 or labels_b.max() >= num_classes):
        raise ShapeError(f"label ids must lie in [0, {num_classes}), got [{labels_b.min()}, {labels_b.max()}]")
    weights = np.ones(labels_b.shape) if valid is None else np.asarray(valid, dtype=np.float64).reshape(labels_b.shape)
    frames = float(weights.sum())
    if frames == 0:
        raise ShapeError("cross_entropy over zero valid frames")

    shifted = lb - lb.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = np.take_along_axis(log_probs, labels_b[:, None, :], axis=1)[:, 0, :]
    out = -np.sum(weights * picked) / frames

    def backward(g):
        grad = np.exp(log_probs)
        np.put_along_axis(grad, labels_b[:, None, :], np.take_along_axis(grad, labels_b[:, None, :], axis=1) - 1.0,
                          axis=1)
        grad = grad * weights[:, None, :] * (g / frames)
        logits.accumulate(grad[0] if squeeze else grad)

    return make_result(out, (logits,), backward)
