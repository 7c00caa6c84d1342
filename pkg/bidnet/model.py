"""
The pre-training network: encoder E, the 16-d quantization bottleneck with
its two codebooks, interior decoder U (inpainting from masked features and
codes) and boundary decoder B (segment end-state prediction).

Arrays are channel-major: inputs B x J x T, features B x D x T, codes
B x d x T. Quantization flattens frames in (batch, time) order.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from bidnet import layers
from bidnet.classifier import classifier_logits, init_classifier
from bidnet.losses import boundary_loss, combine_losses, commitment_loss, interior_loss
from bidnet.segments import boundary_targets, segments_from_codes
from bidnet.specs import DecoderSpec, EncoderSpec, LossWeights, MaskSpec
from diffcore import ops
from diffcore.errors import ShapeError
from diffcore.graph import Tensor, add, constant
from diffcore.params import ParamStore
from quantizer.codebook import Codebook, assign, ema_update, lookup, reinit_dead_codes
from quantizer.rvq import LatentBundle, QuantizerConfig, rvq_quantize

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]
DECODERS = ("interior", "boundary")


@dataclass
class FrozenAssignments:
    """Code assignments of one forward pass, replayed so the loss is a smooth function of the parameters."""
    bundle: LatentBundle
    codes: np.ndarray            # B x T class code ids
    z_sum: np.ndarray            # B x d x T
    f_low: np.ndarray            # B x d x T, the features the codes were chosen for
    boundary_target: np.ndarray  # B x J x T


@dataclass
class PretrainOutput:
    total: Tensor
    interior: float
    boundary: float
    commitment: float
    frozen: FrozenAssignments
    frames: np.ndarray           # N x d valid-or-not frames in (batch, time) order

    @property
    def bundle(self) -> LatentBundle:
        return self.frozen.bundle

    def components(self) -> Dict[str, float]:
        return {"interior": self.interior, "boundary": self.boundary, "commitment": self.commitment,
                "total": float(self.total.data)}


def _to_frames(x: np.ndarray) -> np.ndarray:
    """B x C x T -> (B*T) x C"""
    return np.ascontiguousarray(x.transpose(0, 2, 1).reshape(-1, x.shape[1]))


def _from_frames(frames: np.ndarray, batch: int) -> np.ndarray:
    return np.ascontiguousarray(frames.reshape(batch, -1, frames.shape[1]).transpose(0, 2, 1))


class BIDModel:
    def __init__(self, encoder: EncoderSpec, decoder: DecoderSpec, quantizer: QuantizerConfig,
                 mask: Optional[MaskSpec] = None, weights: Optional[LossWeights] = None):
        if decoder.width != encoder.width or quantizer.feature_dim != encoder.width:
            raise ShapeError(f"Feature width disagrees: encoder {encoder.width}, decoder {decoder.width}, "
                             f"quantizer {quantizer.feature_dim}")
        if decoder.out_channels != encoder.in_channels:
            raise ShapeError(f"Decoder outputs {decoder.out_channels} channels, input has {encoder.in_channels}")
        self.encoder_spec = encoder
        self.decoder_spec = decoder
        self.quantizer = quantizer
        self.mask_spec = mask or MaskSpec()
        self.weights = weights or LossWeights()

    @property
    def joints(self) -> int:
        return self.encoder_spec.in_channels

    # parameters

    def init_params(self, seed: int) -> ParamStore:
        rng = np.random.default_rng([seed, 0xb1d])
        store = ParamStore()
        enc = self.encoder_spec
        layers.init_conv(store, "encoder.in", enc.width, enc.in_channels, enc.kernel_size, rng)
        for s in range(enc.stages):
            layers.init_tcn_stage(store, f"encoder.stage{s}", enc.width, enc.kernel_size, enc.dilations, rng)

        q = self.quantizer
        store.uniform("quantizer.down.w", (q.code_dim, q.feature_dim), q.feature_dim, rng)
        store.uniform("quantizer.down.b", (q.code_dim,), q.feature_dim, rng)
        store.uniform("quantizer.up.w", (q.feature_dim, q.code_dim), q.code_dim, rng)
        store.uniform("quantizer.up.b", (q.feature_dim,), q.code_dim, rng)

        dec = self.decoder_spec
        for name in DECODERS:
            layers.init_conv(store, f"{name}.fuse", dec.width, dec.input_width, 1, rng)
            for s in range(dec.stages):
                layers.init_tcn_stage(store, f"{name}.stage{s}", dec.width, dec.kernel_size, dec.dilations, rng)
            layers.init_conv(store, f"{name}.head", dec.width, dec.width, 1, rng)
            layers.init_conv(store, f"{name}.out", dec.out_channels, dec.width, 1, rng)
        logger.debug(f"Initialised {store.num_parameters()} parameters (seed {seed})")
        return store

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        store = self.init_params(0)
        return {name: store[name].shape for name in store.names()}

    def init_codebooks(self, seed: int) -> Tuple[Codebook, Optional[Codebook]]:
        q = self.quantizer
        rng = np.random.default_rng([seed, 0xc0de])
        class_cb = Codebook.create(q.k_class, q.code_dim, rng, decay=q.ema_decay)
        if q.shared_codebook:
            return class_cb, None
        return class_cb, Codebook.create(q.k_residual, q.code_dim, rng, decay=q.ema_decay)

    def add_classifier(self, store: ParamStore, num_outputs: int, seed: int):
        rng = np.random.default_rng([seed, 0xc1a5])
        init_classifier(store, self.encoder_spec.width, num_outputs, self.encoder_spec.kernel_size, rng)

    def residual_codebook(self, class_cb: Codebook, residual_cb: Optional[Codebook]) -> Optional[Codebook]:
        return class_cb if self.quantizer.shared_codebook else residual_cb

    # forward pieces

    def encode(self, p: Params, x: Tensor) -> Tensor:
        if x.data.ndim not in (2, 3) or x.data.shape[-2] != self.joints:
            raise ShapeError(f"Encoder expects {self.joints} input channels, got input of shape {x.data.shape}")
        h = ops.relu(layers.conv(p, "encoder.in", x))
        for s in range(self.encoder_spec.stages):
            h = layers.tcn_stage(p, f"encoder.stage{s}", h, self.encoder_spec.dilations)
        return h

    def project_down(self, p: Params, features: Tensor) -> Tensor:
        return ops.linear(features, p["quantizer.down.w"], p["quantizer.down.b"])

    def project_up(self, p: Params, codes: Tensor) -> Tensor:
        return ops.linear(codes, p["quantizer.up.w"], p["quantizer.up.b"])

    def _decode(self, p: Params, name: str, features: Tensor, z_up: Tensor) -> Tensor:
        if features.data.shape != z_up.data.shape:
            raise ShapeError(f"Decoder inputs differ: features {features.data.shape}, codes {z_up.data.shape}")
        h = layers.conv(p, f"{name}.fuse", ops.concat_channels([features, z_up]))
        for s in range(self.decoder_spec.stages):
            h = layers.tcn_stage(p, f"{name}.stage{s}", h, self.decoder_spec.dilations)
        h = ops.relu(layers.conv(p, f"{name}.head", h))
        return layers.conv(p, f"{name}.out", h)

    def interior_decode(self, p: Params, features: Tensor, mask: np.ndarray, z_up: Tensor) -> Tensor:
        """U(F * M, Z): only the features are masked, the codes reach every frame."""
        return self._decode(p, "interior", ops.mask_frames(features, mask), z_up)

    def boundary_decode(self, p: Params, features: Tensor, z_up: Tensor) -> Tensor:
        return self._decode(p, "boundary", features, z_up)

    def quantize(self, f_low: np.ndarray, class_cb: Codebook,
                 residual_cb: Optional[Codebook]) -> Tuple[LatentBundle, np.ndarray, np.ndarray]:
        """Returns the bundle, z_sum as B x d x T and class codes as B x T."""
        batch, _, steps = f_low.shape
        bundle = rvq_quantize(_to_frames(f_low), class_cb, self.residual_codebook(class_cb, residual_cb),
                              self.quantizer.num_layers)
        return bundle, _from_frames(bundle.z_sum, batch), bundle.class_indices.reshape(batch, steps)

    def boundary_target(self, x: np.ndarray, codes: np.ndarray, valid: np.ndarray) -> np.ndarray:
        """S^e per batch item, built from its own class codes over its valid prefix; padding stays zero."""
        target = np.zeros_like(x)
        for b in range(x.shape[0]):
            n = int(valid[b].sum())
            if n == 0:
                continue
            built = boundary_targets(x[b, :, :n].T, segments_from_codes(codes[b, :n]))
            target[b, :, :n] = built.target.T
        return target

    def pretrain_forward(self, p: Params, x: np.ndarray, valid: Optional[np.ndarray], mask: np.ndarray,
                         class_cb: Codebook, residual_cb: Optional[Codebook],
                         frozen: Optional[FrozenAssignments] = None) -> PretrainOutput:
        """
        One pass of the pre-training objective on a B x J x T batch:
        encode, project down, residual-quantize, straight-through, project
        up, decode, and interior + lambda_bound * boundary + lambda_com *
        commitment. With `frozen` the codes, boundary targets and
        straight-through offset of an earlier pass are reused.
        """
        x = np.asarray(x)
        if x.ndim != 3:
            raise ShapeError(f"pretrain_forward expects a B x J x T batch, got {x.shape}")
        if valid is None:
            valid = np.ones((x.shape[0], x.shape[2]), dtype=bool)
        mask = np.asarray(mask).reshape(x.shape[0], x.shape[2])

        features = self.encode(p, constant(x))
        f_low = self.project_down(p, features)
        frames = _to_frames(f_low.data)
        if frozen is None:
            bundle, z_sum, codes = self.quantize(f_low.data, class_cb, residual_cb)
            frozen = FrozenAssignments(bundle, codes, z_sum, f_low.data.copy(),
                                       self.boundary_target(x, codes, valid))
            z = ops.straight_through(f_low, z_sum)
        else:
            z = add(f_low, constant(frozen.z_sum - frozen.f_low))
        z_up = self.project_up(p, z)

        interior = None
        if self.weights.use_interior:
            interior = interior_loss(self.interior_decode(p, features, mask, z_up), x, valid)
        boundary = None
        if self.weights.lambda_bound > 0:
            boundary = boundary_loss(self.boundary_decode(p, features, z_up), frozen.boundary_target, valid)
        commitment = commitment_loss(f_low, frozen.z_sum, valid)
        total = combine_losses(interior, boundary, commitment, self.weights)

        return PretrainOutput(
            total=total,
            interior=float(interior.data) if interior is not None else 0.0,
            boundary=float(boundary.data) if boundary is not None else 0.0,
            commitment=float(commitment.data),
            frozen=frozen,
            frames=frames,
        )

    # codebook maintenance

    def init_codebooks_from_data(self, p: Params, x: np.ndarray, valid: np.ndarray, class_cb: Codebook,
                                 residual_cb: Optional[Codebook], seed: int):
        """Every code counts as dead before the first step: seed the codebooks from real features."""
        frames = _to_frames(self.project_down(p, self.encode(p, constant(x))).data)[valid.reshape(-1)]
        reinit_dead_codes(class_cb, frames, [seed, 0], dead_codes=range(class_cb.size))
        residual_cb = self.residual_codebook(class_cb, residual_cb)
        if residual_cb is not None and residual_cb is not class_cb and self.quantizer.num_layers > 0:
            residual = frames - lookup(assign(frames, class_cb), class_cb, frames.dtype)
            reinit_dead_codes(residual_cb, residual, [seed, 1], dead_codes=range(residual_cb.size))

    def update_codebooks(self, out: PretrainOutput, valid: np.ndarray, class_cb: Codebook,
                         residual_cb: Optional[Codebook]):
        """EMA step for each codebook from the valid frames assigned to it in this batch."""
        keep = np.asarray(valid, dtype=bool).reshape(-1)
        bundle = out.bundle
        class_idx = [bundle.class_indices[keep]]
        class_feat = [out.frames[keep]]
        res_idx = [bundle.residual_indices[l][keep] for l in range(bundle.num_layers)]
        res_feat = [bundle.layer_inputs[l][keep] for l in range(bundle.num_layers)]

        if self.quantizer.shared_codebook:
            ema_update(class_cb, np.concatenate(class_idx + res_idx), np.concatenate(class_feat + res_feat))
            return
        ema_update(class_cb, class_idx[0], class_feat[0])
        if residual_cb is not None and res_idx:
            ema_update(residual_cb, np.concatenate(res_idx), np.concatenate(res_feat))

    # downstream

    def class_codes(self, p: Params, x: np.ndarray, class_cb: Codebook) -> np.ndarray:
        """Pre-action class code of every frame, B x T (or T for a single J x T input)."""
        x = np.asarray(x)
        single = x.ndim == 2
        xb = x[None] if single else x
        f_low = self.project_down(p, self.encode(p, constant(xb))).data
        codes = assign(_to_frames(f_low), class_cb).reshape(xb.shape[0], xb.shape[2])
        return codes[0] if single else codes

    def classify(self, p: Params, x: Tensor) -> Tensor:
        return classifier_logits(p, self.encode(p, x))
