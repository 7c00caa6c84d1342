from dataclasses import dataclass, field
from typing import List

MASK_MODES = ("span", "bernoulli")


@dataclass
class EncoderSpec:
    """Input conv J -> D, then `stages` x [conv D -> D, residual blocks at each dilation]."""
    in_channels: int = 75
    width: int = 256
    kernel_size: int = 3
    stages: int = 2
    dilations: List[int] = field(default_factory=lambda: [9, 3, 1])

    def __post_init__(self):
        self.dilations = [int(d) for d in self.dilations]
        if min(self.in_channels, self.width, self.stages) < 1:
            raise ValueError("Encoder channels, width and stage count must be positive")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be >= 1, got {self.dilations}")


@dataclass
class DecoderSpec:
    """Pointwise fuse 2D -> D over [features ; codes], the encoder's stages, then two pointwise convs D -> D -> J."""
    width: int = 256
    out_channels: int = 75
    kernel_size: int = 3
    stages: int = 2
    dilations: List[int] = field(default_factory=lambda: [9, 3, 1])

    def __post_init__(self):
        self.dilations = [int(d) for d in self.dilations]
        if min(self.width, self.out_channels, self.stages) < 1:
            raise ValueError("Decoder width, output channels and stage count must be positive")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be >= 1, got {self.dilations}")

    @property
    def input_width(self) -> int:
        return 2 * self.width


@dataclass
class MaskSpec:
    mask_ratio: float = 0.4
    span_len: int = 8
    seed: int = 0
    mode: str = "span"

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.span_len < 1:
            raise ValueError(f"span_len must be >= 1, got {self.span_len}")
        if self.mode not in MASK_MODES:
            raise ValueError(f"mask mode must be one of {MASK_MODES}, got {self.mode!r}")


@dataclass
class LossWeights:
    lambda_bound: float = 1.0
    lambda_com: float = 0.05
    use_interior: bool = True

    def __post_init__(self):
        if self.lambda_bound < 0 or self.lambda_com < 0:
            raise ValueError("Loss weights must be non-negative")
