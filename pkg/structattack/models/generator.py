# The MIT License (MIT)
# Copyright © 2024 structattack contributors

"""
Fully-convolutional perturbation generators.

The ResNet variant is the image-to-image backbone shared by the generative
attack line of work: a 7x7 head, two stride-2 downsampling convs, residual
blocks at 4x reduced resolution, two transposed-conv upsamplers and a 7x7
output conv. The output is tanh mapped onto [0, 1].
"""

import torch
import numpy as np
import torch.nn as nn
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterable, Tuple, Union

from structattack.constants import (
    BASE_WIDTH,
    NUM_RESIDUAL_BLOCKS,
    EARLY_BLOCKS,
    RESNET_DOWNSAMPLING,
    UNET_DEPTH,
)
from structattack.models.features import FeatureBundle
from structattack.shared.errors import ConfigurationError, ShapeError
from structattack.shared.utils import parse_int_list

ARCHITECTURES = ("resnet", "unet")
OUTPUT_ACTIVATIONS = ("tanh_unit_interval",)
UNET_BOTTLENECK_BLOCK = 1


@dataclass
class GeneratorConfig:
    architecture: str = "resnet"
    input_channels: int = 3
    base_width: int = BASE_WIDTH
    num_residual_blocks: int = NUM_RESIDUAL_BLOCKS
    tap_blocks: Tuple[int, ...] = EARLY_BLOCKS
    output_activation: str = "tanh_unit_interval"
    unet_depth: int = UNET_DEPTH

    def __post_init__(self):
        if isinstance(self.tap_blocks, str) and self.tap_blocks == "bottleneck":
            self.tap_blocks = (UNET_BOTTLENECK_BLOCK,)
        else:
            self.tap_blocks = tuple(sorted(set(parse_int_list(self.tap_blocks) or ())))

    @property
    def downsampling(self) -> int:
        if self.architecture == "unet":
            return 2**self.unet_depth
        return RESNET_DOWNSAMPLING

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"Unknown generator architecture '{self.architecture}', expected one of {ARCHITECTURES}"
            )
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"Unknown output activation '{self.output_activation}'")
        if self.input_channels < 1 or self.base_width < 1:
            raise ConfigurationError("input_channels and base_width must be positive")
        if self.architecture == "resnet":
            if self.num_residual_blocks < 1:
                raise ConfigurationError("num_residual_blocks must be >= 1")
            bad = [b for b in self.tap_blocks if not 1 <= b <= self.num_residual_blocks]
            if bad:
                raise ConfigurationError(
                    f"Tap blocks {bad} outside 1..{self.num_residual_blocks}"
                )
        else:
            if self.unet_depth < 1:
                raise ConfigurationError("unet_depth must be >= 1")
            if self.tap_blocks != (UNET_BOTTLENECK_BLOCK,):
                raise ConfigurationError(
                    "The U-Net generator exposes exactly one tap, at the bottleneck "
                    f"(block {UNET_BOTTLENECK_BLOCK}); got {self.tap_blocks}"
                )
        return self

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["tap_blocks"] = list(self.tap_blocks)
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "GeneratorConfig":
        return cls(**d)


def block_partition(num_blocks: int = NUM_RESIDUAL_BLOCKS) -> Dict[str, Tuple[int, ...]]:
    """Split residual blocks 1..n into early/mid/late thirds (6 -> {1,2}/{3,4}/{5,6})."""
    groups = np.array_split(np.arange(1, num_blocks + 1), 3)
    early, mid, late = (tuple(int(b) for b in g) for g in groups)
    return {"early": early, "mid": mid, "late": late, "all": tuple(range(1, num_blocks + 1))}


def resolve_blocks(
    spec: Union[str, Iterable[int]], num_blocks: int = NUM_RESIDUAL_BLOCKS
) -> Tuple[int, ...]:
    """Accepts a partition name (early/mid/late/all) or an index list like "1,2"."""
    if isinstance(spec, str) and spec in ("early", "mid", "late", "all"):
        return block_partition(num_blocks)[spec]
    if isinstance(spec, str) and spec == "bottleneck":
        return (UNET_BOTTLENECK_BLOCK,)
    return tuple(sorted(set(parse_int_list(spec))))


def unit_interval(t: torch.Tensor) -> torch.Tensor:
    return (torch.tanh(t) + 1.0) / 2.0


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv_block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim, affine=True),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim, affine=True),
        )

    def forward(self, x):
        return x + self.conv_block(x)


class PerturbationGenerator(nn.Module):
    """
    Common interface of both generator variants.

    `encode_features` is the encoder half: it returns the hidden state handed
    to `decode` plus the configured taps. `forward` chains both halves.
    """

    config: GeneratorConfig

    def check_input(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"Expected a batch x {self.config.input_channels} x H x W image batch, got {tuple(x.shape)}"
            )
        factor = self.config.downsampling
        h, w = x.shape[-2:]
        if h % factor or w % factor:
            raise ShapeError(
                f"Spatial size {h}x{w} is not divisible by the generator's downsampling factor {factor}"
            )

    def encode_features(self, x: torch.Tensor) -> Tuple[object, FeatureBundle]:
        raise NotImplementedError

    def decode(self, hidden) -> torch.Tensor:
        raise NotImplementedError

    def encode(self, x: torch.Tensor) -> FeatureBundle:
        return self.encode_features(x)[1]

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, FeatureBundle]:
        hidden, taps = self.encode_features(x)
        return self.decode(hidden), taps

    @property
    def final_layer(self) -> nn.Conv2d:
        raise NotImplementedError


class ResnetGenerator(PerturbationGenerator):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        ngf = config.base_width

        self.head = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(config.input_channels, ngf, kernel_size=7),
            nn.InstanceNorm2d(ngf, affine=True),
            nn.ReLU(True),
        )

        down = []
        in_features = ngf
        for _ in range(2):
            out_features = in_features * 2
            down += [
                nn.Conv2d(in_features, out_features, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(out_features, affine=True),
                nn.ReLU(True),
            ]
            in_features = out_features
        self.down = nn.Sequential(*down)

        self.blocks = nn.ModuleList(
            [ResidualBlock(in_features) for _ in range(config.num_residual_blocks)]
        )

        up = []
        for _ in range(2):
            out_features = in_features // 2
            up += [
                nn.ConvTranspose2d(
                    in_features,
                    out_features,
                    kernel_size=3,
                    stride=2,
                    padding=1,
                    output_padding=1,
                ),
                nn.InstanceNorm2d(out_features, affine=True),
                nn.ReLU(True),
            ]
            in_features = out_features
        self.up = nn.Sequential(*up)

        self.out = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(ngf, config.input_channels, kernel_size=7),
        )

    @property
    def final_layer(self) -> nn.Conv2d:
        return self.out[1]

    def encode_features(self, x):
        self.check_input(x)
        taps = FeatureBundle()
        h = self.down(self.head(x))
        for index, block in enumerate(self.blocks, start=1):
            h = block(h)
            if index in self.config.tap_blocks:
                taps.append(index, h)
        return h, taps

    def decode(self, hidden):
        return unit_interval(self.out(self.up(hidden)))


def init_weights(gen: nn.Module, std: float = 0.02, zero_last: bool = False) -> nn.Module:
    """Normal(0, std) conv weights, zero biases, unit/zero affine norms."""
    for module in gen.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(module.weight, 0.0, std)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.InstanceNorm2d) and module.affine:
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    if zero_last:
        nn.init.zeros_(gen.final_layer.weight)
        if gen.final_layer.bias is not None:
            nn.init.zeros_(gen.final_layer.bias)
    return gen


def build_generator(config: GeneratorConfig, zero_last: bool = False) -> PerturbationGenerator:
    config.validate()
    if config.architecture == "unet":
        from structattack.models.unet import UnetGenerator

        gen = UnetGenerator(config)
    else:
        gen = ResnetGenerator(config)
    return init_weights(gen, zero_last=zero_last)


def count_parameters(gen: nn.Module) -> int:
    return sum(p.numel() for p in gen.parameters())
