# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import torch
import torch.nn as nn

from structattack.models.features import FeatureBundle
from structattack.models.generator import (
    GeneratorConfig,
    PerturbationGenerator,
    UNET_BOTTLENECK_BLOCK,
    unit_interval,
)


def double_conv(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_channels, affine=True),
        nn.ReLU(True),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_channels, affine=True),
        nn.ReLU(True),
    )


class UnetGenerator(PerturbationGenerator):
    """
    Symmetric encoder/decoder with skip connections.

    Level 0 runs at input resolution; each of the `unet_depth` levels halves
    it. The deepest level is the bottleneck and the only tapped block.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        widths = [min(w * 2**level, w * 8) for level in range(config.unet_depth + 1)]
        self.widths = widths

        self.inc = double_conv(config.input_channels, widths[0])
        self.down = nn.ModuleList(
            [
                nn.Sequential(
                    nn.Conv2d(widths[i], widths[i], kernel_size=4, stride=2, padding=1),
                    nn.InstanceNorm2d(widths[i], affine=True),
                    nn.ReLU(True),
                    double_conv(widths[i], widths[i + 1]),
                )
                for i in range(config.unet_depth)
            ]
        )
        self.up = nn.ModuleList(
            [
                nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2)
                for i in reversed(range(config.unet_depth))
            ]
        )
        self.merge = nn.ModuleList(
            [double_conv(widths[i] * 2, widths[i]) for i in reversed(range(config.unet_depth))]
        )
        self.out = nn.Conv2d(widths[0], config.input_channels, kernel_size=1)

    @property
    def final_layer(self) -> nn.Conv2d:
        return self.out

    def encode_features(self, x):
        self.check_input(x)
        skips = [self.inc(x)]
        for down in self.down:
            skips.append(down(skips[-1]))
        bottleneck = skips.pop()
        taps = FeatureBundle([(UNET_BOTTLENECK_BLOCK, bottleneck)])
        return (bottleneck, skips), taps

    def decode(self, hidden):
        h, skips = hidden
        for up, merge, skip in zip(self.up, self.merge, reversed(skips)):
            h = merge(torch.cat([up(h), skip], dim=1))
        return unit_interval(self.out(h))
