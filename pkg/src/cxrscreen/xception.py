"""Xception feature extractor built from depthwise-separable convolutions.

Standard entry/middle/exit flow layout; only the convolutional trunk is
defined here, the classification head lives in the model zoo.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class SeparableConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, padding: int = 1):
        super().__init__()
        self.depthwise = nn.Conv2d(
            in_ch, in_ch, kernel, stride=stride, padding=padding, groups=in_ch, bias=False
        )
        self.pointwise = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pointwise(self.depthwise(x))


class XceptionBlock(nn.Module):
    """A stack of separable convs with an optional strided projection skip."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        reps: int,
        stride: int = 1,
        start_with_relu: bool = True,
        grow_first: bool = True,
    ):
        super().__init__()
        if out_ch != in_ch or stride != 1:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.skip = None

        layers: list[nn.Module] = []
        channels = in_ch
        if grow_first:
            layers += [
                nn.ReLU(inplace=False),
                SeparableConv2d(in_ch, out_ch),
                nn.BatchNorm2d(out_ch),
            ]
            channels = out_ch
            reps -= 1
        for _ in range(reps):
            layers += [
                nn.ReLU(inplace=False),
                SeparableConv2d(channels, channels),
                nn.BatchNorm2d(channels),
            ]
        if not grow_first:
            layers += [
                nn.ReLU(inplace=False),
                SeparableConv2d(in_ch, out_ch),
                nn.BatchNorm2d(out_ch),
            ]
        if not start_with_relu:
            layers = layers[1:]
        if stride != 1:
            layers.append(nn.MaxPool2d(3, stride, padding=1))
        self.rep = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.rep(x)
        skip = self.skip(x) if self.skip is not None else x
        return out + skip


class XceptionFeatures(nn.Module):
    """Convolutional trunk producing (B, 2048, H/32, W/32) feature maps."""

    out_channels = 2048

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=False),
            nn.Conv2d(32, 64, 3, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=False),
        )
        self.entry = nn.Sequential(
            XceptionBlock(64, 128, reps=2, stride=2, start_with_relu=False),
            XceptionBlock(128, 256, reps=2, stride=2),
            XceptionBlock(256, 728, reps=2, stride=2),
        )
        self.middle = nn.Sequential(
            *[XceptionBlock(728, 728, reps=3) for _ in range(8)]
        )
        self.exit = nn.Sequential(
            XceptionBlock(728, 1024, reps=2, stride=2, grow_first=False),
            SeparableConv2d(1024, 1536),
            nn.BatchNorm2d(1536),
            nn.ReLU(inplace=False),
            SeparableConv2d(1536, 2048),
            nn.BatchNorm2d(2048),
            nn.ReLU(inplace=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        x = self.entry(x)
        x = self.middle(x)
        return self.exit(x)
