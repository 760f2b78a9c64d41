"""Image encoder producing the spatial feature pyramid.

A strided convolutional trunk reduces the image to its deepest map; three
transposed-convolution stages then emit the pyramid maps at strictly
increasing resolution, all with the same channel count. The auxiliary
dense-correspondence head is one convolution on the finest map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ConfigurationError


@dataclass
class FeaturePyramid:
    maps: list[Tensor]  # each (B, C, H_t, W_t) with H_t, W_t strictly increasing

    def __post_init__(self):
        if not self.maps:
            raise ConfigurationError("pyramid needs at least one map")
        chans = {m.shape[-3] for m in self.maps}
        if len(chans) != 1:
            raise ConfigurationError("pyramid maps must share a channel count")
        sizes = [m.shape[-1] for m in self.maps]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError("pyramid resolutions must strictly increase")

    @property
    def levels(self) -> int:
        return len(self.maps)

    @property
    def channels(self) -> int:
        return self.maps[0].shape[-3]

    @property
    def finest(self) -> Tensor:
        return self.maps[-1]


def _conv_block(cin: int, cout: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True))


def _deconv_stage(cin: int, cout: int, stride: int) -> nn.Sequential:
    if stride == 1:
        conv = nn.ConvTranspose2d(cin, cout, 3, stride=1, padding=1, bias=False)
    else:
        conv = nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, bias=False)
    return nn.Sequential(conv, nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class PyramidEncoder(nn.Module):
    """Strided trunk + deconvolution pyramid + auxiliary IUV head."""

    def __init__(self, image_size: int, channels: int, global_channels: int,
                 trunk_channels: tuple[int, ...], deconv_strides: tuple[int, ...],
                 n_parts: int):
        super().__init__()
        self.image_size = image_size
        self.channels = channels
        self.global_channels = global_channels
        self.n_parts = n_parts
        self.levels = len(deconv_strides)

        stem_out = trunk_channels[0]
        blocks = [_conv_block(3, stem_out, stride=1)]
        for cin, cout in zip(trunk_channels, trunk_channels[1:]):
            blocks.append(_conv_block(cin, cout, stride=2))
        blocks.append(nn.Sequential(
            nn.Conv2d(trunk_channels[-1], global_channels, 1, bias=False),
            nn.BatchNorm2d(global_channels),
            nn.ReLU(inplace=True)))
        self.trunk = nn.Sequential(*blocks)
        self._trunk_reduction = 2 ** (len(trunk_channels) - 1)

        stages = []
        cin = global_channels
        for stride in deconv_strides:
            stages.append(_deconv_stage(cin, channels, stride))
            cin = channels
        self.deconv_stages = nn.ModuleList(stages)

        self.iuv_head = nn.Conv2d(channels, n_parts + 3, 3, padding=1)

    def _check_input(self, image: Tensor) -> Tensor:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[1] != 3 or image.shape[2] != image.shape[3]:
            raise ConfigurationError(f"expected (B, 3, H, H) images, got {tuple(image.shape)}")
        if image.shape[2] != self.image_size:
            raise ConfigurationError(
                f"encoder built for {self.image_size}px input, got {image.shape[2]}px")
        return image

    def encode(self, image: Tensor) -> FeaturePyramid:
        x = self.trunk(self._check_input(image))
        maps = []
        for stage in self.deconv_stages:
            x = stage(x)
            maps.append(x)
        return FeaturePyramid(maps=maps)

    def encode_global(self, image: Tensor) -> Tensor:
        """Spatial average of the trunk's deepest map: (B, C_g)."""
        return self.global_pool(self.trunk(self._check_input(image)))

    @staticmethod
    def global_pool(fmap: Tensor) -> Tensor:
        return fmap.mean(dim=(-2, -1))

    def predict_iuv(self, pyramid: FeaturePyramid) -> Tensor:
        """Part logits plus U and V channels at the finest resolution: (B, P+3, H, W)."""
        return self.iuv_head(pyramid.finest)

    def forward(self, image: Tensor) -> FeaturePyramid:
        return self.encode(image)
