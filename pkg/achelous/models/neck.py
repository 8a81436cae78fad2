"""Dual-FPN neck fusing the image pyramid with radar features.

P5..P3 are computed once and shared by detection and both segmentation
streams; the stride-4 map is computed per stream, each behind its own
shuffle attention.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from achelous.autograd import functional as F
from achelous.autograd.nn import Conv2d, ConvBNAct, Module, Parameter
from achelous.autograd.tensor import Tensor
from achelous.models.config import EncoderConfig, NeckConfig
from core.errors import ShapeError


class GhostModule(Module):
    """Half the outputs from a 1x1 conv, the other half from a cheap depthwise 3x3 on them."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        if out_channels % 2:
            raise ShapeError(f"ghost module needs an even output width, got {out_channels}")
        half = out_channels // 2
        self.primary = ConvBNAct(in_channels, half, 1)
        self.cheap = Conv2d(half, half, 3, groups=half)

    def forward(self, x: Tensor) -> Tensor:
        y = self.primary(x)
        return F.concat([y, self.cheap(y)], axis=1)


class GhostBlock(Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.ghost1 = GhostModule(in_channels, out_channels)
        self.ghost2 = GhostModule(out_channels, out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.ghost2(self.ghost1(x))


class Bottleneck(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.cv1 = ConvBNAct(channels, channels, 1)
        self.cv2 = ConvBNAct(channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.cv2(self.cv1(x))


class CSPBlock(Module):
    """Split into two halves by 1x1 convs, run one through ``n`` bottlenecks, concat and fuse."""

    def __init__(self, in_channels: int, out_channels: int, n: int = 1):
        super().__init__()
        half = out_channels // 2
        self.cv1 = ConvBNAct(in_channels, half, 1)
        self.cv2 = ConvBNAct(in_channels, half, 1)
        self.bottlenecks = [Bottleneck(half) for _ in range(n)]
        self.cv3 = ConvBNAct(2 * half, out_channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        a = self.cv1(x)
        for bottleneck in self.bottlenecks:
            a = bottleneck(a)
        return self.cv3(F.concat([a, self.cv2(x)], axis=1))


class ShuffleAttention(Module):
    """Grouped channel and spatial gating followed by a channel shuffle."""

    def __init__(self, channels: int, groups: int = 4):
        super().__init__()
        if channels % (2 * groups):
            raise ShapeError(f"shuffle attention: {channels} channels not divisible by 2x{groups}")
        self.groups = groups
        half = channels // (2 * groups)
        shape = (1, half, 1, 1)
        self.channel_scale = Parameter(np.zeros(shape))
        self.channel_bias = Parameter(np.ones(shape))
        self.spatial_scale = Parameter(np.zeros(shape))
        self.spatial_bias = Parameter(np.ones(shape))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c % (2 * self.groups):
            raise ShapeError(f"shuffle attention: {c} channels not divisible by 2x{self.groups}")
        half = c // (2 * self.groups)
        grouped = x.reshape(n * self.groups, 2 * half, h, w)
        x_channel, x_spatial = F.split(grouped, [half, half], axis=1)
        gate_c = (F.global_avg_pool(x_channel) * self.channel_scale + self.channel_bias).sigmoid()
        gate_s = (F.instance_norm(x_spatial) * self.spatial_scale + self.spatial_bias).sigmoid()
        out = F.concat([x_channel * gate_c, x_spatial * gate_s], axis=1).reshape(n, c, h, w)
        return F.channel_shuffle(out, self.groups)


def fusion_block(variant: str, in_channels: int, out_channels: int, csp_bottlenecks: int) -> Module:
    if variant == "gdf":
        return GhostBlock(in_channels, out_channels)
    return CSPBlock(in_channels, out_channels, csp_bottlenecks)


@dataclass
class DualFPNOutput:
    p3: Optional[Tensor]
    p4: Optional[Tensor]
    p5: Optional[Tensor]
    stream_a: Optional[Tensor]
    stream_b: Optional[Tensor]

    @property
    def detection_levels(self) -> List[Tensor]:
        return [self.p3, self.p4, self.p5]


class DualFPN(Module):
    def __init__(self, encoder: EncoderConfig, config: NeckConfig, streams: Sequence[str] = ("a", "b")):
        super().__init__()
        self.config = config
        self.streams = tuple(streams)
        c2, c3, c4, c5 = encoder.channels
        _, r3, r4, r5 = encoder.radar_channels
        w = config.width

        def block(cin, cout):
            return fusion_block(config.variant, cin, cout, config.csp_bottlenecks)

        if config.fusion == "backbone_fpn":
            self.backbone_fusion = [
                ConvBNAct(c + r, c, 3) for c, r in ((c3, r3), (c4, r4), (c5, r5))
            ]
        self.lateral5 = ConvBNAct(c5, w, 1)
        self.lateral4 = ConvBNAct(c4, w, 1)
        self.block4 = block(2 * w, w)
        self.lateral3 = ConvBNAct(c3, w, 1)
        self.block3 = block(2 * w, w)
        if "a" in self.streams:
            self.lateral2_a = ConvBNAct(c2, w, 1)
            self.attention_a = ShuffleAttention(2 * w, config.attention_groups)
            self.block2_a = block(2 * w, w)
        if "b" in self.streams:
            self.lateral2_b = ConvBNAct(c2, w, 1)
            self.attention_b = ShuffleAttention(2 * w, config.attention_groups)
            self.block2_b = block(2 * w, w)

    def _stream(self, name: str, c2: Tensor, p3: Tensor) -> Tensor:
        lateral = getattr(self, f"lateral2_{name}")
        attention = getattr(self, f"attention_{name}")
        fuse = getattr(self, f"block2_{name}")
        return fuse(attention(F.concat([lateral(c2), F.upsample2x(p3)], axis=1)))

    def forward(
        self,
        pyramid: Sequence[Tensor],
        radar: Optional[Sequence[Tensor]] = None,
        detection: bool = True,
    ) -> DualFPNOutput:
        c2, c3, c4, c5 = pyramid
        for fine, coarse in ((c2, c3), (c3, c4), (c4, c5)):
            if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
                raise ShapeError(f"pyramid levels {fine.shape} and {coarse.shape} are not stride-aligned")
        if radar is not None:
            for image_map, radar_map in zip((c3, c4, c5), radar):
                if image_map.shape[2:] != radar_map.shape[2:]:
                    raise ShapeError(
                        f"radar map {radar_map.shape} not aligned with image map {image_map.shape}"
                    )
        needs_radar = detection or self.config.fusion == "backbone_fpn"
        if needs_radar and radar is None:
            raise ShapeError("radar maps are required for detection and backbone fusion")

        if self.config.fusion == "backbone_fpn":
            c3, c4, c5 = [
                fuse(F.concat([c, r], axis=1)) for fuse, c, r in zip(self.backbone_fusion, (c3, c4, c5), radar)
            ]

        p5 = self.lateral5(c5)
        p4 = self.block4(F.concat([self.lateral4(c4), F.upsample2x(p5)], axis=1))
        p3 = self.block3(F.concat([self.lateral3(c3), F.upsample2x(p4)], axis=1))

        stream_a = self._stream("a", c2, p3) if "a" in self.streams else None
        stream_b = self._stream("b", c2, p3) if "b" in self.streams else None

        if not detection:
            return DualFPNOutput(None, None, None, stream_a, stream_b)
        r3, r4, r5 = radar
        return DualFPNOutput(
            F.concat([p3, r3], axis=1),
            F.concat([p4, r4], axis=1),
            F.concat([p5, r5], axis=1),
            stream_a,
            stream_b,
        )
