"""Image encoder with SPP, and the radar branch (RadarConv, RCBlock, RCNet)."""
from typing import List, Sequence

from achelous.autograd import functional as F
from achelous.autograd.nn import (
    BatchNorm2d,
    Conv2d,
    ConvBNAct,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Sequential,
)
from achelous.autograd.tensor import Tensor
from achelous.models.config import EncoderConfig
from core.errors import ShapeError


class DWBlock(Module):
    """Depthwise 3x3, pointwise expand x2, pointwise project, residual."""

    def __init__(self, channels: int, expansion: int = 2):
        super().__init__()
        self.dw = ConvBNAct(channels, channels, 3, groups=channels)
        self.expand = ConvBNAct(channels, channels * expansion, 1)
        self.project = ConvBNAct(channels * expansion, channels, 1, act=False)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.project(self.expand(self.dw(x)))


class AttentionBlock(Module):
    """Pre-norm transformer block over the flattened feature map."""

    def __init__(self, channels: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = LayerNorm(channels)
        self.attn = MultiHeadSelfAttention(channels, heads)
        self.norm2 = LayerNorm(channels)
        self.fc1 = Linear(channels, channels * mlp_ratio)
        self.fc2 = Linear(channels * mlp_ratio, channels)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = x.reshape(n, c, h * w).transpose(0, 2, 1)
        tokens = tokens + self.attn(self.norm1(tokens))
        tokens = tokens + self.fc2(self.fc1(self.norm2(tokens)).silu())
        return tokens.transpose(0, 2, 1).reshape(n, c, h, w)


class Stage(Module):
    def __init__(self, in_channels: int, out_channels: int, depth: int, attention_heads: int = 0):
        super().__init__()
        self.down = ConvBNAct(in_channels, out_channels, 3, stride=2)
        blocks: List[Module] = [DWBlock(out_channels) for _ in range(depth - (1 if attention_heads else 0))]
        if attention_heads:
            blocks.append(AttentionBlock(out_channels, attention_heads))
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


class SPP(Module):
    """1x1 reduce, parallel stride-1 max pools, concat with identity, 1x1 fuse."""

    def __init__(self, channels: int, kernels: Sequence[int] = (5, 9, 13)):
        super().__init__()
        hidden = channels // 2
        self.kernels = tuple(kernels)
        self.reduce = ConvBNAct(channels, hidden, 1)
        self.fuse = ConvBNAct(hidden * (len(self.kernels) + 1), channels, 1)

    def pool_features(self, x: Tensor) -> Tensor:
        return F.concat([x] + [F.pool2d(x, "max", k, 1, k // 2) for k in self.kernels], axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.fuse(self.pool_features(self.reduce(x)))


class ImageEncoder(Module):
    """Stem (stride 2) and four downsampling stages; returns [C2, C3, C4, C5], C5 after SPP."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c2, c3, c4, c5 = config.channels
        d2, d3, d4, d5 = config.depths
        heads = config.attention_heads
        self.stem = ConvBNAct(3, config.stem_channels, 3, stride=2)
        self.stage2 = Stage(config.stem_channels, c2, d2, heads if 2 in config.attention_stages else 0)
        self.stage3 = Stage(c2, c3, d3, heads if 3 in config.attention_stages else 0)
        self.stage4 = Stage(c3, c4, d4, heads if 4 in config.attention_stages else 0)
        self.stage5 = Stage(c4, c5, d5, heads if 5 in config.attention_stages else 0)
        self.spp = SPP(c5)

    def forward(self, image: Tensor) -> List[Tensor]:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"image must be [N,3,H,W], got {image.shape}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise ShapeError(f"image size {image.shape[2]}x{image.shape[3]} must be divisible by 32")
        x = self.stem(image)
        c2 = self.stage2(x)
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        c5 = self.spp(self.stage5(c4))
        return [c2, c3, c4, c5]


class RadarConv(Module):
    """3x3 average pool, then a deformable 3x3 conv whose offsets come from a zero-initialized conv."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.offset = Conv2d(in_channels, 18, 3)
        self.offset.weight.data[...] = 0
        self.offset.bias.data[...] = 0
        self.weight = Conv2d(in_channels, out_channels, 3, bias=False).weight

    def pooled(self, x: Tensor) -> Tensor:
        return F.pool2d(x, "avg", 3, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        x = self.pooled(x)
        return F.deformable_conv2d(x, self.weight, self.offset(x))


class NormAct(Module):
    """Batch norm and SiLU after a convolution owned by another module."""

    def __init__(self, channels: int):
        super().__init__()
        self.bn = BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(x).silu()


class RCBlock(Module):
    """1x1 expand, RadarConv (or a plain 3x3 conv), 1x1 project; residual when widths match."""

    def __init__(self, in_channels: int, out_channels: int, expansion: int = 2, radar_conv: bool = True):
        super().__init__()
        hidden = in_channels * expansion
        self.expand = ConvBNAct(in_channels, hidden, 1)
        self.spatial = RadarConv(hidden, hidden) if radar_conv else Conv2d(hidden, hidden, 3, bias=False)
        self.spatial_bn = NormAct(hidden)
        self.project = ConvBNAct(hidden, out_channels, 1, act=False)
        self.residual = in_channels == out_channels

    def branch(self, x: Tensor) -> Tensor:
        return self.project(self.spatial_bn(self.spatial(self.expand(x))))

    def forward(self, x: Tensor) -> Tensor:
        out = self.branch(x)
        return x + out if self.residual else out


class RCNet(Module):
    """Quarter-width radar branch emitting features at strides 8, 16 and 32."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        r2, r3, r4, r5 = config.radar_channels
        use_radar_conv = config.radar_conv == "radar_conv"
        # Patchify stem: a 4x4 stride-4 kernel sees every pixel of the sparse map.
        self.stem = Sequential(Conv2d(3, r2, 4, stride=4, padding=0, bias=False), NormAct(r2))
        self.stages = [
            Sequential(ConvBNAct(cin, cout, 3, stride=2), RCBlock(cout, cout, radar_conv=use_radar_conv))
            for cin, cout in ((r2, r3), (r3, r4), (r4, r5))
        ]

    def forward(self, rvp: Tensor) -> List[Tensor]:
        if rvp.ndim != 4 or rvp.shape[1] != 3:
            raise ShapeError(f"RVP map must be [N,3,H,W], got {rvp.shape}")
        x = self.stem(rvp)
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs
