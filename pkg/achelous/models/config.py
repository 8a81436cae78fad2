"""Architecture configuration for the encoder, neck, heads and point-cloud branch."""
import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError

STAGE_DEPTHS = (2, 2, 6, 4)
STAGE_CHANNELS = {
    "s0": (24, 48, 96, 176),
    "s1": (32, 64, 128, 256),
    "s2": (48, 96, 192, 384),
}
FPN_WIDTHS = {"s0": 64, "s1": 96, "s2": 128}

# Widths of the reference point network before the one-third reduction.
POINTNET_FEATURE_WIDTHS = (64, 64, 64, 128, 1024)
POINTNET_SEG_WIDTHS = (512, 256, 128)
POINTNET2_SA_WIDTHS = ((64, 64, 128), (128, 128, 256))
POINTNET2_FP_WIDTHS = ((256, 256), (128, 128, 128))

DETECTION_CLASSES = ("pier", "buoy", "sailor", "ship", "boat", "vessel", "kayak")


def quarter(channels: int) -> int:
    return math.ceil(channels / 4)


def third(channels: int) -> int:
    return math.ceil(channels / 3)


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    size: Literal["s0", "s1", "s2"] = "s0"
    channels: Tuple[int, int, int, int] = STAGE_CHANNELS["s0"]
    depths: Tuple[int, int, int, int] = STAGE_DEPTHS
    attention_stages: Tuple[int, ...] = (4, 5)
    attention_heads: int = Field(4, gt=0)
    radar_conv: Literal["radar_conv", "plain_conv"] = "radar_conv"

    @model_validator(mode="after")
    def _check(self):
        if tuple(self.depths) != STAGE_DEPTHS:
            raise ValueError(f"stage depths must be {STAGE_DEPTHS}, got {self.depths}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"stage channels must be strictly increasing, got {self.channels}")
        for stage in self.attention_stages:
            if stage not in (4, 5):
                raise ValueError(f"attention is only supported in stages 4 and 5, got {stage}")
            if self.channels[stage - 2] % self.attention_heads:
                raise ValueError(
                    f"stage {stage} width {self.channels[stage - 2]} not divisible by "
                    f"{self.attention_heads} attention heads"
                )
        return self

    @property
    def stem_channels(self) -> int:
        return math.ceil(self.channels[0] / 2)

    @property
    def radar_channels(self) -> Tuple[int, int, int, int]:
        """RCNet widths for C2..C5: a quarter of the image encoder, rounded up."""
        return tuple(quarter(c) for c in self.channels)


class NeckConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Literal["gdf", "cdf"] = "gdf"
    width: int = Field(64, gt=0)
    fusion: Literal["fpn", "backbone_fpn"] = "fpn"
    attention_groups: int = Field(4, gt=0)
    csp_bottlenecks: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.width % 2:
            raise ValueError(f"neck width must be even, got {self.width}")
        if (2 * self.width) % (2 * self.attention_groups):
            raise ValueError(
                f"shuffle attention input width {2 * self.width} not divisible by 2x{self.attention_groups} groups"
            )
        return self


class HeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_classes: int = len(DETECTION_CLASSES)
    width: int = Field(64, gt=0)
    depthwise: bool = True
    strides: Tuple[int, int, int] = (8, 16, 32)
    seg_classes_targets: int = 9
    seg_classes_waterline: int = 2
    prior_prob: float = Field(0.01, gt=0, lt=1)


class PointNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["pn", "pn2"] = "pn"
    in_features: int = 5
    num_classes: int = 8
    reduction: int = Field(3, gt=0)
    sa_points: Tuple[int, int] = (32, 8)
    sa_radius: Tuple[float, float] = (0.2, 0.4)
    sa_samples: Tuple[int, int] = (16, 16)
    # Fixed scale applied to (x, y, z, velocity, power) before the first layer.
    input_scale: Tuple[float, float, float, float, float] = (50.0, 50.0, 50.0, 20.0, 60.0)

    def _reduce(self, widths):
        return tuple(math.ceil(w / self.reduction) for w in widths)

    @property
    def feature_widths(self) -> Tuple[int, ...]:
        return self._reduce(POINTNET_FEATURE_WIDTHS)

    @property
    def seg_widths(self) -> Tuple[int, ...]:
        return self._reduce(POINTNET_SEG_WIDTHS)

    @property
    def sa_widths(self):
        return tuple(self._reduce(w) for w in POINTNET2_SA_WIDTHS)

    @property
    def fp_widths(self):
        return tuple(self._reduce(w) for w in POINTNET2_FP_WIDTHS)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    encoder: EncoderConfig = EncoderConfig()
    neck: NeckConfig = NeckConfig()
    head: HeadConfig = HeadConfig()
    pointnet: PointNetConfig = PointNetConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.head.width != self.neck.width:
            raise ValueError(f"head width {self.head.width} must equal neck width {self.neck.width}")
        return self

    @property
    def tag(self) -> str:
        """Model tag such as ``ST-GDF-PN-S0`` (ST: stand-in encoder)."""
        return f"ST-{self.neck.variant.upper()}-{self.pointnet.kind.upper()}-{self.encoder.size.upper()}"

    @classmethod
    def for_size(
        cls,
        size: str = "s0",
        neck: str = "gdf",
        fusion: str = "fpn",
        radar_conv: str = "radar_conv",
        pointnet: str = "pn",
        channels: Optional[Tuple[int, int, int, int]] = None,
        width: Optional[int] = None,
        attention_heads: int = 4,
        depthwise_head: bool = True,
    ) -> "ModelConfig":
        """Build the default configuration of a size tag, with optional width overrides."""
        size = size.lower()
        if size not in STAGE_CHANNELS:
            raise ConfigError(f"unknown model size '{size}', expected one of {sorted(STAGE_CHANNELS)}")
        width = width or FPN_WIDTHS[size]
        try:
            return cls(
                encoder=EncoderConfig(
                    size=size,
                    channels=channels or STAGE_CHANNELS[size],
                    attention_heads=attention_heads,
                    radar_conv=radar_conv,
                ),
                neck=NeckConfig(variant=neck, width=width, fusion=fusion),
                head=HeadConfig(width=width, depthwise=depthwise_head),
                pointnet=PointNetConfig(kind=pointnet),
            )
        except ValidationError as e:
            raise ConfigError(f"invalid model config: {e.errors()[0]['msg']}") from e
