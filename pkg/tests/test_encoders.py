"""
Tests for the image encoder, the radar branch and the dual-FPN neck.
"""
import numpy as np
import pytest

from achelous.autograd import functional as F
from achelous.autograd.gradcheck import check_module_gradients
from achelous.autograd.nn import Conv2d, manual_seed
from achelous.autograd.tensor import Tensor
from achelous.models.config import EncoderConfig, ModelConfig, NeckConfig, PointNetConfig
from achelous.models.encoders import (
    SPP,
    AttentionBlock,
    DWBlock,
    ImageEncoder,
    RadarConv,
    RCBlock,
    RCNet,
)
from achelous.models.neck import CSPBlock, DualFPN, GhostBlock, GhostModule, ShuffleAttention
from core.errors import ConfigError, ShapeError


def random_maps(rng, *shapes):
    return [Tensor(rng.normal(size=shape).astype(np.float32)) for shape in shapes]


# =============================================================================
# Configuration
# =============================================================================

class TestConfig:
    def test_radar_channels_are_a_quarter(self):
        assert EncoderConfig().radar_channels == (6, 12, 24, 44)
        assert ModelConfig.for_size("s2").encoder.radar_channels == (12, 24, 48, 96)

    def test_pointnet_widths_are_a_third(self):
        config = PointNetConfig()
        assert config.feature_widths == (22, 22, 22, 43, 342)
        assert config.seg_widths == (171, 86, 43)

    def test_tag(self):
        assert ModelConfig.for_size("s0").tag == "ST-GDF-PN-S0"
        assert ModelConfig.for_size("s1", neck="cdf", pointnet="pn2").tag == "ST-CDF-PN2-S1"

    def test_unknown_size(self):
        with pytest.raises(ConfigError):
            ModelConfig.for_size("s9")

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            ModelConfig.for_size("s0", width=15)

    def test_fpn_width_follows_size(self):
        assert ModelConfig.for_size("s1").neck.width == 96

    def test_neck_width_must_fit_attention_groups(self):
        with pytest.raises(ValueError):
            NeckConfig(width=18, attention_groups=4)


# =============================================================================
# Image encoder
# =============================================================================

class TestImageEncoder:
    def test_pyramid_shapes(self, tiny_config, seeded, rng):
        encoder = ImageEncoder(tiny_config.encoder)
        (image,) = random_maps(rng, (1, 3, 64, 64))
        shapes = [c.shape for c in encoder(image)]
        assert shapes == [(1, 8, 16, 16), (1, 16, 8, 8), (1, 32, 4, 4), (1, 64, 2, 2)]

    def test_doubling_input_doubles_maps(self, tiny_config, seeded, rng):
        encoder = ImageEncoder(tiny_config.encoder)
        (image,) = random_maps(rng, (1, 3, 128, 128))
        assert [c.shape[2:] for c in encoder(image)] == [(32, 32), (16, 16), (8, 8), (4, 4)]

    def test_rejects_non_rgb(self, tiny_config, seeded):
        with pytest.raises(ShapeError):
            ImageEncoder(tiny_config.encoder)(Tensor(np.zeros((1, 1, 64, 64))))

    def test_rejects_size_not_divisible_by_32(self, tiny_config, seeded):
        with pytest.raises(ShapeError):
            ImageEncoder(tiny_config.encoder)(Tensor(np.zeros((1, 3, 48, 48))))

    def test_stage_depths(self, seeded):
        encoder = ImageEncoder(EncoderConfig())
        stages = [encoder.stage2, encoder.stage3, encoder.stage4, encoder.stage5]
        assert [len(s.blocks) for s in stages] == [2, 2, 6, 4]
        assert isinstance(encoder.stage4.blocks[-1], AttentionBlock)
        assert isinstance(encoder.stage3.blocks[-1], DWBlock)

    def test_spp_shape(self, seeded, rng):
        spp = SPP(8)
        (x,) = random_maps(rng, (1, 8, 5, 5))
        assert spp(x).shape == (1, 8, 5, 5)
        assert spp.pool_features(Tensor(np.zeros((1, 4, 5, 5)))).shape == (1, 16, 5, 5)

    def test_spp_receptive_field(self, seeded):
        impulse = np.zeros((1, 1, 15, 15))
        impulse[0, 0, 7, 7] = 1.0
        pooled = SPP(2).pool_features(Tensor(impulse))
        assert np.count_nonzero(pooled.data[0, 3]) == 13 * 13
        assert np.count_nonzero(pooled.data[0, 1]) == 5 * 5


# =============================================================================
# Radar branch
# =============================================================================

class TestRadarBranch:
    def test_radar_conv_starts_as_pool_then_conv(self, seeded, rng):
        rc = RadarConv(2, 3)
        (x,) = random_maps(rng, (1, 2, 6, 6))
        expected = F.conv2d(rc.pooled(x), rc.weight, padding=1)
        np.testing.assert_allclose(rc(x).data, expected.data, atol=1e-5)

    def test_radar_conv_gradients(self, float64):
        manual_seed(0)
        rc = RadarConv(2, 2)
        rc.offset.weight.data[...] = np.random.default_rng(1).normal(0, 0.2, rc.offset.weight.shape)
        x = Tensor(np.random.default_rng(2).normal(size=(1, 2, 5, 5)))
        report = check_module_gradients(lambda: (rc(x) ** 2).sum(), rc, samples=12)
        assert report.passed, report

    def test_rc_block_residual(self, seeded, rng):
        block = RCBlock(4, 4).eval()
        (x,) = random_maps(rng, (1, 4, 6, 6))
        assert block.residual
        np.testing.assert_allclose(block(x).data, (x + block.branch(x)).data, atol=1e-6)

    def test_rc_block_width_change(self, seeded, rng):
        block = RCBlock(4, 8)
        (x,) = random_maps(rng, (1, 4, 6, 6))
        assert not block.residual
        assert block(x).shape == (1, 8, 6, 6)

    def test_plain_conv_variant(self, seeded):
        block = RCBlock(4, 4, radar_conv=False)
        assert isinstance(block.spatial, Conv2d)
        assert isinstance(RCBlock(4, 4).spatial, RadarConv)

    def test_rcnet_maps(self, seeded, rng):
        net = RCNet(EncoderConfig())
        (rvp,) = random_maps(rng, (1, 3, 64, 64))
        assert [m.shape for m in net(rvp)] == [(1, 12, 8, 8), (1, 24, 4, 4), (1, 44, 2, 2)]

    def test_rcnet_rejects_wrong_channels(self, seeded):
        with pytest.raises(ShapeError):
            RCNet(EncoderConfig())(Tensor(np.zeros((1, 2, 64, 64))))


# =============================================================================
# Neck
# =============================================================================

class TestNeckBlocks:
    def test_ghost_module(self, seeded, rng):
        (x,) = random_maps(rng, (1, 4, 5, 5))
        assert GhostModule(4, 8)(x).shape == (1, 8, 5, 5)
        assert GhostBlock(4, 6)(x).shape == (1, 6, 5, 5)

    def test_ghost_module_needs_even_width(self, seeded):
        with pytest.raises(ShapeError):
            GhostModule(4, 7)

    def test_csp_block(self, seeded, rng):
        block = CSPBlock(8, 16, n=2)
        (x,) = random_maps(rng, (1, 8, 4, 4))
        assert len(block.bottlenecks) == 2
        assert block(x).shape == (1, 16, 4, 4)

    def test_shuffle_attention_at_init(self, seeded, rng):
        attention = ShuffleAttention(16, 4)
        (x,) = random_maps(rng, (2, 16, 3, 3))
        gate = 1.0 / (1.0 + np.exp(-1.0))
        expected = F.channel_shuffle(Tensor(x.data * gate), 4)
        np.testing.assert_allclose(attention(x).data, expected.data, atol=1e-6)

    def test_shuffle_attention_channels(self, seeded):
        with pytest.raises(ShapeError):
            ShuffleAttention(12, 4)


class TestDualFPN:
    def pyramid(self, rng, channels, size=64):
        s = size // 4
        return random_maps(rng, *[(1, c, s >> i, s >> i) for i, c in enumerate(channels)])

    def test_s0_shapes(self, seeded, rng):
        config = ModelConfig.for_size("s0")
        neck = DualFPN(config.encoder, config.neck)
        radar = random_maps(rng, (1, 12, 8, 8), (1, 24, 4, 4), (1, 44, 2, 2))
        out = neck(self.pyramid(rng, config.encoder.channels), radar)
        assert out.p3.shape == (1, 64 + 12, 8, 8)
        assert out.p4.shape == (1, 64 + 24, 4, 4)
        assert out.p5.shape == (1, 64 + 44, 2, 2)
        assert out.stream_a.shape == out.stream_b.shape == (1, 64, 16, 16)

    def test_segmentation_only(self, tiny_config, seeded, rng):
        neck = DualFPN(tiny_config.encoder, tiny_config.neck, streams=("b",))
        out = neck(self.pyramid(rng, tiny_config.encoder.channels), None, detection=False)
        assert out.p3 is None and out.stream_a is None
        assert out.stream_b.shape == (1, 16, 16, 16)

    def test_detection_needs_radar(self, tiny_config, seeded, rng):
        neck = DualFPN(tiny_config.encoder, tiny_config.neck)
        with pytest.raises(ShapeError):
            neck(self.pyramid(rng, tiny_config.encoder.channels), None)

    def test_misaligned_radar(self, tiny_config, seeded, rng):
        neck = DualFPN(tiny_config.encoder, tiny_config.neck)
        radar = random_maps(rng, (1, 2, 4, 4), (1, 4, 2, 2), (1, 16, 1, 1))
        with pytest.raises(ShapeError):
            neck(self.pyramid(rng, tiny_config.encoder.channels), radar)

    def test_backbone_fusion_and_csp(self, seeded, rng):
        config = ModelConfig.for_size("s0", channels=(8, 16, 32, 64), width=16, fusion="backbone_fpn", neck="cdf")
        neck = DualFPN(config.encoder, config.neck)
        assert isinstance(neck.block4, CSPBlock)
        assert len(neck.backbone_fusion) == 3
        radar = random_maps(rng, (1, 4, 8, 8), (1, 8, 4, 4), (1, 16, 2, 2))
        out = neck(self.pyramid(rng, config.encoder.channels), radar)
        assert [p.shape[1] for p in out.detection_levels] == [20, 24, 32]
