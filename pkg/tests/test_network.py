"""
Tests for the unified network and its single-task trims.
"""
import numpy as np
import pytest

from achelous.autograd.tensor import Tensor
from achelous.models.achelous_net import AchelousNet
from achelous.models.config import ModelConfig
from core.errors import ConfigError


@pytest.fixture
def inputs(rng):
    points = rng.normal(0, 10, size=(1, 10, 5)).astype(np.float32)
    return {
        "image": Tensor(rng.uniform(size=(1, 3, 64, 64)).astype(np.float32)),
        "rvp": Tensor((rng.uniform(size=(1, 3, 64, 64)) * (rng.uniform(size=(1, 1, 64, 64)) < 0.05)).astype(np.float32)),
        "points": Tensor(points),
        "point_mask": np.ones((1, 10), dtype=bool),
    }


class TestAchelousNet:
    def test_all_tasks(self, tiny_config, seeded, inputs):
        out = AchelousNet(tiny_config)(**inputs)
        assert out.det.level_shapes == [(8, 8), (4, 4), (2, 2)]
        assert out.seg_targets.shape == (1, 9, 64, 64)
        assert out.seg_waterline.shape == (1, 2, 64, 64)
        assert out.pc.shape == (1, 10, 8)

    def test_tag(self, tiny_config, seeded):
        assert AchelousNet(tiny_config).tag == "ST-GDF-PN-S0"

    def test_point_only_trim_has_no_image_path(self, tiny_config, seeded, inputs):
        net = AchelousNet(tiny_config, tasks=("pc",))
        assert not hasattr(net, "encoder") and not hasattr(net, "rcnet")
        out = net(points=inputs["points"], point_mask=inputs["point_mask"])
        assert out.det is None and out.seg_targets is None
        assert out.pc.shape == (1, 10, 8)

    def test_segmentation_trim_skips_radar(self, tiny_config, seeded, inputs):
        net = AchelousNet(tiny_config, tasks=("seg_td",))
        assert not hasattr(net, "rcnet")
        out = net(image=inputs["image"])
        assert out.seg_targets.shape == (1, 9, 64, 64)
        assert out.seg_waterline is None

    def test_backbone_fusion_needs_radar_for_segmentation(self, seeded, inputs):
        config = ModelConfig.for_size("s0", channels=(8, 16, 32, 64), width=16, fusion="backbone_fpn")
        net = AchelousNet(config, tasks=("seg_wl",))
        assert hasattr(net, "rcnet")
        with pytest.raises(ConfigError):
            net(image=inputs["image"])

    def test_trims_are_smaller(self, tiny_config, seeded):
        full = AchelousNet(tiny_config).num_parameters()
        assert all(AchelousNet(tiny_config, tasks=(t,)).num_parameters() < full for t in ("det", "seg_td", "pc"))

    def test_task_order_is_canonical(self, tiny_config, seeded):
        assert AchelousNet(tiny_config, tasks=("pc", "det")).tasks == ("det", "pc")

    @pytest.mark.parametrize("tasks", [(), ("lane",)])
    def test_bad_tasks(self, tiny_config, tasks):
        with pytest.raises(ConfigError):
            AchelousNet(tiny_config, tasks=tasks)

    def test_missing_inputs(self, tiny_config, seeded, inputs):
        net = AchelousNet(tiny_config)
        with pytest.raises(ConfigError):
            net(image=inputs["image"])
        with pytest.raises(ConfigError):
            net(image=inputs["image"], rvp=inputs["rvp"])

    def test_every_parameter_gets_a_gradient(self, tiny_config, seeded, inputs):
        net = AchelousNet(tiny_config)
        out = net(**inputs)
        cls, reg, obj = out.det.flatten()
        loss = cls.sum() + reg.sum() + obj.sum() + out.seg_targets.sum() + out.seg_waterline.sum() + out.pc.sum()
        loss.backward()
        missing = [name for name, p in net.named_parameters() if p.grad is None]
        assert missing == []
