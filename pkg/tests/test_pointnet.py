import numpy as np
import pytest

from achelous.autograd.tensor import Tensor
from achelous.models.config import PointNetConfig
from achelous.models.pointnet import (
    PointNet2Seg,
    PointNetSeg,
    ball_query,
    build_point_network,
    farthest_point_sample,
    interpolation_weights,
)
from core.errors import ShapeError


@pytest.fixture
def cloud(rng):
    points = rng.normal(size=(1, 12, 5)) * np.array([10, 10, 10, 5, 20]) + np.array([0, 0, 30, 0, 30])
    return points.astype(np.float32)


class TestPointNet:
    def test_output_shape(self, seeded, cloud):
        net = PointNetSeg(PointNetConfig())
        assert net(Tensor(cloud), np.ones((1, 12), dtype=bool)).shape == (1, 12, 8)

    def test_permutation_equivariance(self, seeded, cloud, rng):
        net = PointNetSeg(PointNetConfig())
        mask = np.ones((1, 12), dtype=bool)
        perm = rng.permutation(12)
        base = net(Tensor(cloud), mask).data
        permuted = net(Tensor(cloud[:, perm]), mask).data
        np.testing.assert_allclose(permuted, base[:, perm], atol=1e-5)

    def test_padding_does_not_leak(self, seeded, cloud, rng):
        net = PointNetSeg(PointNetConfig())
        padded = np.concatenate([cloud, rng.normal(size=(1, 4, 5)).astype(np.float32) * 100], axis=1)
        mask = np.zeros((1, 16), dtype=bool)
        mask[:, :12] = True
        out = net(Tensor(padded), mask).data
        np.testing.assert_allclose(out[:, :12], net(Tensor(cloud), np.ones((1, 12), dtype=bool)).data, atol=1e-5)
        assert not out[:, 12:].any()

    def test_all_padding_rejected(self, seeded, cloud):
        with pytest.raises(ShapeError):
            PointNetSeg(PointNetConfig())(Tensor(cloud), np.zeros((1, 12), dtype=bool))

    def test_mask_shape_checked(self, seeded, cloud):
        with pytest.raises(ShapeError):
            PointNetSeg(PointNetConfig())(Tensor(cloud), np.ones((1, 11), dtype=bool))

    def test_gradients_reach_every_layer(self, seeded, cloud):
        net = PointNetSeg(PointNetConfig())
        net(Tensor(cloud), np.ones((1, 12), dtype=bool)).sum().backward()
        assert all(p.grad is not None for p in net.parameters())


class TestPointNet2:
    def test_farthest_point_sample(self):
        xyz = np.array([[0.0, 0, 0], [1, 0, 0], [10, 0, 0], [4, 0, 0]])
        np.testing.assert_array_equal(farthest_point_sample(xyz, 3), [0, 2, 3])
        assert len(farthest_point_sample(xyz, 10)) == 4

    def test_ball_query_pads_with_first_hit(self):
        xyz = np.array([[0.0, 0, 0], [0.1, 0, 0], [5, 0, 0]])
        groups = ball_query(xyz, xyz[:1], radius=0.5, samples=4)
        np.testing.assert_array_equal(groups, [[0, 1, 0, 0]])

    def test_ball_query_falls_back_to_nearest(self):
        xyz = np.array([[0.0, 0, 0], [5, 0, 0]])
        groups = ball_query(xyz, np.array([[4.0, 0, 0]]), radius=0.1, samples=2)
        np.testing.assert_array_equal(groups, [[1, 1]])

    def test_interpolation_weights(self, rng):
        index, weight = interpolation_weights(rng.normal(size=(5, 3)), rng.normal(size=(4, 3)))
        assert index.shape == weight.shape == (5, 3)
        np.testing.assert_allclose(weight.sum(axis=1), 1.0)

    def test_output_and_padding(self, seeded, rng):
        net = build_point_network(PointNetConfig(kind="pn2"))
        assert isinstance(net, PointNet2Seg)
        points = Tensor((rng.normal(size=(2, 40, 5)) * 10).astype(np.float32))
        mask = np.ones((2, 40), dtype=bool)
        mask[1, 30:] = False
        out = net(points, mask)
        assert out.shape == (2, 40, 8)
        assert not out.data[1, 30:].any()

    def test_backward(self, seeded, rng):
        net = PointNet2Seg(PointNetConfig(kind="pn2"))
        points = Tensor((rng.normal(size=(1, 20, 5)) * 10).astype(np.float32))
        net(points, np.ones((1, 20), dtype=bool)).sum().backward()
        assert net.classifier.weight.grad is not None
