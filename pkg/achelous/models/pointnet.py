"""Point-cloud segmentation branches at one third of the reference widths.

Both networks take padded clouds [N,P,5] of (x, y, z, velocity, power) with
a validity mask [N,P] and return per-point logits [N,P,classes]. Padded
points never reach a pooling window and their logits are zero.
"""
from typing import List, Sequence

import numpy as np

from achelous.autograd import functional as F
from achelous.autograd.nn import Linear, Module
from achelous.autograd.tensor import Tensor
from achelous.models.config import PointNetConfig
from core.errors import ShapeError


class SharedMLP(Module):
    """Per-point Linear + SiLU layers."""

    def __init__(self, in_features: int, widths: Sequence[int]):
        super().__init__()
        self.layers = []
        for width in widths:
            self.layers.append(Linear(in_features, width))
            in_features = width
        self.out_features = in_features

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x).silu()
        return x


def _check_mask(points: Tensor, mask: np.ndarray) -> np.ndarray:
    if points.ndim != 3:
        raise ShapeError(f"point clouds must be [N,P,F], got {points.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != points.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match clouds {points.shape[:2]}")
    empty = np.flatnonzero(~mask.any(axis=1))
    if len(empty):
        raise ShapeError(f"clouds {empty.tolist()} contain only padding")
    return mask


class PointNetSeg(Module):
    def __init__(self, config: PointNetConfig):
        super().__init__()
        self.config = config
        f1, f2, f3, f4, f5 = config.feature_widths
        s1, s2, s3 = config.seg_widths
        self.local = SharedMLP(config.in_features, (f1, f2))
        self.lift = SharedMLP(f2, (f3, f4, f5))
        self.seg = SharedMLP(f2 + f5, (s1, s2, s3))
        self.classifier = Linear(s3, config.num_classes)
        self.scale = np.asarray(config.input_scale)

    def global_feature(self, local: Tensor, mask: np.ndarray) -> Tensor:
        """Masked max over points: [N,P,C] -> [N,C]."""
        features = self.lift(local)
        penalty = np.where(mask, 0.0, -1e9).astype(features.dtype)[..., None]
        return F.broadcast_add(features, penalty).max(axis=1)

    def forward(self, points: Tensor, mask: np.ndarray) -> Tensor:
        mask = _check_mask(points, mask)
        n, p, _ = points.shape
        local = self.local(points * (1.0 / self.scale))
        pooled = self.global_feature(local, mask)
        spread = pooled.reshape(n, 1, -1) * Tensor(np.ones((1, p, 1), dtype=pooled.dtype))
        logits = self.classifier(self.seg(F.concat([local, spread], axis=2)))
        return logits * Tensor(mask[..., None].astype(logits.dtype))


def farthest_point_sample(xyz: np.ndarray, count: int) -> np.ndarray:
    """Greedy farthest-point sampling seeded at point 0; ties go to the lower index."""
    count = min(count, len(xyz))
    chosen = np.zeros(count, dtype=np.int64)
    distance = np.full(len(xyz), np.inf)
    current = 0
    for i in range(count):
        chosen[i] = current
        distance = np.minimum(distance, ((xyz - xyz[current]) ** 2).sum(axis=1))
        current = int(distance.argmax())
    return chosen


def ball_query(xyz: np.ndarray, centers: np.ndarray, radius: float, samples: int) -> np.ndarray:
    """Up to ``samples`` neighbour indices within ``radius`` per center, padded with the first hit."""
    d2 = ((centers[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2)
    groups = np.zeros((len(centers), samples), dtype=np.int64)
    for i, row in enumerate(d2):
        hits = np.flatnonzero(row <= radius * radius)
        if len(hits) == 0:
            hits = np.array([int(row.argmin())])
        hits = hits[:samples]
        groups[i, : len(hits)] = hits
        groups[i, len(hits):] = hits[0]
    return groups


def interpolation_weights(targets: np.ndarray, sources: np.ndarray, k: int = 3):
    """Indices [T,k] of the nearest sources and normalized inverse-distance weights [T,k]."""
    k = min(k, len(sources))
    d2 = ((targets[:, None, :] - sources[None, :, :]) ** 2).sum(axis=2)
    index = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist = np.sqrt(np.take_along_axis(d2, index, axis=1))
    weight = 1.0 / (dist + 1e-8)
    return index, weight / weight.sum(axis=1, keepdims=True)


class SetAbstraction(Module):
    def __init__(self, in_features: int, widths: Sequence[int], points: int, radius: float, samples: int):
        super().__init__()
        self.points = points
        self.radius = radius
        self.samples = samples
        self.mlp = SharedMLP(in_features + 3, widths)

    def forward(self, xyz: np.ndarray, features: Tensor):
        centers = farthest_point_sample(xyz, self.points)
        groups = ball_query(xyz, xyz[centers], self.radius, self.samples)
        offsets = Tensor((xyz[groups] - xyz[centers][:, None, :]).astype(features.dtype))
        grouped = F.concat([offsets, features[groups]], axis=2)
        return xyz[centers], self.mlp(grouped).max(axis=1)


class FeaturePropagation(Module):
    def __init__(self, in_features: int, widths: Sequence[int]):
        super().__init__()
        self.mlp = SharedMLP(in_features, widths)

    def forward(self, xyz: np.ndarray, source_xyz: np.ndarray, skip: Tensor, source: Tensor) -> Tensor:
        index, weight = interpolation_weights(xyz, source_xyz)
        interpolated = (source[index] * Tensor(weight[..., None].astype(source.dtype))).sum(axis=1)
        return self.mlp(F.concat([interpolated, skip], axis=1))


class PointNet2Seg(Module):
    """Two set-abstraction and two feature-propagation levels, run per cloud on its valid points."""

    def __init__(self, config: PointNetConfig):
        super().__init__()
        self.config = config
        (a1, a2), (fp2, fp1) = config.sa_widths, config.fp_widths
        self.sa1 = SetAbstraction(config.in_features, a1, config.sa_points[0], config.sa_radius[0], config.sa_samples[0])
        self.sa2 = SetAbstraction(a1[-1], a2, config.sa_points[1], config.sa_radius[1], config.sa_samples[1])
        self.fp2 = FeaturePropagation(a2[-1] + a1[-1], fp2)
        self.fp1 = FeaturePropagation(fp2[-1] + config.in_features, fp1)
        self.classifier = Linear(fp1[-1], config.num_classes)
        self.scale = np.asarray(config.input_scale)

    def _single(self, cloud: Tensor) -> Tensor:
        features = cloud * (1.0 / self.scale)
        xyz = features.data[:, :3].astype(np.float64)
        xyz1, l1 = self.sa1(xyz, features)
        xyz2, l2 = self.sa2(xyz1, l1)
        l1 = self.fp2(xyz1, xyz2, l1, l2)
        l0 = self.fp1(xyz, xyz1, features, l1)
        return self.classifier(l0)

    def forward(self, points: Tensor, mask: np.ndarray) -> Tensor:
        mask = _check_mask(points, mask)
        n, p, _ = points.shape
        outputs: List[Tensor] = []
        for b in range(n):
            valid = np.flatnonzero(mask[b])
            logits = self._single(points[b][valid])
            padded = F.concat([logits, Tensor(np.zeros((1, logits.shape[1]), dtype=logits.dtype))], axis=0)
            slot = np.full(p, len(valid), dtype=np.int64)
            slot[valid] = np.arange(len(valid))
            outputs.append(padded[slot].reshape(1, p, -1))
        return F.concat(outputs, axis=0)


def build_point_network(config: PointNetConfig) -> Module:
    return PointNet2Seg(config) if config.kind == "pn2" else PointNetSeg(config)
