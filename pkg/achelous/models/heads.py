"""Decoupled anchor-free detection head, segmentation heads and box decoding."""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from achelous.autograd import functional as F
from achelous.autograd.nn import Conv2d, ConvBNAct, DWSeparable, Module
from achelous.autograd.tensor import Tensor
from achelous.models.config import HeadConfig


@dataclass
class DetPrediction:
    """Raw head outputs per level: cls [N,C,H,W], reg [N,4,H,W] (dx, dy, log w, log h), obj [N,1,H,W]."""

    cls: List[Tensor]
    reg: List[Tensor]
    obj: List[Tensor]
    strides: Tuple[int, ...]

    @property
    def level_shapes(self) -> List[Tuple[int, int]]:
        return [tuple(c.shape[2:]) for c in self.cls]

    def flatten(self) -> Tuple[Tensor, Tensor, Tensor]:
        """Anchor-major views: cls [N,A,C], reg [N,A,4], obj [N,A]; levels in stride order, cells row-major."""

        def cat(maps: Sequence[Tensor]) -> Tensor:
            parts = [m.reshape(m.shape[0], m.shape[1], -1) for m in maps]
            return F.concat(parts, axis=2).transpose(0, 2, 1)

        obj = cat(self.obj)
        return cat(self.cls), cat(self.reg), obj.reshape(obj.shape[0], obj.shape[1])


def _branch(width: int, depthwise: bool) -> List[Module]:
    if depthwise:
        return [DWSeparable(width, width, 3), DWSeparable(width, width, 3)]
    return [ConvBNAct(width, width, 3), ConvBNAct(width, width, 3)]


class DetectHead(Module):
    """Per-level 1x1 stems feeding cls and reg/obj branches shared across levels."""

    def __init__(self, in_channels: Sequence[int], config: HeadConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.stems = [ConvBNAct(c, w, 1) for c in in_channels]
        self.cls_convs = _branch(w, config.depthwise)
        self.reg_convs = _branch(w, config.depthwise)
        self.cls_pred = Conv2d(w, config.num_classes, 1)
        self.reg_pred = Conv2d(w, 4, 1)
        self.obj_pred = Conv2d(w, 1, 1)
        prior = -math.log((1 - config.prior_prob) / config.prior_prob)
        self.cls_pred.bias.data[...] = prior
        self.obj_pred.bias.data[...] = prior

    def forward(self, levels: Sequence[Tensor]) -> DetPrediction:
        cls_out, reg_out, obj_out = [], [], []
        for stem, x in zip(self.stems, levels):
            x = stem(x)
            c = x
            for conv in self.cls_convs:
                c = conv(c)
            r = x
            for conv in self.reg_convs:
                r = conv(r)
            cls_out.append(self.cls_pred(c))
            reg_out.append(self.reg_pred(r))
            obj_out.append(self.obj_pred(r))
        return DetPrediction(cls_out, reg_out, obj_out, tuple(self.config.strides))


class SegHead(Module):
    """3x3 conv at stride 4, two 2x upsamplings, 1x1 classifier at full resolution."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.conv = ConvBNAct(in_channels, in_channels, 3)
        self.classifier = Conv2d(in_channels, num_classes, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.classifier(F.upsample2x(F.upsample2x(self.conv(x))))


def anchor_points(level_shapes: Sequence[Tuple[int, int]], strides: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Grid cell indices (col, row) [A,2] and per-anchor strides [A] in flatten order."""
    grids, anchor_strides = [], []
    for (h, w), stride in zip(level_shapes, strides):
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        grids.append(np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1))
        anchor_strides.append(np.full(h * w, stride))
    return np.concatenate(grids).astype(np.float64), np.concatenate(anchor_strides).astype(np.float64)


def decode_reg(reg: np.ndarray, grid: np.ndarray, strides: np.ndarray) -> np.ndarray:
    """[..., A, 4] regression to xyxy boxes: center = (grid + d) * stride, size = exp(log size) * stride."""
    center = (grid + reg[..., :2]) * strides[:, None]
    size = np.exp(np.minimum(reg[..., 2:], 20.0)) * strides[:, None]
    return np.concatenate([center - size / 2, center + size / 2], axis=-1)


def encode_boxes(boxes: np.ndarray, grid: np.ndarray, strides: np.ndarray) -> np.ndarray:
    """Inverse of ``decode_reg`` for the given anchors."""
    center = (boxes[..., :2] + boxes[..., 2:]) / 2
    size = boxes[..., 2:] - boxes[..., :2]
    return np.concatenate([center / strides[:, None] - grid, np.log(size / strides[:, None])], axis=-1)


def decode_boxes(pred: DetPrediction, image_size: Tuple[int, int]) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per image: boxes [A,4] clipped to ``image_size`` (W, H), best class [A] and score [A]."""
    cls, reg, obj = (t.data for t in pred.flatten())
    grid, strides = anchor_points(pred.level_shapes, pred.strides)
    boxes = decode_reg(reg.astype(np.float64), grid, strides)
    width, height = image_size
    boxes[..., [0, 2]] = boxes[..., [0, 2]].clip(0, width)
    boxes[..., [1, 3]] = boxes[..., [1, 3]].clip(0, height)
    scores = _sigmoid(obj.astype(np.float64))[..., None] * _sigmoid(cls.astype(np.float64))
    best = scores.argmax(axis=-1)
    best_score = np.take_along_axis(scores, best[..., None], axis=-1)[..., 0]
    return [(boxes[i], best[i], best_score[i]) for i in range(boxes.shape[0])]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))
