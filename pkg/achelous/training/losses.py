"""Per-task losses and the homoscedastic uncertainty weighting that combines them."""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from achelous.autograd import functional as F
from achelous.autograd.nn import Module, Parameter
from achelous.autograd.tensor import Tensor
from achelous.models.assigner import AssignmentResult, simota_assign
from achelous.models.heads import DetPrediction, anchor_points, decode_reg
from core.config import TASK_NAMES
from core.errors import ShapeError

# Task stream each loss term is weighted under.
LOSS_TASKS = {
    "det_cls": "det",
    "det_obj": "det",
    "det_box": "det",
    "seg_targets": "seg_td",
    "seg_waterline": "seg_wl",
    "pc_seg": "pc",
}


class TaskLosses(BaseModel):
    det_cls: float = 0.0
    det_obj: float = 0.0
    det_box: float = 0.0
    seg_targets: float = 0.0
    seg_waterline: float = 0.0
    pc_seg: float = 0.0


def focal_loss(
    logits: Tensor,
    targets: np.ndarray,
    alpha: Optional[float] = 0.25,
    gamma: float = 2.0,
    normalizer: Optional[float] = None,
) -> Tensor:
    """Sigmoid focal loss -alpha_t (1 - p_t)^gamma ln p_t.

    Summed and divided by ``normalizer`` (e.g. the positive count) when given,
    otherwise averaged over elements. ``alpha=None`` disables class balancing.
    """
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise ShapeError(f"focal targets {targets.shape} do not match logits {logits.shape}")
    ce = logits.softplus() - logits * targets
    loss = ce
    if gamma:
        p = logits.sigmoid()
        one_minus_pt = p * (1 - 2 * targets) + targets
        loss = loss * one_minus_pt ** gamma
    if alpha is not None:
        loss = loss * (alpha * targets + (1 - alpha) * (1 - targets))
    if normalizer is None:
        return loss.mean()
    return loss.sum() * (1.0 / max(normalizer, 1.0))


def dice_loss(probs: Tensor, target: np.ndarray, eps: float = 1.0) -> Tensor:
    """1 - (2 sum(pq) + eps) / (sum(p) + sum(q) + eps) per class, averaged over classes.

    ``probs`` and ``target`` are [N,C,H,W]; sums run over batch and pixels.
    """
    target = np.asarray(target, dtype=probs.dtype)
    if target.shape != probs.shape:
        raise ShapeError(f"dice target {target.shape} does not match probabilities {probs.shape}")
    axes = (0, 2, 3)
    intersection = (probs * target).sum(axis=axes)
    denominator = probs.sum(axis=axes) + target.sum(axis=axes)
    dice = (intersection * 2.0 + eps) / (denominator + eps)
    return (1.0 - dice).mean()


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    """[N,H,W] class ids -> [N,C,H,W] indicators."""
    labels = np.asarray(labels, dtype=np.int64)
    return np.moveaxis(np.eye(classes)[labels], -1, 1)


def nll_loss(log_probs: Tensor, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Masked mean of -log p[label] over [N,P,C] log-probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ShapeError("nll_loss needs at least one valid point")
    batch, point = np.nonzero(mask)
    picked = log_probs[batch, point, labels[batch, point]]
    return -picked.mean()


def box_iou_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """Row-wise IoU of predicted xyxy boxes [M,4] against constant targets [M,4]."""
    target = Tensor(np.asarray(target, dtype=pred.dtype))
    lt = pred[:, :2].maximum(target[:, :2])
    rb = pred[:, 2:].minimum(target[:, 2:])
    wh = (rb - lt).clip(low=0.0)
    inter = wh[:, 0] * wh[:, 1]
    area_p = (pred[:, 2] - pred[:, 0]) * (pred[:, 3] - pred[:, 1])
    area_t = (target[:, 2] - target[:, 0]) * (target[:, 3] - target[:, 1])
    return inter / (area_p + area_t - inter + 1e-9)


def iou_loss(pred: Tensor, target: np.ndarray, normalizer: Optional[float] = None) -> Tensor:
    loss = 1.0 - box_iou_tensor(pred, target)
    if normalizer is None:
        return loss.mean()
    return loss.sum() * (1.0 / max(normalizer, 1.0))


def decode_tensor(reg: Tensor, grid: np.ndarray, strides: np.ndarray) -> Tensor:
    """Differentiable version of ``decode_reg`` for selected anchors [M,4]."""
    s = Tensor(strides[:, None].astype(reg.dtype))
    center = (reg[:, :2] + Tensor(grid.astype(reg.dtype))) * s
    size = reg[:, 2:].clip(high=20.0).exp() * s
    return F.concat([center - size * 0.5, center + size * 0.5], axis=1)


def detection_loss(
    pred: DetPrediction,
    gt_boxes: Sequence[np.ndarray],
    gt_classes: Sequence[np.ndarray],
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> Tuple[Dict[str, Tensor], List[AssignmentResult]]:
    """Focal cls/obj and IoU box losses with SimOTA targets, normalized by the positive count."""
    cls, reg, obj = pred.flatten()
    grid, strides = anchor_points(pred.level_shapes, pred.strides)
    centers = grid * strides[:, None]
    n, num_anchors, num_classes = cls.shape

    with_probs = 1.0 / (1.0 + np.exp(-cls.data.astype(np.float64)))
    obj_probs = 1.0 / (1.0 + np.exp(-obj.data.astype(np.float64)))
    decoded = decode_reg(reg.data.astype(np.float64), grid, strides)

    obj_target = np.zeros((n, num_anchors))
    assignments: List[AssignmentResult] = []
    rows, anchors, classes, boxes = [], [], [], []
    for b in range(n):
        scores = np.sqrt(with_probs[b] * obj_probs[b][:, None])
        result = simota_assign(centers, strides, decoded[b], scores, gt_boxes[b], gt_classes[b])
        if sum(len(a) for a in result.gt_anchors) != result.num_positive:
            raise ShapeError("anchor assigned more than once")
        assignments.append(result)
        positive = np.flatnonzero(result.positive)
        obj_target[b, positive] = 1.0
        matched = result.matched_gt[positive]
        rows.append(np.full(len(positive), b))
        anchors.append(positive)
        classes.append(np.asarray(gt_classes[b], dtype=np.int64)[matched])
        boxes.append(np.asarray(gt_boxes[b], dtype=np.float64).reshape(-1, 4)[matched])

    rows, anchors = np.concatenate(rows).astype(np.int64), np.concatenate(anchors).astype(np.int64)
    classes, boxes = np.concatenate(classes).astype(np.int64), np.concatenate(boxes).reshape(-1, 4)
    num_pos = float(len(anchors))

    losses = {"det_obj": focal_loss(obj, obj_target, alpha, gamma, normalizer=num_pos)}
    if len(anchors):
        cls_target = np.zeros((len(anchors), num_classes))
        cls_target[np.arange(len(anchors)), classes] = 1.0
        losses["det_cls"] = focal_loss(cls[rows, anchors], cls_target, alpha, gamma, normalizer=num_pos)
        pred_boxes = decode_tensor(reg[rows, anchors], grid[anchors], strides[anchors])
        losses["det_box"] = iou_loss(pred_boxes, boxes, normalizer=num_pos)
    else:
        # Zero losses still tied to the graph so every head parameter receives a gradient.
        losses["det_cls"] = cls.sum() * 0.0
        losses["det_box"] = reg.sum() * 0.0
    return losses, assignments


class LogVariances(Module):
    """Learned log-variance s_t per task stream, initialized at 0."""

    def __init__(self, tasks: Sequence[str] = TASK_NAMES):
        super().__init__()
        self.tasks = tuple(tasks)
        for task in self.tasks:
            setattr(self, f"s_{task}", Parameter(np.zeros(())))

    def __getitem__(self, task: str) -> Parameter:
        return getattr(self, f"s_{task}")

    def values(self) -> Dict[str, float]:
        return {task: self[task].item() for task in self.tasks}


def total_loss(task_losses: Dict[str, Tensor], log_vars: LogVariances) -> Tensor:
    """Sum over tasks of exp(-s_t) L_t + s_t, tasks in fixed order."""
    total = None
    for task in log_vars.tasks:
        if task not in task_losses:
            continue
        s = log_vars[task]
        term = (-s).exp() * task_losses[task] + s
        total = term if total is None else total + term
    if total is None:
        raise ShapeError("no task losses to combine")
    return total
