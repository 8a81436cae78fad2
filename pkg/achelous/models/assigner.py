"""SimOTA label assignment for the anchor-free head."""
from dataclasses import dataclass
from typing import List

import numpy as np

from achelous.models.postprocess import box_iou


@dataclass
class AssignmentResult:
    """``matched_gt[a]`` is the GT index of anchor ``a`` or -1 for background."""

    matched_gt: np.ndarray
    gt_anchors: List[np.ndarray]
    num_candidates: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.matched_gt >= 0

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def candidate_mask(
    anchor_centers: np.ndarray, anchor_strides: np.ndarray, gt_boxes: np.ndarray, radius: float = 2.5
) -> np.ndarray:
    """[G,A] anchors whose center lies inside the GT box or within ``radius`` cells of its center."""
    x = anchor_centers[None, :, 0]
    y = anchor_centers[None, :, 1]
    x1, y1, x2, y2 = (gt_boxes[:, i:i + 1] for i in range(4))
    in_box = (x > x1) & (x < x2) & (y > y1) & (y < y2)
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    reach = radius * anchor_strides[None, :]
    in_center = (np.abs(x - cx) < reach) & (np.abs(y - cy) < reach)
    return in_box | in_center


def assignment_costs(
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    iou_weight: float = 3.0,
):
    """Pairwise IoU [G,A] and cost = class BCE + ``iou_weight`` * -ln IoU."""
    ious = box_iou(gt_boxes, pred_boxes)
    p = np.clip(pred_scores, 1e-7, 1 - 1e-7)
    onehot = np.zeros((len(gt_boxes), pred_scores.shape[1]))
    onehot[np.arange(len(gt_boxes)), gt_classes] = 1.0
    # Sum over classes of -[y ln p + (1-y) ln(1-p)] for every (gt, anchor) pair.
    bce = -(onehot @ np.log(p).T + (1 - onehot) @ np.log(1 - p).T)
    return ious, bce + iou_weight * -np.log(ious + 1e-8)


def dynamic_k(ious: np.ndarray, count: int, topk: int = 10) -> int:
    top = np.sort(ious)[::-1][: min(topk, len(ious))]
    return int(np.clip(np.floor(top.sum() + 0.5), 1, count))


def simota_assign(
    anchor_centers: np.ndarray,
    anchor_strides: np.ndarray,
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    radius: float = 2.5,
    topk: int = 10,
    iou_weight: float = 3.0,
) -> AssignmentResult:
    """Assign anchors to GT boxes.

    Each GT keeps its dynamic-k lowest-cost candidates (cost ties go to the
    lower anchor index). An anchor wanted by several GTs goes to the one with
    the lowest cost, ties to the lower GT index. A GT that loses every anchor
    takes its cheapest candidate nobody holds, visiting GTs in index order.

    ``pred_scores`` are per-class probabilities [A,C].
    """
    num_anchors = len(anchor_centers)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    matched = np.full(num_anchors, -1, dtype=np.int64)
    num_gt = len(gt_boxes)
    if num_gt == 0 or num_anchors == 0:
        return AssignmentResult(matched, [np.zeros(0, dtype=np.int64) for _ in range(num_gt)], np.zeros(num_gt, dtype=np.int64))

    candidates = candidate_mask(anchor_centers, anchor_strides, gt_boxes, radius)
    ious, cost = assignment_costs(pred_boxes, pred_scores, gt_boxes, gt_classes, iou_weight)

    wanted = np.zeros((num_gt, num_anchors), dtype=bool)
    for g in range(num_gt):
        idx = np.flatnonzero(candidates[g])
        if len(idx) == 0:
            continue
        k = dynamic_k(ious[g, idx], len(idx), topk)
        order = idx[np.lexsort((idx, cost[g, idx]))]
        wanted[g, order[:k]] = True

    best_cost = np.full(num_anchors, np.inf)
    for g in range(num_gt):
        for a in np.flatnonzero(wanted[g]):
            if cost[g, a] < best_cost[a]:
                best_cost[a] = cost[g, a]
                matched[a] = g

    for g in range(num_gt):
        if candidates[g].any() and not (matched == g).any():
            free = np.flatnonzero(candidates[g] & (matched < 0))
            if len(free):
                matched[free[np.lexsort((free, cost[g, free]))[0]]] = g

    gt_anchors = [np.flatnonzero(matched == g) for g in range(num_gt)]
    return AssignmentResult(matched, gt_anchors, candidates.sum(axis=1))
