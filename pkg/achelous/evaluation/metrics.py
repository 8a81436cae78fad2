"""Detection mAP/AR with 101-point interpolation and confusion-matrix mIoU."""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from achelous.models.config import DETECTION_CLASSES
from achelous.models.postprocess import Detections, box_iou
from schemas.perception_schemas import DetMetrics

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)

GroundTruthBoxes = Tuple[np.ndarray, np.ndarray]


def match_detections(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    gt_boxes: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Greedy matching for one image and class: detections in descending score take the
    best-overlapping unmatched ground truth with IoU >= threshold. Returns a TP flag per
    detection in the given (score-sorted) order.
    """
    tp = np.zeros(len(det_boxes), dtype=bool)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return tp
    ious = box_iou(det_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for d in range(len(det_boxes)):
        candidates = np.where(taken, -1.0, ious[d])
        best = int(candidates.argmax())
        if candidates[best] >= threshold:
            taken[best] = True
            tp[d] = True
    return tp


def interpolated_ap(tp: np.ndarray, scores: np.ndarray, num_gt: int) -> Tuple[float, float]:
    """101-point interpolated AP and final recall for pooled detections of one class."""
    if num_gt == 0:
        return float("nan"), float("nan")
    if len(tp) == 0:
        return 0.0, 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order].astype(np.float64)
    tps = np.cumsum(tp)
    fps = np.cumsum(1.0 - tp)
    recall = tps / num_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    # precision envelope: max precision at any higher recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    index = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    sampled = np.where(index < len(precision), precision[np.minimum(index, len(precision) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def compute_map(
    predictions: Sequence[Detections],
    ground_truth: Sequence[GroundTruthBoxes],
    num_classes: int = len(DETECTION_CLASSES),
    iou_thresholds: np.ndarray = IOU_THRESHOLDS,
    max_detections: int = 100,
    class_names: Sequence[str] = DETECTION_CLASSES,
) -> DetMetrics:
    """COCO-style AP/AR; classes without ground truth are left out of the means."""
    if len(predictions) != len(ground_truth):
        raise ValueError(f"{len(predictions)} prediction sets for {len(ground_truth)} images")
    iou_thresholds = np.asarray(iou_thresholds, dtype=np.float64)
    ap = np.full((num_classes, len(iou_thresholds)), np.nan)
    ar = np.full((num_classes, len(iou_thresholds)), np.nan)

    kept = []
    for det in predictions:
        order = np.argsort(-np.asarray(det.scores, dtype=np.float64), kind="stable")[:max_detections]
        kept.append((np.asarray(det.boxes, dtype=np.float64).reshape(-1, 4)[order],
                     np.asarray(det.classes, dtype=np.int64)[order],
                     np.asarray(det.scores, dtype=np.float64)[order]))

    for c in range(num_classes):
        num_gt = sum(int((np.asarray(classes) == c).sum()) for _, classes in ground_truth)
        for t, threshold in enumerate(iou_thresholds):
            flags, scores = [], []
            for (boxes, classes, det_scores), (gt_boxes, gt_classes) in zip(kept, ground_truth):
                mine = classes == c
                gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)[np.asarray(gt_classes) == c]
                flags.append(match_detections(boxes[mine], det_scores[mine], gt_boxes, threshold))
                scores.append(det_scores[mine])
            ap[c, t], ar[c, t] = interpolated_ap(np.concatenate(flags), np.concatenate(scores), num_gt)

    present = ~np.isnan(ap[:, 0])
    if not present.any():
        return DetMetrics(mAP_50_95=0.0, mAP_50=0.0, AR_50_95=0.0, AR_50=0.0)
    mean_ar = float(ar[present].mean())
    half = int(np.argmin(np.abs(iou_thresholds - 0.5)))
    return DetMetrics(
        mAP_50_95=float(ap[present].mean()),
        mAP_50=float(ap[present, half].mean()),
        AR_50_95=mean_ar,
        AR_50=mean_ar,
        per_class_ap={class_names[c]: float(ap[c].mean()) for c in np.flatnonzero(present)},
    )


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                     mask: Optional[np.ndarray] = None) -> np.ndarray:
    """[C,C] counts, rows ground truth and columns prediction."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        pred, gt = pred[mask], gt[mask]
    flat = gt.reshape(-1) * num_classes + pred.reshape(-1)
    return np.bincount(flat, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(matrix: np.ndarray) -> np.ndarray:
    """Per-class TP / (TP + FP + FN); NaN for classes absent from both prediction and ground truth."""
    tp = np.diag(matrix).astype(np.float64)
    union = matrix.sum(axis=0) + matrix.sum(axis=1) - tp
    return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def compute_miou(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                 mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """Per-class IoU and their mean over classes present in ground truth or prediction."""
    per_class = iou_from_confusion(confusion_matrix(pred, gt, num_classes, mask))
    valid = ~np.isnan(per_class)
    return per_class, float(per_class[valid].mean()) if valid.any() else 0.0


def mean_over(per_class: np.ndarray, classes: Sequence[int]) -> float:
    values = per_class[list(classes)]
    values = values[~np.isnan(values)]
    return float(values.mean()) if len(values) else 0.0


def detections_from_lists(boxes: List[List[float]], labels: List[str], scores: List[float],
                          class_names: Sequence[str] = DETECTION_CLASSES) -> Detections:
    return Detections(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
        np.array([class_names.index(label) for label in labels], dtype=np.int64),
        np.asarray(scores, dtype=np.float64),
    )

