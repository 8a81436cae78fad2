"""Box IoU, class-wise NMS and conversion of head outputs into detections."""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from achelous.models.heads import DetPrediction, decode_boxes


@dataclass
class Detections:
    boxes: np.ndarray
    classes: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def to_lines(self) -> List[str]:
        """One ``class score x1 y1 x2 y2`` line per box, pixel coordinates."""
        return [
            f"{int(c)} {s:.6f} {b[0]:.2f} {b[1]:.2f} {b[2]:.2f} {b[3]:.2f}"
            for b, c, s in zip(self.boxes, self.classes, self.scores)
        ]

    @classmethod
    def empty(cls) -> "Detections":
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), np.zeros(0))


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of xyxy boxes [M,4] x [K,4] -> [M,K]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.prod(np.clip(rb - lt, 0, None), axis=2)
    area_a = np.prod(np.clip(a[:, 2:] - a[:, :2], 0, None), axis=1)
    area_b = np.prod(np.clip(b[:, 2:] - b[:, :2], 0, None), axis=1)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def nms(
    boxes: np.ndarray,
    scores: np.ndarray,
    classes: np.ndarray,
    iou_threshold: float = 0.65,
    score_threshold: float = 0.0,
) -> np.ndarray:
    """Class-wise greedy suppression by descending score; returns kept indices in score order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    classes = np.asarray(classes).reshape(-1)
    order = np.lexsort((np.arange(len(scores)), -scores))
    order = order[scores[order] >= score_threshold]
    keep = []
    suppressed = np.zeros(len(scores), dtype=bool)
    for position, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        rest = order[position + 1:]
        rest = rest[(classes[rest] == classes[i]) & ~suppressed[rest]]
        if len(rest):
            overlap = box_iou(boxes[i], boxes[rest])[0]
            suppressed[rest[overlap > iou_threshold]] = True
    return np.array(keep, dtype=np.int64)


def postprocess(
    pred: DetPrediction,
    image_size: Tuple[int, int],
    score_threshold: float = 0.01,
    iou_threshold: float = 0.65,
    max_detections: int = 100,
) -> List[Detections]:
    results = []
    for boxes, classes, scores in decode_boxes(pred, image_size):
        keep = nms(boxes, scores, classes, iou_threshold, score_threshold)[:max_detections]
        results.append(Detections(boxes[keep], classes[keep], scores[keep]))
    return results
