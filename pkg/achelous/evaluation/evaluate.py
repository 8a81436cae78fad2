"""Run a trained network over samples and score every enabled task."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from achelous.autograd.checkpoint import load_checkpoint
from achelous.autograd.tensor import no_grad
from achelous.data.dataset import collate
from achelous.data.synth import DRIVABLE, Sample
from achelous.evaluation.metrics import (
    compute_map,
    confusion_matrix,
    detections_from_lists,
    iou_from_confusion,
    mean_over,
)
from achelous.models.achelous_net import AchelousNet
from achelous.models.config import DETECTION_CLASSES
from achelous.models.postprocess import Detections, postprocess
from achelous.radar.geometry import CLUTTER
from core.config import RunConfig, load_run_config
from core.errors import CheckpointError, ConfigError
from schemas.perception_schemas import DetectionEvalRequest, DetMetrics, SegMetrics

logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    """Decoded outputs for one sample; fields are None for disabled tasks."""

    detections: Optional[Detections] = None
    seg: Optional[np.ndarray] = None  # [S,S] class ids
    waterline: Optional[np.ndarray] = None  # [S,S] 0/1
    point_labels: Optional[np.ndarray] = None  # [P] for the sample's real points


def predict(model: AchelousNet, samples: Sequence[Sample], zero_rvp: bool = False,
            score_threshold: float = 0.01, iou_threshold: float = 0.65) -> List[Prediction]:
    model.eval()
    with no_grad():
        batch = collate(samples, zero_rvp=zero_rvp)
        out = model(batch.image, batch.rvp, batch.points, batch.point_mask)
    results = [Prediction() for _ in samples]
    size = samples[0].image.shape[2], samples[0].image.shape[1]
    if out.det is not None:
        for result, det in zip(results, postprocess(out.det, size, score_threshold, iou_threshold)):
            result.detections = det
    if out.seg_targets is not None:
        for result, logits in zip(results, out.seg_targets.data):
            result.seg = logits.argmax(axis=0)
    if out.seg_waterline is not None:
        for result, logits in zip(results, out.seg_waterline.data):
            result.waterline = logits.argmax(axis=0)
    if out.pc is not None:
        for result, sample, logits in zip(results, samples, out.pc.data):
            result.point_labels = logits[:len(sample.radar)].argmax(axis=1)
    return results


def evaluate_model(model: AchelousNet, samples: Sequence[Sample], batch_size: int = 8, zero_rvp: bool = False,
                   score_threshold: float = 0.01) -> Tuple[Optional[DetMetrics], Optional[SegMetrics]]:
    """Detection and segmentation metrics over ``samples``; confusion matrices accumulate across batches."""
    detections, truths = [], []
    seg_cm = np.zeros((DRIVABLE + 2, DRIVABLE + 2), dtype=np.int64)
    wl_cm = np.zeros((2, 2), dtype=np.int64)
    pc_cm = np.zeros((CLUTTER + 1, CLUTTER + 1), dtype=np.int64)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        for sample, pred in zip(chunk, predict(model, chunk, zero_rvp, score_threshold)):
            if pred.detections is not None:
                detections.append(pred.detections)
                truths.append((sample.boxes, sample.classes))
            if pred.seg is not None:
                seg_cm += confusion_matrix(pred.seg, sample.seg, len(seg_cm))
            if pred.waterline is not None:
                wl_cm += confusion_matrix(pred.waterline, sample.waterline, 2)
            if pred.point_labels is not None:
                pc_cm += confusion_matrix(pred.point_labels, sample.point_labels, len(pc_cm))

    det_metrics = compute_map(detections, truths) if detections else None
    seg_metrics = None
    if "seg_td" in model.tasks or "seg_wl" in model.tasks or "pc" in model.tasks:
        seg_iou = iou_from_confusion(seg_cm)
        wl_iou = iou_from_confusion(wl_cm)
        pc_iou = iou_from_confusion(pc_cm)
        valid_points = pc_cm.sum()
        seg_metrics = SegMetrics(
            mIoU_targets=mean_over(seg_iou, range(len(DETECTION_CLASSES))),
            mIoU_drivable=mean_over(seg_iou, [DRIVABLE]),
            mIoU_waterline=mean_over(wl_iou, range(2)),
            mIoU_pointcloud=mean_over(pc_iou, range(len(pc_iou))),
            pc_accuracy=float(np.trace(pc_cm) / valid_points) if valid_points else 0.0,
        )
    logger.info(f"Evaluated {len(samples)} samples: detection={det_metrics}, segmentation={seg_metrics}")
    return det_metrics, seg_metrics


def load_model(checkpoint) -> Tuple[AchelousNet, RunConfig]:
    """Rebuild the network described by ``<checkpoint>.cfg`` and load its weights."""
    checkpoint = Path(checkpoint)
    config_path = checkpoint.with_suffix(".cfg")
    if not config_path.is_file():
        raise CheckpointError(config_path, "run config saved with the checkpoint not found")
    run = load_run_config(config_path)
    model = AchelousNet(run.to_model_config(), run.tasks)
    model.load_state_dict(load_checkpoint(checkpoint))
    model.eval()
    return model, run


def evaluate_detection_request(request: DetectionEvalRequest) -> DetMetrics:
    """Score posted detections against posted ground truth, matched by position."""
    if len(request.predictions) != len(request.ground_truth):
        raise ConfigError(f"{len(request.predictions)} prediction sets for {len(request.ground_truth)} images")
    try:
        predictions = [
            detections_from_lists([d.box for d in image.detections], [d.label for d in image.detections],
                                  [d.score for d in image.detections])
            for image in request.predictions
        ]
        truths = [detections_from_lists(gt.boxes, gt.labels, [1.0] * len(gt.labels)) for gt in request.ground_truth]
    except ValueError as e:
        raise ConfigError(f"unknown class label, expected one of {DETECTION_CLASSES}: {e}") from e
    return compute_map(predictions, [(t.boxes, t.classes) for t in truths])
