"""
Tests for COCO-style detection metrics and confusion-matrix mIoU.
"""
import math

import numpy as np
import pytest

from achelous.evaluation.metrics import (
    compute_map,
    compute_miou,
    confusion_matrix,
    detections_from_lists,
    interpolated_ap,
    match_detections,
)
from achelous.models.postprocess import Detections


def dets(boxes, classes, scores):
    return Detections(np.asarray(boxes, dtype=float).reshape(-1, 4), np.asarray(classes), np.asarray(scores, dtype=float))


GT = (np.array([[0.0, 0.0, 10.0, 10.0]]), np.array([0]))


class TestDetectionMetrics:
    def test_perfect(self):
        metrics = compute_map([dets([[0, 0, 10, 10]], [0], [0.9])], [GT])
        assert metrics.mAP_50_95 == pytest.approx(1.0)
        assert metrics.AR_50_95 == pytest.approx(1.0)
        assert metrics.per_class_ap == {"pier": pytest.approx(1.0)}

    def test_no_detections(self):
        metrics = compute_map([Detections.empty()], [GT])
        assert metrics.mAP_50_95 == 0.0 and metrics.AR_50 == 0.0

    def test_partial_overlap(self):
        # IoU 0.72 passes the thresholds 0.50 to 0.70 only.
        metrics = compute_map([dets([[0, 0, 10, 7.2]], [0], [0.9])], [GT])
        assert metrics.mAP_50 == pytest.approx(1.0)
        assert metrics.mAP_50_95 == pytest.approx(0.5)
        assert metrics.AR_50_95 == pytest.approx(0.5)
        assert metrics.AR_50 == metrics.AR_50_95

    def test_false_positive_ranked_first(self):
        # precision 0.5 at recall 1 is the envelope for every recall level
        metrics = compute_map([dets([[20, 20, 30, 30], [0, 0, 10, 10]], [0, 0], [0.9, 0.8])], [GT])
        assert metrics.mAP_50_95 == pytest.approx(0.5)
        assert metrics.AR_50_95 == pytest.approx(1.0)

    def test_half_recall(self):
        gt = (np.array([[0.0, 0.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]]), np.array([0, 0]))
        metrics = compute_map([dets([[0, 0, 10, 10]], [0], [0.9])], [gt])
        assert metrics.mAP_50_95 == pytest.approx(51 / 101)
        assert metrics.AR_50_95 == pytest.approx(0.5)

    def test_classes_without_ground_truth_are_ignored(self):
        metrics = compute_map([dets([[0, 0, 10, 10], [40, 40, 50, 50]], [0, 3], [0.9, 0.95])], [GT])
        assert metrics.mAP_50_95 == pytest.approx(1.0)
        assert list(metrics.per_class_ap) == ["pier"]

    def test_wrong_class_is_a_miss(self):
        metrics = compute_map([dets([[0, 0, 10, 10]], [1], [0.9])], [GT])
        assert metrics.mAP_50_95 == 0.0

    def test_pooled_over_images(self):
        preds = [dets([[0, 0, 10, 10]], [0], [0.9]), Detections.empty()]
        metrics = compute_map(preds, [GT, GT])
        assert metrics.mAP_50_95 == pytest.approx(51 / 101)

    def test_max_detections(self):
        boxes = [[50 + i, 50, 60 + i, 60] for i in range(3)] + [[0, 0, 10, 10]]
        metrics = compute_map([dets(boxes, [0] * 4, [0.9, 0.8, 0.7, 0.1])], [GT], max_detections=3)
        assert metrics.mAP_50_95 == 0.0

    def test_no_ground_truth_anywhere(self):
        metrics = compute_map([dets([[0, 0, 10, 10]], [0], [0.9])], [(np.zeros((0, 4)), np.zeros(0))])
        assert metrics.mAP_50_95 == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_map([Detections.empty()], [GT, GT])

    def test_greedy_matching_takes_each_truth_once(self):
        tp = match_detections(np.array([[0.0, 0, 10, 10], [0, 0, 10, 10]]), np.array([0.9, 0.8]), GT[0], 0.5)
        np.testing.assert_array_equal(tp, [True, False])

    def test_ap_without_ground_truth_is_nan(self):
        ap, recall = interpolated_ap(np.array([True]), np.array([0.5]), 0)
        assert math.isnan(ap) and math.isnan(recall)

    def test_from_lists(self):
        det = detections_from_lists([[0, 0, 1, 1]], ["boat"], [0.5])
        assert det.classes.tolist() == [4]
        with pytest.raises(ValueError):
            detections_from_lists([[0, 0, 1, 1]], ["submarine"], [0.5])


class TestSegmentationMetrics:
    def test_confusion_layout(self):
        cm = confusion_matrix(np.array([1, 1, 0]), np.array([0, 1, 0]), 2)
        np.testing.assert_array_equal(cm, [[1, 1], [0, 1]])

    def test_perfect(self):
        labels = np.array([[0, 1], [2, 2]])
        _, miou = compute_miou(labels, labels, 3)
        assert miou == 1.0

    def test_crossed_halves(self):
        pred = np.array([[0, 0], [1, 1]])
        gt = np.array([[0, 1], [0, 1]])
        per_class, miou = compute_miou(pred, gt, 3)
        np.testing.assert_allclose(per_class[:2], [1 / 3, 1 / 3])
        assert math.isnan(per_class[2])
        assert miou == pytest.approx(1 / 3)

    def test_quarter_overlap(self):
        gt = np.zeros((4, 4), dtype=int)
        gt[:2, :2] = 1
        pred = np.zeros((4, 4), dtype=int)
        pred[1:3, 1:3] = 1
        per_class, _ = compute_miou(pred, gt, 2)
        assert per_class[1] == pytest.approx(1 / 7)

    def test_mask(self):
        pred = np.array([0, 1, 1])
        gt = np.array([0, 1, 0])
        _, miou = compute_miou(pred, gt, 2, mask=np.array([True, True, False]))
        assert miou == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion_matrix(np.zeros(3), np.zeros(4), 2)
