from achelous.evaluation.metrics import IOU_THRESHOLDS, compute_map, compute_miou

__all__ = ["IOU_THRESHOLDS", "compute_map", "compute_miou"]
