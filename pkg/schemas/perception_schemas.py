from pydantic import BaseModel, Field
from typing import Dict, List, Literal, Optional


class DetMetrics(BaseModel):
    mAP_50_95: float = Field(..., ge=0, le=1, description="AP averaged over classes and IoU 0.50:0.05:0.95")
    mAP_50: float = Field(..., ge=0, le=1, description="AP averaged over classes at IoU 0.50")
    AR_50_95: float = Field(..., ge=0, le=1, description="Recall with at most 100 detections, averaged over IoU thresholds")
    AR_50: float = Field(..., ge=0, le=1, description="Same value as AR_50_95; kept for the alternate column name")
    per_class_ap: Dict[str, float] = Field(default_factory=dict, description="AP 0.50:0.95 per class present in ground truth")


class SegMetrics(BaseModel):
    mIoU_targets: float = Field(..., ge=0, le=1, description="Mean IoU over the seven target classes")
    mIoU_drivable: float = Field(..., ge=0, le=1, description="IoU of the drivable-water class")
    mIoU_waterline: float = Field(..., ge=0, le=1, description="Mean IoU of the binary waterline mask")
    mIoU_pointcloud: float = Field(..., ge=0, le=1, description="Mean IoU over point classes on valid points")
    pc_accuracy: float = Field(..., ge=0, le=1, description="Fraction of valid points labelled correctly")


class EvalReport(BaseModel):
    model: str = Field(..., description="Model tag, e.g. ST-GDF-PN-S0")
    split: str = Field(..., description="Dataset split that was evaluated")
    samples: int = Field(..., ge=0)
    zero_rvp: bool = Field(False, description="RVP maps were zeroed (camera-only evaluation)")
    detection: Optional[DetMetrics] = None
    segmentation: Optional[SegMetrics] = None


class BenchRow(BaseModel):
    name: str = Field(..., description="Configuration or comparison label")
    kind: Literal["unified", "standalone", "standalone_sum", "standalone_max", "ablation"] = Field(
        ..., description="What the row measures"
    )
    mean_ms: float = Field(..., ge=0, description="Mean forward latency in milliseconds")
    std_ms: float = Field(..., ge=0, description="Standard deviation of the forward latency")
    runs: int = Field(..., ge=0)
    parameters: int = Field(0, ge=0)
    gflops: float = Field(0.0, ge=0, description="Analytic multiply-accumulates, in billions")
    unstable: bool = Field(False, description="std/mean reached the stability limit")


class BenchReport(BaseModel):
    image_size: int
    threads: int
    warmup: int
    runs: int
    rows: List[BenchRow] = Field(default_factory=list)

    def row(self, name: str) -> BenchRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)


class Detection(BaseModel):
    box: List[float] = Field(..., min_length=4, max_length=4, description="x1, y1, x2, y2 in pixels")
    label: str = Field(..., description="Class name")
    score: float = Field(..., ge=0, le=1)


class ImageDetections(BaseModel):
    detections: List[Detection] = Field(default_factory=list)


class GroundTruth(BaseModel):
    boxes: List[List[float]] = Field(default_factory=list, description="x1, y1, x2, y2 per object")
    labels: List[str] = Field(default_factory=list, description="Class name per object")


class DetectionEvalRequest(BaseModel):
    predictions: List[ImageDetections] = Field(..., description="Detections per image")
    ground_truth: List[GroundTruth] = Field(..., description="Annotations per image, aligned with predictions")


class SampleSummary(BaseModel):
    index: int
    seed: int
    degradation: str
    image_size: int
    objects: List[Detection] = Field(default_factory=list, description="Ground-truth boxes with score 1")
    radar_points: int = Field(..., ge=0)
    clutter_points: int = Field(..., ge=0)
    drivable_fraction: float = Field(..., ge=0, le=1)


class InferRequest(BaseModel):
    checkpoint: str = Field(..., description="Path to a model checkpoint")
    index: int = Field(0, ge=0, description="Synthetic sample index")
    seed: int = Field(0, description="Scene seed")
    degradation: Literal["none", "dark", "fog", "droplet"] = "none"
    score_threshold: float = Field(0.3, ge=0, le=1)


class InferResponse(BaseModel):
    model: str
    detections: List[Detection] = Field(default_factory=list)
    drivable_fraction: Optional[float] = None
    waterline_fraction: Optional[float] = None
    point_labels: Optional[List[int]] = None
