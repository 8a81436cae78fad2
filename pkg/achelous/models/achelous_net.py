"""The unified five-task network and its single-task trims."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from achelous.autograd.nn import Module
from achelous.autograd.tensor import Tensor
from achelous.models.config import ModelConfig
from achelous.models.encoders import ImageEncoder, RCNet
from achelous.models.heads import DetectHead, DetPrediction, SegHead
from achelous.models.neck import DualFPN
from achelous.models.pointnet import build_point_network
from core.config import TASK_NAMES
from core.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class AchelousOutput:
    det: Optional[DetPrediction] = None
    seg_targets: Optional[Tensor] = None
    seg_waterline: Optional[Tensor] = None
    pc: Optional[Tensor] = None


class AchelousNet(Module):
    """Image encoder + RCNet + dual-FPN feeding detection, two segmentation heads and a point network.

    ``tasks`` trims the network to a subset of det, seg_td, seg_wl and pc;
    modules no enabled task needs are not built.
    """

    def __init__(self, config: ModelConfig, tasks: Sequence[str] = TASK_NAMES):
        super().__init__()
        unknown = [t for t in tasks if t not in TASK_NAMES]
        if unknown or not tasks:
            raise ConfigError(f"tasks must be a non-empty subset of {TASK_NAMES}, got {list(tasks)}")
        self.config = config
        self.tasks = tuple(t for t in TASK_NAMES if t in tasks)
        image_tasks = [t for t in self.tasks if t != "pc"]
        streams = [s for s, t in (("a", "seg_td"), ("b", "seg_wl")) if t in self.tasks]
        self.uses_radar_maps = "det" in self.tasks or (bool(image_tasks) and config.neck.fusion == "backbone_fpn")

        if image_tasks:
            self.encoder = ImageEncoder(config.encoder)
            self.neck = DualFPN(config.encoder, config.neck, streams)
        if self.uses_radar_maps:
            self.rcnet = RCNet(config.encoder)
        if "det" in self.tasks:
            w = config.neck.width
            _, r3, r4, r5 = config.encoder.radar_channels
            self.det_head = DetectHead((w + r3, w + r4, w + r5), config.head)
        if "seg_td" in self.tasks:
            self.seg_targets = SegHead(config.neck.width, config.head.seg_classes_targets)
        if "seg_wl" in self.tasks:
            self.seg_waterline = SegHead(config.neck.width, config.head.seg_classes_waterline)
        if "pc" in self.tasks:
            self.pointnet = build_point_network(config.pointnet)
        logger.debug(f"Built {config.tag} for tasks {self.tasks} with {self.num_parameters()} parameters")

    @property
    def tag(self) -> str:
        return self.config.tag

    def forward(
        self,
        image: Optional[Tensor] = None,
        rvp: Optional[Tensor] = None,
        points: Optional[Tensor] = None,
        point_mask: Optional[np.ndarray] = None,
    ) -> AchelousOutput:
        out = AchelousOutput()
        if len(self.tasks) > 1 or self.tasks[0] != "pc":
            if image is None:
                raise ConfigError("image input is required for image tasks")
            pyramid = self.encoder(image)
            radar = None
            if self.uses_radar_maps:
                if rvp is None:
                    raise ConfigError("RVP input is required for detection or backbone fusion")
                radar = self.rcnet(rvp)
            fused = self.neck(pyramid, radar, detection="det" in self.tasks)
            if "det" in self.tasks:
                out.det = self.det_head(fused.detection_levels)
            if "seg_td" in self.tasks:
                out.seg_targets = self.seg_targets(fused.stream_a)
            if "seg_wl" in self.tasks:
                out.seg_waterline = self.seg_waterline(fused.stream_b)
        if "pc" in self.tasks:
            if points is None or point_mask is None:
                raise ConfigError("points and point_mask are required for point-cloud segmentation")
            out.pc = self.pointnet(points, point_mask)
        return out
