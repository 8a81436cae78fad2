"""Procedural water scenes: camera image, radar sweep and ground truth for every task."""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from achelous.models.config import DETECTION_CLASSES
from achelous.radar.geometry import (
    Calibration,
    RadarFrame,
    RVPBounds,
    annotate_points,
    project_points,
    rasterize_rvp,
)

logger = logging.getLogger(__name__)

DRIVABLE = 7
BACKGROUND = 8

# Physical (width, height) in metres.
CLASS_SIZES = {
    "pier": (8.0, 2.0),
    "buoy": (1.0, 1.2),
    "sailor": (0.6, 1.8),
    "ship": (20.0, 8.0),
    "boat": (5.0, 2.5),
    "vessel": (12.0, 5.0),
    "kayak": (3.5, 0.8),
}
# Radar cross-section in square metres.
CLASS_RCS = {"pier": 50.0, "buoy": 2.0, "sailor": 1.0, "ship": 500.0, "boat": 20.0, "vessel": 100.0, "kayak": 3.0}
CLASS_COLORS = {
    "pier": (0.55, 0.38, 0.2),
    "buoy": (0.9, 0.15, 0.1),
    "sailor": (0.95, 0.85, 0.2),
    "ship": (0.92, 0.92, 0.9),
    "boat": (0.95, 0.55, 0.1),
    "vessel": (0.3, 0.3, 0.32),
    "kayak": (0.2, 0.8, 0.3),
}
SKY_TOP = np.array([0.55, 0.7, 0.9])
SKY_BOTTOM = np.array([0.8, 0.85, 0.95])
SHORE = np.array([0.25, 0.35, 0.2])
WATER = np.array([0.1, 0.3, 0.45])
DROPLET = np.array([0.6, 0.62, 0.6])

SCENE_STREAM, RADAR_STREAM, DEGRADATION_STREAM, TEXTURE_STREAM = 0, 1, 2, 3


class SceneSpec(BaseModel):
    """Parameters of the scene distribution; a (spec, index) pair fixes one sample."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    image_size: int = Field(320, ge=32, description="Square image side in pixels")
    min_targets: int = Field(1, ge=0)
    max_targets: int = Field(4, ge=0)
    horizon: Tuple[float, float] = Field((0.3, 0.5), description="Horizon row range as a fraction of the image height")
    shore_amplitude: float = Field(0.02, ge=0, description="Shoreline waviness as a fraction of the image height")
    shore_band: float = Field(0.06, ge=0, description="Height of the land strip above the shoreline")
    target_scale: Tuple[float, float] = Field((0.1, 0.3), description="Apparent size of the larger target side")
    camera_height: float = Field(2.0, gt=0, description="Camera height above water (m)")
    clutter_rate: float = Field(8.0, ge=0, description="Mean number of water clutter points")
    range_noise: float = Field(0.5, ge=0, description="Gaussian range noise sigma (m)")
    velocity_eps: float = Field(1.0, gt=0, description="Velocity tolerance for point auto-annotation (m/s)")
    min_box: int = Field(3, ge=1, description="Smallest box side in pixels")
    degradation: Literal["none", "dark", "fog", "droplet"] = "none"

    @model_validator(mode="after")
    def _check(self):
        if self.min_targets > self.max_targets:
            raise ValueError(f"min_targets {self.min_targets} exceeds max_targets {self.max_targets}")
        low, high = self.horizon
        if not 0 < low <= high < 1:
            raise ValueError(f"horizon range {self.horizon} must lie inside (0, 1)")
        if not 0 < self.target_scale[0] <= self.target_scale[1] < 1:
            raise ValueError(f"target_scale {self.target_scale} must lie inside (0, 1)")
        return self


@dataclass
class Target:
    class_id: int
    box: np.ndarray  # integer-valued xyxy; pixel columns [x1, x2), rows [y1, y2)
    depth: float
    rows: np.ndarray  # silhouette pixels
    cols: np.ndarray

    @property
    def name(self) -> str:
        return DETECTION_CLASSES[self.class_id]

    @property
    def area(self) -> int:
        return len(self.rows)


@dataclass
class SceneGeometry:
    """Camera-frame layout of one scene, shared by the renderer and the radar simulator."""

    index: int
    calib: Calibration
    shoreline: np.ndarray  # water starts at this row, per column
    targets: List[Target] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.calib.width

    @property
    def boxes(self) -> np.ndarray:
        return np.array([t.box for t in self.targets], dtype=np.float64).reshape(-1, 4)

    @property
    def classes(self) -> np.ndarray:
        return np.array([t.class_id for t in self.targets], dtype=np.int64)


@dataclass
class Sample:
    index: int
    image: np.ndarray  # [3,S,S] float32, multiples of 1/255
    rvp: np.ndarray  # [3,S,S] float32
    radar: RadarFrame
    calib: Calibration
    boxes: np.ndarray  # [B,4] float64
    classes: np.ndarray  # [B] int64
    seg: np.ndarray  # [S,S] uint8, 0..6 targets, 7 drivable, 8 background
    waterline: np.ndarray  # [S,S] uint8
    point_labels: np.ndarray  # [P] int64, 7 is clutter
    degradation: str = "none"


def stream(spec: SceneSpec, index: int, kind: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, index, kind])


def silhouette(name: str, height: int, width: int) -> np.ndarray:
    """Flat class shape inside a ``height`` x ``width`` box."""
    y = ((np.arange(height) + 0.5) / height)[:, None]
    x = ((np.arange(width) + 0.5) / width)[None, :]
    dx = np.abs(2 * x - 1)
    if name == "buoy":
        mask = dx ** 2 + (2 * y - 1) ** 2 <= 1
    elif name == "sailor":
        mask = np.broadcast_to(dx <= 0.6, (height, width))
    elif name == "ship":
        mask = (y >= 0.4) | (dx <= 0.5)
    elif name == "boat":
        mask = (y >= 0.35) & (dx <= 1 - 0.4 * (y - 0.35) / 0.65)
    elif name == "vessel":
        mask = (y >= 0.5) | (dx <= 0.3)
    elif name == "kayak":
        mask = dx ** 2 + ((y - 0.6) / 0.4) ** 2 <= 1
    else:
        mask = np.ones((height, width), dtype=bool)
    mask = np.array(np.broadcast_to(mask, (height, width)))
    if not mask.any():
        mask[height // 2, width // 2] = True
    return mask


def _overlaps(box: np.ndarray, others: List[Target]) -> bool:
    for other in others:
        b = other.box
        if box[0] < b[2] + 1 and b[0] < box[2] + 1 and box[1] < b[3] + 1 and b[1] < box[3] + 1:
            return True
    return False


def _place_target(spec: SceneSpec, rng: np.random.Generator, class_id: int, cy: float,
                  shoreline: np.ndarray, placed: List[Target], attempts: int = 40) -> Optional[Target]:
    """Draw a non-overlapping pose for one target resting on the water, or None."""
    size = spec.image_size
    width_m, height_m = CLASS_SIZES[DETECTION_CLASSES[class_id]]
    for _ in range(attempts):
        depth = max(width_m, height_m) / rng.uniform(*spec.target_scale)
        w = max(size * width_m / depth, spec.min_box)
        h = max(size * height_m / depth, spec.min_box)
        bottom = cy + size * spec.camera_height / depth
        if w >= size - 2:
            continue
        center = rng.uniform(w / 2, size - w / 2)
        x1, x2 = int(np.floor(center - w / 2)), int(np.ceil(center + w / 2))
        y1, y2 = int(np.floor(bottom - h)), int(np.ceil(bottom))
        if x1 < 0 or x2 > size or y1 < 0 or y2 > size:
            continue
        if y2 - 1 < shoreline[x1:x2].max() + 1:
            continue
        box = np.array([x1, y1, x2, y2], dtype=np.float64)
        if _overlaps(box, placed):
            continue
        mask = silhouette(DETECTION_CLASSES[class_id], y2 - y1, x2 - x1)
        rows, cols = np.nonzero(mask)
        return Target(class_id, box, float(depth), rows + y1, cols + x1)
    return None


def layout_scene(spec: SceneSpec, index: int) -> SceneGeometry:
    """Horizon, shoreline and target poses for sample ``index``."""
    rng = stream(spec, index, SCENE_STREAM)
    size = spec.image_size
    cy = rng.uniform(*spec.horizon) * size
    calib = Calibration.pinhole(float(size), float(size), size / 2.0, float(cy), size, size)
    phase = rng.uniform(0, 2 * np.pi)
    wavelength = rng.uniform(0.5, 1.5) * size
    columns = np.arange(size)
    shoreline = cy + spec.shore_amplitude * size * np.sin(2 * np.pi * columns / wavelength + phase)
    geometry = SceneGeometry(index, calib, shoreline)

    count = int(rng.integers(spec.min_targets, spec.max_targets + 1))
    for _ in range(count):
        class_id = int(rng.integers(len(DETECTION_CLASSES)))
        target = _place_target(spec, rng, class_id, cy, shoreline, geometry.targets)
        if target is not None:
            geometry.targets.append(target)
    return geometry


def render(geometry: SceneGeometry, spec: SceneSpec, rng: np.random.Generator):
    """Returns (image [3,S,S], seg [S,S], waterline [S,S]) before degradation."""
    size = geometry.size
    rows = np.arange(size)[:, None].astype(np.float64)
    shore = geometry.shoreline[None, :]
    water = rows >= shore
    land = ~water & (rows >= shore - spec.shore_band * size)

    t = np.clip(rows / max(geometry.calib.cy, 1.0), 0, 1)[..., None]
    image = np.broadcast_to(SKY_TOP * (1 - t) + SKY_BOTTOM * t, (size, size, 3)).copy()
    image[land] = SHORE
    cols = np.arange(size)[None, :]
    ripple = 0.05 * np.sin(0.7 * cols + 2.5 * np.sqrt(np.maximum(rows - shore, 0)))
    texture = WATER[None, None, :] + (ripple + rng.normal(0, 0.02, (size, size)))[..., None]
    image[water] = texture[water]

    seg = np.full((size, size), BACKGROUND, dtype=np.uint8)
    seg[water] = DRIVABLE
    band = max(1, int(round(size / 100)))
    waterline = (np.abs(rows - shore) <= band).astype(np.uint8)

    for target in geometry.targets:
        y1 = target.box[1]
        shade = 0.8 + 0.2 * (1 - (target.rows - y1) / max(target.box[3] - y1, 1))
        image[target.rows, target.cols] = np.outer(shade, CLASS_COLORS[target.name])
        seg[target.rows, target.cols] = target.class_id
    return np.clip(image, 0, 1).transpose(2, 0, 1), seg, waterline


def degrade(image: np.ndarray, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Visual degradation applied after rendering; radar is never touched."""
    if mode == "dark":
        return image * 0.15
    if mode == "fog":
        return 0.4 * image + 0.6
    if mode == "droplet":
        image = image.copy()
        _, height, width = image.shape
        rows, cols = np.mgrid[0:height, 0:width]
        for _ in range(int(rng.integers(3, 7))):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            ry, rx = rng.uniform(0.05, 0.12, size=2) * np.array([height, width])
            inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1
            image[:, inside] = DROPLET[:, None]
        return image
    return image


def _ray_points(calib: Calibration, rows: np.ndarray, cols: np.ndarray, depth: np.ndarray,
                range_noise: float, rng: np.random.Generator) -> np.ndarray:
    """Back-project pixels at ``depth`` and perturb range along each ray, keeping the pixel fixed."""
    rays = np.column_stack([(cols - calib.cx) / calib.fx, (rows - calib.cy) / calib.fy, np.ones(len(rows))])
    points = rays * np.asarray(depth, dtype=np.float64).reshape(-1, 1)
    true_range = np.linalg.norm(points, axis=1)
    noisy = np.maximum(true_range + rng.normal(0, range_noise, len(rows)), 0.5)
    return points * (noisy / true_range)[:, None]


def power_db(rcs: float, distance: np.ndarray) -> np.ndarray:
    """Received power in dB, inverse-square in range."""
    return 10 * np.log10(rcs) + 70 - 20 * np.log10(distance)


def simulate_radar(geometry: SceneGeometry, spec: SceneSpec, rng: Optional[np.random.Generator] = None) -> RadarFrame:
    """Radar sweep in the camera frame: target surface returns plus water clutter."""
    rng = rng or stream(spec, geometry.index, RADAR_STREAM)
    calib, size = geometry.calib, geometry.size
    xyz, velocity, power = [], [], []
    for target in geometry.targets:
        count = int(np.clip(round(300 * target.area / size ** 2), 2, 40))
        count = min(count, target.area)
        pick = rng.choice(target.area, size=count, replace=False)
        x1, y1, x2, y2 = target.box
        # sub-pixel jitter that keeps every return strictly inside its box and on its pixel
        cols = np.clip(target.cols[pick] + rng.uniform(-0.25, 0.25, count), x1 + 0.05, x2 - 0.05)
        rows = np.clip(target.rows[pick] + rng.uniform(-0.25, 0.25, count), y1 + 0.05, y2 - 0.05)
        points = _ray_points(calib, rows, cols, np.full(count, target.depth), spec.range_noise, rng)
        xyz.append(points)
        velocity.append(np.full(count, rng.uniform(-8, 8)))
        power.append(power_db(CLASS_RCS[target.name], np.linalg.norm(points, axis=1)))

    clutter_rows, clutter_cols = [], []
    boxes = geometry.boxes
    wanted = int(rng.poisson(spec.clutter_rate))
    if not geometry.targets:
        wanted = max(wanted, 1)  # keep every cloud non-empty
    attempts = 0
    while len(clutter_rows) < wanted and attempts < 20 * wanted:
        attempts += 1
        col = int(rng.integers(size))
        low = int(np.ceil(max(geometry.shoreline[col], calib.cy))) + 2
        if low >= size:
            continue
        row = int(rng.integers(low, size))
        if any(b[0] - 1 <= col <= b[2] + 1 and b[1] - 1 <= row <= b[3] + 1 for b in boxes):
            continue
        clutter_rows.append(row)
        clutter_cols.append(col)
    if clutter_rows:
        rows, cols = np.array(clutter_rows, dtype=np.float64), np.array(clutter_cols, dtype=np.float64)
        depth = calib.fy * spec.camera_height / (rows - calib.cy)
        points = _ray_points(calib, rows, cols, depth, spec.range_noise, rng)
        xyz.append(points)
        velocity.append(rng.uniform(-20, 20, len(rows)))
        power.append(power_db(0.5, np.linalg.norm(points, axis=1)) + rng.normal(0, 3, len(rows)))

    if not xyz:
        return RadarFrame.empty()
    frame = RadarFrame(np.concatenate(xyz), np.concatenate(velocity), np.concatenate(power))
    order = rng.permutation(len(frame))
    return RadarFrame(frame.xyz[order], frame.velocity[order], frame.power[order])


def generate_sample(spec: SceneSpec, index: int, bounds: Optional[RVPBounds] = None) -> Sample:
    """Deterministic in (spec.seed, index); the degradation mode only changes the image."""
    geometry = layout_scene(spec, index)
    image, seg, waterline = render(geometry, spec, stream(spec, index, TEXTURE_STREAM))
    image = degrade(image, spec.degradation, stream(spec, index, DEGRADATION_STREAM))
    image = (np.rint(np.clip(image, 0, 1) * 255) / 255).astype(np.float32)

    radar = simulate_radar(geometry, spec)
    projection = project_points(radar, geometry.calib)
    rvp = rasterize_rvp(radar, projection, bounds, out_size=(geometry.size, geometry.size))
    labels = annotate_points(radar, projection, geometry.boxes, geometry.classes, spec.velocity_eps)
    return Sample(
        index=index,
        image=image,
        rvp=rvp,
        radar=radar,
        calib=geometry.calib,
        boxes=geometry.boxes,
        classes=geometry.classes,
        seg=seg,
        waterline=waterline,
        point_labels=labels,
        degradation=spec.degradation,
    )


def generate_samples(spec: SceneSpec, count: int, start: int = 0) -> List[Sample]:
    samples = [generate_sample(spec, index) for index in range(start, start + count)]
    logger.info(f"Synthesized {count} samples (seed={spec.seed}, degradation={spec.degradation})")
    return samples
