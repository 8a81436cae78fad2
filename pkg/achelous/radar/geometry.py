"""Radar-to-camera projection, RVP rasterization and point auto-annotation."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

CLUTTER = 7
EXTRINSIC_KEYS = ("r11", "r12", "r13", "tx", "r21", "r22", "r23", "ty", "r31", "r32", "r33", "tz")


@dataclass
class RadarFrame:
    """One radar sweep: positions [P,3] in metres (radar frame), radial velocity and power per point."""

    xyz: np.ndarray
    velocity: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(-1)
        self.power = np.asarray(self.power, dtype=np.float64).reshape(-1)
        if not (len(self.xyz) == len(self.velocity) == len(self.power)):
            raise ShapeError(
                f"radar frame fields disagree: {len(self.xyz)} positions, "
                f"{len(self.velocity)} velocities, {len(self.power)} powers"
            )

    @property
    def range(self) -> np.ndarray:
        return np.linalg.norm(self.xyz, axis=1)

    def __len__(self) -> int:
        return len(self.xyz)

    def as_array(self) -> np.ndarray:
        """[P,5] rows of (x, y, z, velocity, power)."""
        return np.column_stack([self.xyz, self.velocity, self.power])

    @classmethod
    def from_array(cls, rows: np.ndarray) -> "RadarFrame":
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
        return cls(rows[:, :3], rows[:, 3], rows[:, 4])

    @classmethod
    def empty(cls) -> "RadarFrame":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0))


@dataclass
class Calibration:
    """Rigid radar->camera extrinsic plus a pinhole intrinsic for a ``width`` x ``height`` image."""

    extrinsic: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        if self.extrinsic.shape != (4, 4):
            raise ConfigError(f"extrinsic must be 4x4, got {self.extrinsic.shape}")
        rotation = self.extrinsic[:3, :3]
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6) or np.linalg.det(rotation) <= 0:
            raise ConfigError("extrinsic rotation block must be orthonormal with determinant +1")
        if not np.allclose(self.extrinsic[3], [0, 0, 0, 1]):
            raise ConfigError("extrinsic bottom row must be [0, 0, 0, 1]")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def intrinsic(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def pinhole(cls, fx: float, fy: float, cx: float, cy: float, width: int, height: int,
                extrinsic: Optional[np.ndarray] = None) -> "Calibration":
        return cls(np.eye(4) if extrinsic is None else extrinsic, fx, fy, cx, cy, width, height)

    def to_mapping(self) -> Dict[str, float]:
        values = dict(zip(EXTRINSIC_KEYS, self.extrinsic[:3].reshape(-1).tolist()))
        values.update(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)
        return values

    @classmethod
    def from_mapping(cls, values: Dict[str, float]) -> "Calibration":
        missing = [k for k in EXTRINSIC_KEYS + ("fx", "fy", "cx", "cy", "width", "height") if k not in values]
        if missing:
            raise ConfigError(f"calibration is missing keys {missing}")
        extrinsic = np.eye(4)
        extrinsic[:3] = np.array([float(values[k]) for k in EXTRINSIC_KEYS]).reshape(3, 4)
        return cls(
            extrinsic,
            float(values["fx"]), float(values["fy"]), float(values["cx"]), float(values["cy"]),
            int(float(values["width"])), int(float(values["height"])),
        )


class RVPBounds(BaseModel):
    """Fixed normalization bounds shared by every frame."""

    r_max: float = Field(100.0, description="Range mapped to 1.0 (metres)")
    v_min: float = Field(-20.0, description="Velocity mapped to 0.0 (m/s)")
    v_max: float = Field(20.0, description="Velocity mapped to 1.0 (m/s)")
    p_min: float = Field(0.0, description="Power mapped to 0.0 (dB)")
    p_max: float = Field(60.0, description="Power mapped to 1.0 (dB)")

    def check(self) -> None:
        if self.r_max <= 0:
            raise ConfigError(f"degenerate range bound r_max={self.r_max}")
        if self.v_max <= self.v_min:
            raise ConfigError(f"degenerate velocity bounds [{self.v_min}, {self.v_max}]")
        if self.p_max <= self.p_min:
            raise ConfigError(f"degenerate power bounds [{self.p_min}, {self.p_max}]")


@dataclass
class Projection:
    """Surviving points after culling: source index, sub-pixel (u, v) and camera depth."""

    index: np.ndarray
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    culled: int = 0
    image_size: Tuple[int, int] = field(default=(0, 0))

    def __len__(self) -> int:
        return len(self.index)


def rigid_transform(rotation: np.ndarray, translation) -> np.ndarray:
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = translation
    return transform


def invert_rigid(transform: np.ndarray) -> np.ndarray:
    rotation = transform[:3, :3]
    return rigid_transform(rotation.T, -rotation.T @ transform[:3, 3])


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def project_points(frame: RadarFrame, calib: Calibration) -> Projection:
    """Pinhole projection after the extrinsic transform.

    Points with non-positive camera depth or falling outside [0, W) x [0, H)
    are culled silently; the count is kept on the result.
    """
    homogeneous = np.column_stack([frame.xyz, np.ones(len(frame))])
    camera = homogeneous @ calib.extrinsic.T
    depth = camera[:, 2]
    in_front = depth > 0
    safe = np.where(in_front, depth, 1.0)
    u = calib.fx * camera[:, 0] / safe + calib.cx
    v = calib.fy * camera[:, 1] / safe + calib.cy
    keep = in_front & (u >= 0) & (u < calib.width) & (v >= 0) & (v < calib.height)
    index = np.flatnonzero(keep)
    culled = len(frame) - len(index)
    logger.debug(f"project_points: kept {len(index)} of {len(frame)} points, culled {culled}")
    return Projection(index, u[keep], v[keep], depth[keep], culled, (calib.width, calib.height))


def pixel_coordinates(projection: Projection, out_size: Optional[Tuple[int, int]] = None):
    """Integer pixels at ``out_size`` (W, H): coordinates are scaled first, then rounded and clamped."""
    width, height = projection.image_size
    out_w, out_h = out_size or (width, height)
    u = projection.u * (out_w / width)
    v = projection.v * (out_h / height)
    cols = np.clip(np.floor(u + 0.5).astype(np.int64), 0, out_w - 1)
    rows = np.clip(np.floor(v + 0.5).astype(np.int64), 0, out_h - 1)
    return rows, cols


def rasterize_rvp(
    frame: RadarFrame,
    projection: Projection,
    bounds: Optional[RVPBounds] = None,
    out_size: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Rasterize projected points into a [3,H,W] range/velocity/power map in [0, 1].

    On pixel collisions the nearest-range point wins; equal ranges go to the
    lowest point index, so the result does not depend on point order.
    """
    bounds = bounds or RVPBounds()
    bounds.check()
    width, height = out_size or projection.image_size
    rvp = np.zeros((3, height, width), dtype=np.float32)
    if len(projection) == 0:
        return rvp

    index = projection.index
    rng = frame.range[index]
    values = np.stack([
        rng / bounds.r_max,
        (frame.velocity[index] - bounds.v_min) / (bounds.v_max - bounds.v_min),
        (frame.power[index] - bounds.p_min) / (bounds.p_max - bounds.p_min),
    ])
    values = np.clip(values, 0.0, 1.0)
    rows, cols = pixel_coordinates(projection, (width, height))
    order = np.lexsort((index, rng))
    flat = (rows * width + cols)[order]
    _, first = np.unique(flat, return_index=True)
    winners = order[first]
    rvp[:, rows[winners], cols[winners]] = values[:, winners]
    return rvp


def annotate_points(
    frame: RadarFrame,
    projection: Projection,
    boxes: np.ndarray,
    classes: np.ndarray,
    velocity_eps: float = 1.0,
) -> np.ndarray:
    """Label each point with a box class or clutter.

    A projected point inside one or more boxes is considered for the
    smallest-area containing box; it takes that box's class when its velocity
    lies within ``velocity_eps`` of the median velocity of all points inside
    the box. Every other point, culled ones included, is clutter.
    """
    labels = np.full(len(frame), CLUTTER, dtype=np.int64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    if len(boxes) == 0 or len(projection) == 0:
        return labels

    u, v = projection.u[:, None], projection.v[:, None]
    inside = (u >= boxes[:, 0]) & (u <= boxes[:, 2]) & (v >= boxes[:, 1]) & (v <= boxes[:, 3])
    velocity = frame.velocity[projection.index]
    medians = np.array([np.median(velocity[inside[:, b]]) if inside[:, b].any() else np.nan
                        for b in range(len(boxes))])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    masked_area = np.where(inside, areas[None, :], np.inf)
    owner = masked_area.argmin(axis=1)
    has_owner = inside.any(axis=1)
    close = np.abs(velocity - medians[owner]) <= velocity_eps
    hit = has_owner & close
    labels[projection.index[hit]] = classes[owner[hit]]
    return labels
