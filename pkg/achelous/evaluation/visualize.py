"""SVG charts (matplotlib, Agg backend) and five-panel prediction overlays."""
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from achelous.data.synth import BACKGROUND, CLASS_COLORS, DRIVABLE, Sample  # noqa: E402
from achelous.models.config import DETECTION_CLASSES  # noqa: E402
from achelous.radar.geometry import CLUTTER, pixel_coordinates, project_points  # noqa: E402

PALETTE = np.array([CLASS_COLORS[name] for name in DETECTION_CLASSES] + [(0.1, 0.5, 1.0), (0.0, 0.0, 0.0)])


def plot_loss_curves(train: Sequence[float], val: Sequence[float], path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(train) + 1)
    ax.plot(epochs, train, label="train")
    if len(val):
        ax.plot(epochs[:len(val)], val, label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (sum of task losses)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_latency(names: Sequence[str], means: Sequence[float], stds: Sequence[float], path,
                 title: str = "forward latency") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 4))
    positions = np.arange(len(names))
    ax.bar(positions, means, yerr=stds, capsize=3, color="#4878a8")
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("ms")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def draw_box(image: np.ndarray, box, color, thickness: int = 1) -> None:
    """Draw an xyxy rectangle outline in place on an [H,W,3] image."""
    height, width, _ = image.shape
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    x1, x2 = np.clip([x1, x2 - 1], 0, width - 1)
    y1, y2 = np.clip([y1, y2 - 1], 0, height - 1)
    for t in range(thickness):
        image[min(y1 + t, y2), x1:x2 + 1] = color
        image[max(y2 - t, y1), x1:x2 + 1] = color
        image[y1:y2 + 1, min(x1 + t, x2)] = color
        image[y1:y2 + 1, max(x2 - t, x1)] = color


def blend(image: np.ndarray, mask: np.ndarray, colors: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    return image * (1 - alpha * mask[..., None]) + colors * alpha * mask[..., None]


def render_panels(sample: Sample, prediction) -> np.ndarray:
    """Side-by-side [3,H,5W]: detections, target segmentation, drivable area, waterline, point labels."""
    base = sample.image.transpose(1, 2, 0).astype(np.float64)
    blank = base * 0.5
    panels = []

    det = base.copy()
    if prediction.detections is not None:
        for box, cls in zip(prediction.detections.boxes, prediction.detections.classes):
            draw_box(det, box, PALETTE[int(cls)])
    panels.append(det)

    if prediction.seg is not None:
        targets = prediction.seg < len(DETECTION_CLASSES)
        panels.append(blend(base, targets.astype(np.float64), PALETTE[np.minimum(prediction.seg, BACKGROUND)]))
        drivable = (prediction.seg == DRIVABLE).astype(np.float64)
        panels.append(blend(base, drivable, PALETTE[DRIVABLE]))
    else:
        panels.extend([blank, blank])

    if prediction.waterline is not None:
        panels.append(blend(base, prediction.waterline.astype(np.float64), np.array([1.0, 0.0, 1.0]), alpha=0.8))
    else:
        panels.append(blank)

    points = base * 0.5
    labels: Optional[np.ndarray] = prediction.point_labels
    if labels is not None and len(sample.radar):
        projection = project_points(sample.radar, sample.calib)
        rows, cols = pixel_coordinates(projection, (base.shape[1], base.shape[0]))
        colors = np.where((labels[projection.index] == CLUTTER)[:, None], 0.8, PALETTE[labels[projection.index]])
        points[rows, cols] = colors
    panels.append(points)
    return np.clip(np.concatenate(panels, axis=1), 0, 1).transpose(2, 0, 1)
