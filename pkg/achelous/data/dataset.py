"""On-disk dataset layout, 7:2:1 splits and mini-batch collation."""
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from achelous.autograd.checkpoint import load_tensors, save_tensors
from achelous.autograd.tensor import Tensor, default_dtype
from achelous.data.formats import read_pgm, read_ppm, read_voc, write_pgm, write_ppm, write_voc
from achelous.data.synth import Sample
from achelous.models.config import DETECTION_CLASSES
from achelous.radar.io import (
    read_calibration,
    read_point_cloud,
    read_point_labels,
    write_calibration,
    write_point_cloud,
    write_point_labels,
)
from core.errors import DatasetError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_RATIO = (7, 2, 1)
LAYOUT = ("images", "rvp", "pointclouds", "annotations", "masks", "calib", "splits")


def stem(index: int) -> str:
    return f"{index:06d}"


def split_indices(indices: Sequence[int]) -> Dict[str, List[int]]:
    """Order by a hash of the index, then cut 7:2:1; each split is returned in index order."""
    ordered = sorted(indices, key=lambda i: hashlib.md5(stem(i).encode()).hexdigest())
    total = len(ordered)
    n_train = int(round(total * SPLIT_RATIO[0] / sum(SPLIT_RATIO)))
    n_val = int(round(total * SPLIT_RATIO[1] / sum(SPLIT_RATIO)))
    n_val = min(n_val, total - n_train)
    parts = (ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:])
    return {name: sorted(part) for name, part in zip(SPLITS, parts)}


def write_sample(root: Path, sample: Sample) -> None:
    name = stem(sample.index)
    size = sample.image.shape[2], sample.image.shape[1]
    write_ppm(root / "images" / f"{name}.ppm", sample.image)
    save_tensors(root / "rvp" / f"{name}.achl", {"rvp": sample.rvp})
    write_point_cloud(root / "pointclouds" / f"{name}.txt", sample.radar)
    write_point_labels(root / "pointclouds" / f"{name}.labels", sample.point_labels)
    write_voc(
        root / "annotations" / f"{name}.xml",
        f"{name}.ppm",
        size,
        sample.boxes,
        [DETECTION_CLASSES[c] for c in sample.classes],
        extra={"index": sample.index, "degradation": sample.degradation},
    )
    write_pgm(root / "masks" / f"{name}_seg.pgm", sample.seg)
    write_pgm(root / "masks" / f"{name}_waterline.pgm", sample.waterline)
    write_calibration(root / "calib" / f"{name}.txt", sample.calib)


def export_dataset(samples: Iterable[Sample], root) -> Dict[str, List[int]]:
    """Write every sample plus split lists under ``root``; returns the splits."""
    root = Path(root)
    for folder in LAYOUT:
        (root / folder).mkdir(parents=True, exist_ok=True)
    indices = []
    for sample in samples:
        write_sample(root, sample)
        indices.append(sample.index)
    splits = split_indices(indices)
    for name, members in splits.items():
        (root / "splits" / f"{name}.txt").write_text("".join(f"{stem(i)}\n" for i in members))
    logger.info(
        f"Exported {len(indices)} samples to {root} "
        f"(train={len(splits['train'])}, val={len(splits['val'])}, test={len(splits['test'])})"
    )
    return splits


def read_sample(root: Path, index: int) -> Sample:
    name = stem(index)
    names, boxes, fields = read_voc(root / "annotations" / f"{name}.xml")
    try:
        classes = np.array([DETECTION_CLASSES.index(n) for n in names], dtype=np.int64)
    except ValueError as e:
        raise DatasetError(root / "annotations" / f"{name}.xml", f"unknown class: {e}") from e
    rvp_path = root / "rvp" / f"{name}.achl"
    rvp = load_tensors(rvp_path)
    if "rvp" not in rvp:
        raise DatasetError(rvp_path, "missing 'rvp' tensor")
    radar = read_point_cloud(root / "pointclouds" / f"{name}.txt")
    labels_path = root / "pointclouds" / f"{name}.labels"
    labels = read_point_labels(labels_path)
    if len(labels) != len(radar):
        raise DatasetError(labels_path, f"{len(labels)} labels for {len(radar)} points")
    return Sample(
        index=index,
        image=read_ppm(root / "images" / f"{name}.ppm"),
        rvp=rvp["rvp"],
        radar=radar,
        calib=read_calibration(root / "calib" / f"{name}.txt"),
        boxes=boxes,
        classes=classes,
        seg=read_pgm(root / "masks" / f"{name}_seg.pgm"),
        waterline=read_pgm(root / "masks" / f"{name}_waterline.pgm"),
        point_labels=labels,
        degradation=fields.get("degradation") or "none",
    )


class SynthDataset:
    """Handle over an exported dataset directory; samples are read lazily."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(self.root, "dataset directory not found")
        self.splits: Dict[str, List[int]] = {}
        for name in SPLITS:
            path = self.root / "splits" / f"{name}.txt"
            if not path.is_file():
                raise DatasetError(path, "split list not found")
            try:
                self.splits[name] = [int(line) for line in path.read_text().split()]
            except ValueError as e:
                raise DatasetError(path, f"bad split entry: {e}") from e
        self.indices = sorted(i for members in self.splits.values() for i in members)

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, index: int) -> Sample:
        return read_sample(self.root, index)

    def split(self, name: str) -> List[int]:
        if name not in self.splits:
            raise DatasetError(self.root / "splits", f"unknown split '{name}', expected one of {SPLITS}")
        return list(self.splits[name])

    def load(self, indices: Optional[Sequence[int]] = None) -> List[Sample]:
        return [self[i] for i in (self.indices if indices is None else indices)]


def load_dataset(root) -> SynthDataset:
    dataset = SynthDataset(root)
    logger.info(f"Loaded dataset {dataset.root} with {len(dataset)} samples")
    return dataset


@dataclass
class Batch:
    image: Tensor  # [N,3,S,S]
    rvp: Tensor  # [N,3,S,S]
    points: Tensor  # [N,P,5], zero padded
    point_mask: np.ndarray  # [N,P] bool
    point_labels: np.ndarray  # [N,P] int64, padding labelled 0 and masked out
    boxes: List[np.ndarray]
    classes: List[np.ndarray]
    seg: np.ndarray  # [N,S,S] int64
    waterline: np.ndarray  # [N,S,S] int64
    indices: List[int]

    def __len__(self) -> int:
        return len(self.indices)


def collate(samples: Sequence[Sample], zero_rvp: bool = False) -> Batch:
    """Stack samples; point clouds are padded to the largest cloud (at least one slot)."""
    if not samples:
        raise DatasetError("<batch>", "cannot collate an empty batch")
    longest = max(1, max(len(s.radar) for s in samples))
    points = np.zeros((len(samples), longest, 5))
    mask = np.zeros((len(samples), longest), dtype=bool)
    labels = np.zeros((len(samples), longest), dtype=np.int64)
    for i, sample in enumerate(samples):
        count = len(sample.radar)
        points[i, :count] = sample.radar.as_array()
        mask[i, :count] = True
        labels[i, :count] = sample.point_labels
    rvp = np.stack([s.rvp for s in samples])
    if zero_rvp:
        rvp = np.zeros_like(rvp)
    return Batch(
        image=Tensor(np.stack([s.image for s in samples]), dtype=default_dtype()),
        rvp=Tensor(rvp, dtype=default_dtype()),
        points=Tensor(points, dtype=default_dtype()),
        point_mask=mask,
        point_labels=labels,
        boxes=[s.boxes for s in samples],
        classes=[s.classes for s in samples],
        seg=np.stack([s.seg for s in samples]).astype(np.int64),
        waterline=np.stack([s.waterline for s in samples]).astype(np.int64),
        indices=[s.index for s in samples],
    )
