"""Text formats for radar point clouds, point labels and calibration files."""
from pathlib import Path

import numpy as np

from achelous.radar.geometry import Calibration, RadarFrame
from core.config import parse_key_values
from core.errors import ConfigError, DatasetError


def write_point_cloud(path, frame: RadarFrame) -> None:
    """One ``x y z velocity power`` record per line, printed with round-trip precision."""
    lines = [" ".join(f"{value:.17g}" for value in row) for row in frame.as_array()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_point_cloud(path) -> RadarFrame:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "point cloud file not found")
    rows = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise DatasetError(path, f"line {number}: expected 5 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as e:
            raise DatasetError(path, f"line {number}: {e}") from e
    return RadarFrame.from_array(np.array(rows).reshape(-1, 5))


def write_point_labels(path, labels: np.ndarray) -> None:
    Path(path).write_text("".join(f"{int(label)}\n" for label in labels), encoding="utf-8")


def read_point_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "point label file not found")
    try:
        return np.array([int(line) for line in path.read_text(encoding="utf-8").split()], dtype=np.int64)
    except ValueError as e:
        raise DatasetError(path, f"malformed label: {e}") from e


def write_calibration(path, calib: Calibration) -> None:
    lines = [f"{key}: {value!r}" for key, value in calib.to_mapping().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration(path) -> Calibration:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "calibration file not found")
    try:
        raw = parse_key_values(path.read_text(encoding="utf-8"))
    except ConfigError as e:
        raise DatasetError(path, str(e)) from e
    values = {}
    for key, value in raw.items():
        try:
            values[key] = float(value)
        except ValueError as e:
            raise DatasetError(path, f"bad value for '{key}': {e}") from e
    try:
        return Calibration.from_mapping(values)
    except ConfigError as e:
        raise DatasetError(path, str(e)) from e
