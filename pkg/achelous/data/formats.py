"""Netpbm images and VOC-style XML annotations."""
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from core.errors import DatasetError


def _read_header(path: Path, blob: bytes, magic: bytes) -> Tuple[int, int, int, int]:
    """Parse ``magic width height maxval`` (comments allowed); returns the values and payload offset."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(path, "truncated netpbm header")
        tokens.append(blob[start:pos])
    if tokens[0] != magic:
        raise DatasetError(path, f"expected {magic.decode()} image, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DatasetError(path, f"bad netpbm header: {e}") from e
    if maxval != 255:
        raise DatasetError(path, f"only 8-bit images are supported, maxval={maxval}")
    return width, height, maxval, pos + 1


def write_ppm(path, image: np.ndarray) -> None:
    """Write a [3,H,W] float image in [0,1] as binary PPM."""
    pixels = np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    _, height, width = pixels.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "image not found")
    blob = path.read_bytes()
    width, height, _, offset = _read_header(path, blob, b"P6")
    expected = width * height * 3
    if len(blob) - offset < expected:
        raise DatasetError(path, f"truncated pixel data: {len(blob) - offset} of {expected} bytes")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=expected, offset=offset)
    return (pixels.reshape(height, width, 3).transpose(2, 0, 1) / 255.0).astype(np.float32)


def write_pgm(path, mask: np.ndarray) -> None:
    """Write an [H,W] class-index mask as binary PGM."""
    mask = np.asarray(mask)
    if mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise ValueError("class indices must fit in one byte")
    height, width = mask.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + mask.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "mask not found")
    blob = path.read_bytes()
    width, height, _, offset = _read_header(path, blob, b"P5")
    if len(blob) - offset < width * height:
        raise DatasetError(path, "truncated mask data")
    return np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=offset).reshape(height, width).copy()


def write_voc(path, filename: str, size: Tuple[int, int], boxes: np.ndarray, names, extra: Dict[str, str] = None) -> None:
    """VOC-style annotation: one ``object`` with ``name`` and integer ``bndbox`` per box."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = filename
    size_el = ET.SubElement(root, "size")
    ET.SubElement(size_el, "width").text = str(size[0])
    ET.SubElement(size_el, "height").text = str(size[1])
    ET.SubElement(size_el, "depth").text = "3"
    for key, value in (extra or {}).items():
        ET.SubElement(root, key).text = str(value)
    for box, name in zip(np.asarray(boxes).reshape(-1, 4), names):
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = name
        ET.SubElement(obj, "difficult").text = "0"
        bndbox = ET.SubElement(obj, "bndbox")
        for key, value in zip(("xmin", "ymin", "xmax", "ymax"), box):
            ET.SubElement(bndbox, key).text = str(int(round(float(value))))
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def read_voc(path):
    """Returns (names, boxes [B,4], fields) where fields holds the extra top-level tags."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(path, "annotation not found")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as e:
        raise DatasetError(path, f"malformed XML: {e}") from e
    names, boxes = [], []
    try:
        for obj in root.iter("object"):
            names.append(obj.findtext("name"))
            bndbox = obj.find("bndbox")
            boxes.append([float(bndbox.findtext(k)) for k in ("xmin", "ymin", "xmax", "ymax")])
    except (AttributeError, TypeError, ValueError) as e:
        raise DatasetError(path, f"malformed object entry: {e}") from e
    fields = {child.tag: child.text for child in root if child.tag not in ("object", "size")}
    return names, np.array(boxes, dtype=np.float64).reshape(-1, 4), fields
