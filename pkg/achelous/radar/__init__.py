from achelous.radar.geometry import (
    CLUTTER,
    Calibration,
    Projection,
    RadarFrame,
    RVPBounds,
    annotate_points,
    project_points,
    rasterize_rvp,
)

__all__ = [
    "CLUTTER",
    "Calibration",
    "Projection",
    "RadarFrame",
    "RVPBounds",
    "annotate_points",
    "project_points",
    "rasterize_rvp",
]
