"""Ground extraction and vegetation tiering.

Ground points come out of a progressive morphological filter over a
minimum-elevation raster; vegetation tiers are then plain height-above-ground
cutoffs. Both relabel only: geometry and attributes pass through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, EmptyInputError, MissingGroundError
from .pointcloud import (
    CODE_GROUND,
    CODE_HIGH_VEG,
    CODE_LOW_VEG,
    CODE_MEDIUM_VEG,
    CODE_UNCLASSIFIED,
    LinearUnit,
    PointCloud,
)

# Published filter defaults, in meters; converted per cloud unit.
DEFAULT_CELL_SIZE_M = 1.0
DEFAULT_MAX_WINDOW_M = 18.0
DEFAULT_SLOPE_THRESHOLD = 0.15
DEFAULT_ELEVATION_THRESHOLD_M = 0.5
DEFAULT_ELEVATION_SCALING = 1.25


@dataclass(frozen=True)
class SmrfParams:
    """Morphological ground filter parameters, in cloud units."""

    cell_size: float
    max_window: float
    slope_threshold: float
    elevation_threshold: float
    elevation_scaling: float

    def __post_init__(self):
        for name in ("cell_size", "max_window", "slope_threshold", "elevation_threshold", "elevation_scaling"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_window < self.cell_size:
            raise ValueError("max_window must be at least one cell")

    @classmethod
    def metric_defaults(cls, unit: LinearUnit) -> "SmrfParams":
        """The published defaults, converted from meters into `unit`."""
        return cls(
            cell_size=unit.from_meters(DEFAULT_CELL_SIZE_M),
            max_window=unit.from_meters(DEFAULT_MAX_WINDOW_M),
            slope_threshold=DEFAULT_SLOPE_THRESHOLD,
            elevation_threshold=unit.from_meters(DEFAULT_ELEVATION_THRESHOLD_M),
            elevation_scaling=DEFAULT_ELEVATION_SCALING,
        )


@dataclass(frozen=True)
class VegetationTiers:
    """Height-above-ground cutoffs in meters (converted per cloud unit)."""

    low_max: float
    medium_max: float

    def __post_init__(self):
        if not 0 < self.low_max < self.medium_max:
            raise ValueError("tiers must satisfy 0 < low_max < medium_max")


def _grid_shape(extent_width: float, extent_height: float, cell: float):
    def cells(span):
        raw = span / cell
        snapped = round(raw)
        n = snapped if abs(raw - snapped) < 1e-9 else math.ceil(raw)
        return max(int(n), 1)

    return cells(extent_height), cells(extent_width)  # rows, cols


def _cell_indices(values: np.ndarray, origin: float, cell: float, n: int) -> np.ndarray:
    idx = np.floor((values - origin) / cell).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def _min_z_raster(cloud: PointCloud, cell: float):
    extent = cloud.extent()
    if extent.width == 0 and extent.height == 0:
        raise DegenerateInputError("all points coincide in x,y; no surface to rasterize")
    rows, cols = _grid_shape(extent.width, extent.height, cell)
    r = _cell_indices(cloud.y, extent.min_y, cell, rows)
    c = _cell_indices(cloud.x, extent.min_x, cell, cols)
    flat = r * cols + c
    surface = np.full(rows * cols, np.inf)
    np.minimum.at(surface, flat, cloud.z)
    surface = surface.reshape(rows, cols)
    return surface, r, c


def _inpaint_nearest(surface: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill cells outside `valid` with the value of the nearest valid cell."""
    if valid.all():
        return surface
    if not valid.any():
        raise DegenerateInputError("no valid cells to inpaint from")
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return surface[ri, ci]


def _disk(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(span, span)
    return dx * dx + dy * dy <= radius * radius


def classify_ground(cloud: PointCloud, params: SmrfParams) -> PointCloud:
    """Relabel every point Ground or Unclassified via progressive opening.

    Pipeline: minimum-z raster at ``params.cell_size``, nearest-neighbor
    inpainting of empty cells, morphological openings with disk windows
    growing one cell at a time, flagging cells whose drop at radius r
    exceeds ``slope_threshold * r + elevation_threshold``; a point is Ground
    when its height over the object-free surface stays within
    ``elevation_threshold + elevation_scaling * local_slope``.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot classify an empty cloud")
    cell = params.cell_size
    raw, pr, pc = _min_z_raster(cloud, cell)
    occupied = np.isfinite(raw)
    surface = _inpaint_nearest(np.where(occupied, raw, 0.0), occupied)

    max_radius_cells = max(1, int(math.ceil(params.max_window / cell - 1e-9)))
    flagged = np.zeros(surface.shape, dtype=bool)
    current = surface
    for radius in range(1, max_radius_cells + 1):
        opened = ndimage.grey_opening(current, footprint=_disk(radius), mode="nearest")
        drop = current - opened
        limit = params.slope_threshold * (radius * cell) + params.elevation_threshold
        flagged |= drop > limit
        current = opened

    keep = occupied & ~flagged
    if not keep.any():
        raise DegenerateInputError("every raster cell was flagged as object")
    provisional = _inpaint_nearest(np.where(keep, surface, 0.0), keep)

    gy, gx = np.gradient(provisional, cell)
    local_slope = np.hypot(gx, gy)
    allowance = params.elevation_threshold + params.elevation_scaling * local_slope

    height = cloud.z - provisional[pr, pc]
    is_ground = height <= allowance[pr, pc]
    codes = np.where(is_ground, CODE_GROUND, CODE_UNCLASSIFIED).astype(np.uint8)
    return cloud.with_class_codes(codes)


def ground_surface(cloud: PointCloud, cell: float):
    """Minimum-z raster of the Ground points, inpainted everywhere, plus the
    per-point cell indices of the full cloud. Shared by vegetation tiering
    and height queries."""
    ground_mask = cloud.class_codes == CODE_GROUND
    if not ground_mask.any():
        raise MissingGroundError("cloud has no Ground points")
    extent = cloud.extent()
    if extent.width == 0 and extent.height == 0:
        raise DegenerateInputError("all points coincide in x,y")
    rows, cols = _grid_shape(extent.width, extent.height, cell)
    r = _cell_indices(cloud.y, extent.min_y, cell, rows)
    c = _cell_indices(cloud.x, extent.min_x, cell, cols)
    surface = np.full(rows * cols, np.inf)
    flat = (r * cols + c)[ground_mask]
    np.minimum.at(surface, flat, cloud.z[ground_mask])
    surface = surface.reshape(rows, cols)
    valid = np.isfinite(surface)
    return _inpaint_nearest(np.where(valid, surface, 0.0), valid), r, c


def classify_vegetation(
    cloud: PointCloud,
    tiers: VegetationTiers,
    cell_size: float | None = None,
) -> PointCloud:
    """Assign every non-ground point a vegetation tier by height above the
    interpolated ground surface. Boundary heights go to the lower tier."""
    cell = cell_size if cell_size is not None else cloud.linear_unit.from_meters(1.0)
    surface, r, c = ground_surface(cloud, cell)
    height_m = cloud.linear_unit.to_meters(cloud.z - surface[r, c])

    codes = cloud.class_codes.copy()
    non_ground = codes != CODE_GROUND
    tier = np.where(
        height_m <= tiers.low_max,
        CODE_LOW_VEG,
        np.where(height_m <= tiers.medium_max, CODE_MEDIUM_VEG, CODE_HIGH_VEG),
    ).astype(np.uint8)
    codes[non_ground] = tier[non_ground]
    return cloud.with_class_codes(codes)
