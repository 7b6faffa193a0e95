"""Raster types shared by the renderers: georeferencing, the nine-slot
representation catalog, intensity-to-gray mapping, correspondence maps, and
file IO (GeoTIFF, PNG, and the binary correspondence sidecar).

Gray images reserve pixel value 0 for no-data; real intensities map into
[1, 255]. RGB images reserve (0, 0, 0), and rendered points that would
collide with it are nudged to (1, 1, 1).
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image, TiffImagePlugin

from .errors import BoundsError, FormatError
from .geokeys import decode_geokeys, encode_geokeys
from .pointcloud import ClassSelector, Extent2D, LinearUnit

NODATA_GRAY = 0
NODATA_RGB = (0, 0, 0)
NO_POINT = np.uint64(0xFFFFFFFFFFFFFFFF)

TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEYS = 34735
TAG_GDAL_NODATA = 42113

CORRESPONDENCE_MAGIC = b"PAICMAP1"


class ViewKind(enum.Enum):
    BEV = "bev"
    STREET_VIEW = "street-view"
    SATELLITE = "satellite"


class PixelAttribute(enum.Enum):
    INTENSITY = "intensity"
    COLOR = "color"

    @classmethod
    def parse(cls, text: str) -> "PixelAttribute":
        t = text.strip().lower()
        for member in cls:
            if member.value == t:
                return member
        raise ValueError(f"unknown pixel attribute {text!r}")


@dataclass(frozen=True)
class Representation:
    rep_id: str
    view_kind: ViewKind
    selector: Optional[ClassSelector]
    attribute: Optional[PixelAttribute]


# The fixed nine-slot catalog: four BEV variants, the satellite frame, and
# four street-view variants, keyed by (view kind, class selector, attribute).
REPRESENTATIONS = {
    r.rep_id: r
    for r in (
        Representation("R1", ViewKind.BEV, ClassSelector.GROUND_AND_LOW_VEG, PixelAttribute.INTENSITY),
        Representation("R2", ViewKind.BEV, ClassSelector.ALL, PixelAttribute.INTENSITY),
        Representation("R3", ViewKind.BEV, ClassSelector.GROUND_AND_LOW_VEG, PixelAttribute.COLOR),
        Representation("R4", ViewKind.BEV, ClassSelector.ALL, PixelAttribute.COLOR),
        Representation("R5", ViewKind.SATELLITE, None, None),
        Representation("R6", ViewKind.STREET_VIEW, ClassSelector.GROUND_AND_LOW_VEG, PixelAttribute.INTENSITY),
        Representation("R7", ViewKind.STREET_VIEW, ClassSelector.GROUND_AND_LOW_VEG, PixelAttribute.COLOR),
        Representation("R8", ViewKind.STREET_VIEW, ClassSelector.ALL, PixelAttribute.INTENSITY),
        Representation("R9", ViewKind.STREET_VIEW, ClassSelector.ALL, PixelAttribute.COLOR),
    )
}


def representation_for(
    view_kind: ViewKind,
    selector: Optional[ClassSelector] = None,
    attribute: Optional[PixelAttribute] = None,
) -> Representation:
    for rep in REPRESENTATIONS.values():
        if rep.view_kind is view_kind and rep.selector is selector and rep.attribute is attribute:
            return rep
    raise ValueError(f"no representation for {view_kind}, {selector}, {attribute}")


@dataclass(frozen=True)
class Geotransform:
    """North-up square-cell mapping between pixel indices and world
    coordinates. (origin_x, origin_y) is the top-left corner of pixel (0, 0);
    rows advance toward smaller y."""

    origin_x: float
    origin_y: float
    cell_size: float

    def __post_init__(self):
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise ValueError("cell_size must be positive and finite")

    def world(self, col: float, row: float) -> Tuple[float, float]:
        """World coordinates of the pixel's top-left corner (or of any
        fractional pixel position)."""
        return (self.origin_x + col * self.cell_size, self.origin_y - row * self.cell_size)

    def pixel_of(self, x: float, y: float) -> Tuple[int, int]:
        """Pixel (col, row) containing the world point. Coordinates within
        float rounding noise of a cell corner snap onto it, so corners from
        world() round-trip exactly; the tolerance scales with the coordinate
        magnitude and stays far below any real cell fraction."""

        def snap_floor(q: float, value: float, origin: float) -> int:
            r = round(q)
            tol = 4.0 * 2.220446049250313e-16 * max(abs(value), abs(origin), 1.0)
            if abs(q - r) * self.cell_size <= tol:
                return int(r)
            return int(math.floor(q))

        return (
            snap_floor((x - self.origin_x) / self.cell_size, x, self.origin_x),
            snap_floor((self.origin_y - y) / self.cell_size, y, self.origin_y),
        )


def grid_cells(span: float, cell: float) -> int:
    """ceil(span/cell) with a snap so spans that are exact multiples of the
    cell size at 1e-9 relative don't gain a phantom cell."""
    raw = span / cell
    snapped = round(raw)
    n = snapped if abs(raw - snapped) < 1e-9 * max(1.0, abs(raw)) else math.ceil(raw)
    return max(int(n), 1)


def geotransform_for_extent(extent: Extent2D, cell: float) -> Tuple["Geotransform", int, int]:
    """Geotransform plus (cols, rows) covering the extent: origin pinned to
    the bottom-left so the grid's top edge sits at min_y + rows*cell."""
    cols = grid_cells(extent.width, cell)
    rows = grid_cells(extent.height, cell)
    return Geotransform(extent.min_x, extent.min_y + rows * cell, cell), cols, rows


@dataclass
class RasterImage:
    """Rendered image: (H, W) uint8 gray or (H, W, 3) uint8 RGB, its slot in
    the representation catalog, and georeferencing when the view is ortho."""

    pixels: np.ndarray
    representation_id: str
    geo: Optional[Geotransform] = None
    crs_id: Optional[str] = None
    linear_unit: Optional[LinearUnit] = None

    def __post_init__(self):
        if self.representation_id not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation_id!r}")
        if self.pixels.dtype != np.uint8 or self.pixels.ndim not in (2, 3):
            raise ValueError("pixels must be uint8 (H, W) or (H, W, 3)")
        if self.pixels.ndim == 3 and self.pixels.shape[2] != 3:
            raise ValueError("color images must have 3 channels")

    @property
    def is_color(self) -> bool:
        return self.pixels.ndim == 3

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def representation(self) -> Representation:
        return REPRESENTATIONS[self.representation_id]


class CorrespondenceMap:
    """Per-pixel link back to the rendered cloud: source point index (or the
    no-point sentinel) and the depth that won the pixel."""

    def __init__(self, width: int, height: int):
        self.point_index = np.full((height, width), NO_POINT, dtype=np.uint64)
        self.depth = np.zeros((height, width), dtype=np.float32)

    @property
    def width(self) -> int:
        return int(self.point_index.shape[1])

    @property
    def height(self) -> int:
        return int(self.point_index.shape[0])

    def has(self, col: int, row: int) -> bool:
        self._check(col, row)
        return bool(self.point_index[row, col] != NO_POINT)

    def at(self, col: int, row: int) -> Optional[Tuple[int, float]]:
        """(point_index, depth) or None for a no-data pixel."""
        self._check(col, row)
        idx = self.point_index[row, col]
        if idx == NO_POINT:
            return None
        return int(idx), float(self.depth[row, col])

    def _check(self, col: int, row: int):
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise BoundsError(f"pixel ({col}, {row}) outside {self.width}x{self.height}")

    def populated(self) -> np.ndarray:
        return self.point_index != NO_POINT


def gray_mapping(intensities: np.ndarray) -> Tuple[float, float]:
    """Robust display range: 2nd and 98th percentile of the rendered cloud's
    intensities (equal percentiles widen to a unit span)."""
    if intensities.size == 0:
        return 0.0, 1.0
    lo, hi = np.percentile(intensities.astype(np.float64), [2.0, 98.0])
    if hi <= lo:
        hi = lo + 1.0
    return float(lo), float(hi)


def intensity_to_gray(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Linear rescale into [1, 255]; 0 stays reserved for no-data."""
    t = np.clip((values.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return (1.0 + np.round(t * 254.0)).astype(np.uint8)


def avoid_nodata_rgb(rgb: np.ndarray) -> np.ndarray:
    """Bump pure black to (1,1,1) so it cannot read as no-data."""
    rgb = rgb.copy()
    black = np.all(rgb == 0, axis=-1)
    rgb[black] = (1, 1, 1)
    return rgb


# --- file IO --------------------------------------------------------------


def write_geotiff(image: RasterImage, path) -> None:
    if image.geo is None:
        raise ValueError("write_geotiff needs a georeferenced image")
    tags = TiffImagePlugin.ImageFileDirectory_v2()
    tags[TAG_MODEL_PIXEL_SCALE] = (image.geo.cell_size, image.geo.cell_size, 0.0)
    tags[TAG_MODEL_TIEPOINT] = (0.0, 0.0, 0.0, image.geo.origin_x, image.geo.origin_y, 0.0)
    tags.tagtype[TAG_MODEL_PIXEL_SCALE] = 12  # DOUBLE
    tags.tagtype[TAG_MODEL_TIEPOINT] = 12
    tags[TAG_GDAL_NODATA] = "0"
    tags.tagtype[TAG_GDAL_NODATA] = 2  # ASCII
    if image.crs_id and image.linear_unit:
        shorts = encode_geokeys(image.crs_id, image.linear_unit)
        if shorts is not None:
            tags[TAG_GEO_KEYS] = shorts
            tags.tagtype[TAG_GEO_KEYS] = 3  # SHORT
    pil = Image.fromarray(image.pixels, mode="RGB" if image.is_color else "L")
    pil.save(Path(path), format="TIFF", tiffinfo=tags)


def read_geotiff(path, representation_id: str = "R5") -> RasterImage:
    path = Path(path)
    with Image.open(path) as pil:
        pil.load()
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB")
        pixels = np.asarray(pil)
        tags = getattr(pil, "tag_v2", None)
    geo = None
    crs_id = None
    unit = None
    if tags is not None and TAG_MODEL_PIXEL_SCALE in tags and TAG_MODEL_TIEPOINT in tags:
        scale = tags[TAG_MODEL_PIXEL_SCALE]
        tiepoint = tags[TAG_MODEL_TIEPOINT]
        if len(tiepoint) >= 6:
            # tie pixel (i, j) to world (X, Y): origin follows from it
            i, j, _, X, Y, _ = (float(v) for v in tiepoint[:6])
            cell = float(scale[0])
            if abs(float(scale[1]) - cell) > 1e-9 * cell:
                raise FormatError(f"{path}: non-square pixels unsupported")
            geo = Geotransform(X - i * cell, Y + j * cell, cell)
        if TAG_GEO_KEYS in tags:
            crs_id, unit = decode_geokeys(tuple(int(v) for v in tags[TAG_GEO_KEYS]))
    return RasterImage(
        np.ascontiguousarray(pixels),
        representation_id,
        geo=geo,
        crs_id=crs_id,
        linear_unit=unit,
    )


def write_png(image: RasterImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB" if image.is_color else "L").save(
        Path(path), format="PNG"
    )


def read_png(path, representation_id: str) -> RasterImage:
    with Image.open(Path(path)) as pil:
        pil.load()
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB")
        return RasterImage(np.ascontiguousarray(np.asarray(pil)), representation_id)


def write_correspondence(cmap: CorrespondenceMap, path) -> None:
    """Binary sidecar: magic, little-endian u32 width and height, then
    row-major per-pixel records of u64 point index (all-ones when empty)
    and f32 depth."""
    with open(path, "wb") as fh:
        fh.write(CORRESPONDENCE_MAGIC)
        fh.write(struct.pack("<II", cmap.width, cmap.height))
        rec = np.empty(
            (cmap.height, cmap.width),
            dtype=np.dtype([("idx", "<u8"), ("depth", "<f4")]),
        )
        rec["idx"] = cmap.point_index
        rec["depth"] = cmap.depth
        fh.write(rec.tobytes())


def read_correspondence(path) -> CorrespondenceMap:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:8] != CORRESPONDENCE_MAGIC:
        raise FormatError(f"{path}: offset 0: bad correspondence magic")
    width, height = struct.unpack_from("<II", data, 8)
    expected = 16 + width * height * 12
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {width}x{height}, got {len(data)}"
        )
    rec = np.frombuffer(
        data, dtype=np.dtype([("idx", "<u8"), ("depth", "<f4")]), count=width * height, offset=16
    ).reshape(height, width)
    cmap = CorrespondenceMap(width, height)
    cmap.point_index = rec["idx"].copy()
    cmap.depth = rec["depth"].copy()
    return cmap
