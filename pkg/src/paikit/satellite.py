"""Satellite imagery retrieval (representation R5) and georeference checks.

Three endpoint styles share one entry point: WMS 1.3.0 GetMap base URLs,
XYZ `{z}/{x}/{y}` tile templates (web-mercator), and the offline
`synthetic:` scheme that renders a deterministic pattern for fixtures and
demos. All network traffic flows through an injectable transport, and every
response lands in a content-addressed disk cache that short-circuits
repeated requests.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .errors import AlignmentError, ConfigurationError, ServiceError, TransportError
from .pointcloud import Extent2D, LinearUnit
from .raster import Geotransform, RasterImage, grid_cells

WEB_MERCATOR_RADIUS = 6378137.0
TILE_SIZE = 256
MAX_ZOOM = 19


class UrlTransport:
    """Default transport: one GET, returns (status, body, content_type)."""

    def get(self, url: str) -> Tuple[int, bytes, str]:
        import requests

        try:
            resp = requests.get(url, timeout=30)
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        return resp.status_code, resp.content, resp.headers.get("Content-Type", "")


@dataclass(frozen=True)
class WmsRequest:
    endpoint: str
    layer: str
    crs_id: str
    bbox: Extent2D
    width: int
    height: int
    format: str = "image/png"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("request size must be positive")
        # pixel grid must not distort the bbox: aspect match within a pixel
        expect_w = self.height * self.bbox.width / self.bbox.height
        if abs(expect_w - self.width) > 1.0:
            raise ValueError(
                f"width {self.width} distorts bbox aspect (expected ~{expect_w:.2f})"
            )

    def url(self, axis_order: str = "yx") -> str:
        b = self.bbox
        if axis_order == "yx":
            bbox = (b.min_y, b.min_x, b.max_y, b.max_x)
        else:
            bbox = (b.min_x, b.min_y, b.max_x, b.max_y)
        bbox_str = ",".join(_num(v) for v in bbox)
        sep = "&" if "?" in self.endpoint else "?"
        return (
            f"{self.endpoint}{sep}SERVICE=WMS&VERSION=1.3.0&REQUEST=GetMap"
            f"&LAYERS={self.layer}&STYLES=&CRS={self.crs_id}"
            f"&BBOX={bbox_str}&WIDTH={self.width}&HEIGHT={self.height}"
            f"&FORMAT={self.format}"
        )


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class AlignmentReport:
    overlap: Optional[Extent2D]
    pixel_offset: Tuple[float, float]  # sat origin in bev pixel units


def _raster_extent(img: RasterImage) -> Extent2D:
    g = img.geo
    return Extent2D(
        g.origin_x,
        g.origin_x + img.width * g.cell_size,
        g.origin_y - img.height * g.cell_size,
        g.origin_y,
    )


def align_check(bev: RasterImage, sat: RasterImage) -> AlignmentReport:
    """Geotransform-only alignment: where the two rasters overlap in world
    space and where sat's origin sits in bev pixel coordinates."""
    if bev.geo is None or sat.geo is None:
        raise AlignmentError("both images need geotransforms")
    if bev.crs_id and sat.crs_id and bev.crs_id != sat.crs_id:
        raise AlignmentError(f"CRS mismatch: {bev.crs_id} vs {sat.crs_id}")
    offset = (
        (sat.geo.origin_x - bev.geo.origin_x) / bev.geo.cell_size,
        (bev.geo.origin_y - sat.geo.origin_y) / bev.geo.cell_size,
    )
    return AlignmentReport(_raster_extent(bev).intersect(_raster_extent(sat)), offset)


def fetch_satellite(
    extent: Extent2D,
    crs_id: str,
    resolution: float,
    endpoint: str,
    cache_dir="cache",
    transport=None,
    layer: str = "satellite",
    unit: Optional[LinearUnit] = None,
) -> RasterImage:
    """Aligned satellite image of `extent` at `resolution` units per pixel.

    The pixel grid is ceil(extent/resolution); the served bbox is widened to
    an exact multiple of the resolution so cells stay square and the
    geotransform is exact. Responses cache under
    cache/<sha256 of request>.png with a .json sidecar, and a cache hit
    makes no network call.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    width = grid_cells(extent.width, resolution)
    height = grid_cells(extent.height, resolution)
    served = Extent2D(
        extent.min_x,
        extent.min_x + width * resolution,
        extent.max_y - height * resolution,
        extent.max_y,
    )
    geo = Geotransform(served.min_x, served.max_y, resolution)

    key_src = json.dumps(
        {
            "endpoint": endpoint,
            "crs": crs_id,
            "bbox": [served.min_x, served.max_x, served.min_y, served.max_y],
            "resolution": resolution,
            "width": width,
            "height": height,
            "layer": layer,
        },
        sort_keys=True,
    )
    key = hashlib.sha256(key_src.encode()).hexdigest()
    cache_dir = Path(cache_dir)
    png_path = cache_dir / f"{key}.png"
    meta_path = cache_dir / f"{key}.json"

    if png_path.exists() and meta_path.exists():
        pixels = _decode_image(png_path.read_bytes(), width, height)
        return RasterImage(pixels, "R5", geo=geo, crs_id=crs_id, linear_unit=unit)

    if endpoint.startswith("synthetic:"):
        pixels = _synthetic_pattern(served, width, height, endpoint)
    elif "{z}" in endpoint:
        pixels = _fetch_xyz(served, crs_id, resolution, endpoint, width, height, transport)
    else:
        request = WmsRequest(endpoint, layer, crs_id, served, width, height)
        body = _http_image(request.url(), transport)
        pixels = _decode_image(body, width, height)

    cache_dir.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    png_path.write_bytes(buf.getvalue())
    meta_path.write_text(
        json.dumps(
            {
                "request": json.loads(key_src),
                "origin": [geo.origin_x, geo.origin_y],
                "cell_size": geo.cell_size,
                "crs_id": crs_id,
            },
            indent=2,
        )
    )
    return RasterImage(pixels, "R5", geo=geo, crs_id=crs_id, linear_unit=unit)


def _http_image(url: str, transport) -> bytes:
    transport = transport or UrlTransport()
    status, body, content_type = transport.get(url)
    if status != 200:
        raise TransportError(f"GET {url} failed with HTTP {status}", status=status)
    if "xml" in content_type.lower() or body.lstrip().startswith((b"<?xml", b"<Service")):
        raise ServiceError(body.decode("utf-8", "replace").strip())
    return body


def _decode_image(body: bytes, width: int, height: int) -> np.ndarray:
    with Image.open(io.BytesIO(body)) as pil:
        pil.load()
        if pil.mode != "RGB":
            pil = pil.convert("RGB")
        if pil.size != (width, height):
            pil = pil.resize((width, height), Image.BILINEAR)
        return np.ascontiguousarray(np.asarray(pil, dtype=np.uint8))


def _synthetic_pattern(extent: Extent2D, width: int, height: int, endpoint: str) -> np.ndarray:
    """Deterministic offline stand-in: a world-anchored checker with smooth
    channel gradients, so identical requests are byte-identical and
    different extents look different."""
    seed_bytes = hashlib.sha256(endpoint.encode()).digest()
    base = np.frombuffer(seed_bytes[:3], dtype=np.uint8).astype(np.int64)
    cols = np.arange(width)
    rows = np.arange(height)
    wx = extent.min_x + (cols + 0.5) * (extent.width / width)
    wy = extent.max_y - (rows + 0.5) * (extent.height / height)
    checker = (np.floor(wx[None, :] / 8.0) + np.floor(wy[:, None] / 8.0)).astype(np.int64) % 2
    gx = ((wx - wx.min()) / max(float(np.ptp(wx)), 1e-9) * 80).astype(np.int64)
    gy = ((wy - wy.min()) / max(float(np.ptp(wy)), 1e-9) * 80).astype(np.int64)
    r = (base[0] + 60 * checker + gx[None, :]) % 256
    g = (base[1] + 90 * checker + gy[:, None]) % 256
    b = (base[2] + 30 * checker + (gx[None, :] + gy[:, None]) // 2) % 256
    return np.stack(np.broadcast_arrays(r, g, b), axis=-1).astype(np.uint8)


# --- XYZ tiles ------------------------------------------------------------


def geographic_to_mercator(lon: float, lat: float) -> Tuple[float, float]:
    x = math.radians(lon) * WEB_MERCATOR_RADIUS
    y = math.asinh(math.tan(math.radians(lat))) * WEB_MERCATOR_RADIUS
    return x, y


def mercator_to_geographic(x: float, y: float) -> Tuple[float, float]:
    lon = math.degrees(x / WEB_MERCATOR_RADIUS)
    lat = math.degrees(math.atan(math.sinh(y / WEB_MERCATOR_RADIUS)))
    return lon, lat


def _tile_of(lon: float, lat: float, z: int) -> Tuple[float, float]:
    n = 2**z
    xt = (lon + 180.0) / 360.0 * n
    yt = (1.0 - math.asinh(math.tan(math.radians(lat))) / math.pi) / 2.0 * n
    return xt, yt


def _fetch_xyz(
    extent: Extent2D,
    crs_id: str,
    resolution: float,
    template: str,
    width: int,
    height: int,
    transport,
) -> np.ndarray:
    if crs_id == "EPSG:4326":
        lon0, lat0 = extent.min_x, extent.min_y
        lon1, lat1 = extent.max_x, extent.max_y
        # mercator x is linear in longitude: one degree = (pi/180) R meters
        target_res_m = resolution * math.radians(1.0) * WEB_MERCATOR_RADIUS
    elif crs_id == "EPSG:3857":
        lon0, lat0 = mercator_to_geographic(extent.min_x, extent.min_y)
        lon1, lat1 = mercator_to_geographic(extent.max_x, extent.max_y)
        target_res_m = resolution
    else:
        raise ConfigurationError(
            f"XYZ tiles need EPSG:4326 or EPSG:3857 extents, got {crs_id}"
        )

    base_res = 2.0 * math.pi * WEB_MERCATOR_RADIUS / TILE_SIZE
    z = int(round(math.log2(base_res / max(target_res_m, 1e-9))))
    z = max(0, min(MAX_ZOOM, z))

    x0, y1 = _tile_of(lon0, lat0, z)  # south-west corner: max tile row
    x1, y0 = _tile_of(lon1, lat1, z)
    tx0, tx1 = int(math.floor(x0)), int(math.floor(min(x1, 2**z - 1e-9)))
    ty0, ty1 = int(math.floor(y0)), int(math.floor(min(y1, 2**z - 1e-9)))

    transport = transport or UrlTransport()
    mosaic = Image.new("RGB", ((tx1 - tx0 + 1) * TILE_SIZE, (ty1 - ty0 + 1) * TILE_SIZE))
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            url = template.replace("{z}", str(z)).replace("{x}", str(tx)).replace("{y}", str(ty))
            body = _http_image(url, transport)
            with Image.open(io.BytesIO(body)) as tile:
                tile.load()
                mosaic.paste(tile.convert("RGB"), ((tx - tx0) * TILE_SIZE, (ty - ty0) * TILE_SIZE))

    # crop the exact request box out of the mosaic, in fractional tiles
    fx0, fy1 = _tile_of(lon0, lat0, z)
    fx1, fy0 = _tile_of(lon1, lat1, z)
    crop = (
        (fx0 - tx0) * TILE_SIZE,
        (fy0 - ty0) * TILE_SIZE,
        (fx1 - tx0) * TILE_SIZE,
        (fy1 - ty0) * TILE_SIZE,
    )
    region = mosaic.resize((width, height), Image.BILINEAR, box=crop)
    return np.ascontiguousarray(np.asarray(region, dtype=np.uint8))
