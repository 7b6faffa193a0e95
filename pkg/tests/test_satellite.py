import io
import json
import math

import numpy as np
import pytest
from PIL import Image

from paikit.errors import AlignmentError, ConfigurationError, ServiceError, TransportError
from paikit.pointcloud import Extent2D, LinearUnit
from paikit.raster import Geotransform, RasterImage
from paikit.satellite import (
    AlignmentReport,
    WmsRequest,
    align_check,
    fetch_satellite,
    geographic_to_mercator,
    mercator_to_geographic,
)


class RecordingTransport:
    """Canned transport: serves a fixed PNG and records every URL."""

    def __init__(self, width=64, height=64, status=200, body=None, content_type="image/png"):
        self.urls = []
        self.status = status
        self.content_type = content_type
        if body is None:
            rng = np.random.default_rng(0)
            img = Image.fromarray(rng.integers(0, 255, (height, width, 3)).astype(np.uint8))
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            body = buf.getvalue()
        self.body = body

    def get(self, url):
        self.urls.append(url)
        return self.status, self.body, self.content_type


def test_wms_bbox_axis_order():
    req = WmsRequest(
        endpoint="https://example.test/wms",
        layer="sat",
        crs_id="EPSG:32618",
        bbox=Extent2D(430000.0, 430100.0, 4460000.0, 4460050.0),
        width=200,
        height=100,
    )
    url = req.url()
    assert "BBOX=4460000,430000,4460050,430100" in url
    assert "VERSION=1.3.0" in url
    assert "REQUEST=GetMap" in url
    assert "CRS=EPSG:32618" in url
    assert "WIDTH=200" in url and "HEIGHT=100" in url
    # explicit easting-first variant for services that want it
    assert "BBOX=430000,4460000,430100,4460050" in req.url(axis_order="xy")


def test_wms_aspect_invariant():
    with pytest.raises(ValueError):
        WmsRequest(
            endpoint="https://example.test/wms",
            layer="sat",
            crs_id="EPSG:32618",
            bbox=Extent2D(0.0, 100.0, 0.0, 50.0),
            width=300,  # aspect says 200
            height=100,
        )


def test_fetch_resolution_arithmetic(tmp_path):
    transport = RecordingTransport(width=200, height=100)
    img = fetch_satellite(
        Extent2D(0.0, 100.0, 0.0, 50.0),
        "EPSG:32618",
        0.5,
        "https://example.test/wms",
        cache_dir=tmp_path,
        transport=transport,
    )
    assert (img.width, img.height) == (200, 100)
    assert img.representation_id == "R5"
    assert img.geo.cell_size == 0.5
    assert img.geo.origin_x == 0.0
    assert img.geo.origin_y == 50.0
    assert len(transport.urls) == 1
    assert "WIDTH=200&HEIGHT=100" in transport.urls[0]


def test_cache_short_circuits_network(tmp_path):
    transport = RecordingTransport(width=20, height=10)
    extent = Extent2D(0.0, 10.0, 0.0, 5.0)
    a = fetch_satellite(extent, "EPSG:32618", 0.5, "https://example.test/wms",
                        cache_dir=tmp_path, transport=transport)
    b = fetch_satellite(extent, "EPSG:32618", 0.5, "https://example.test/wms",
                        cache_dir=tmp_path, transport=transport)
    assert len(transport.urls) == 1  # second call never touched the network
    assert np.array_equal(a.pixels, b.pixels)
    pngs = list(tmp_path.glob("*.png"))
    metas = list(tmp_path.glob("*.json"))
    assert len(pngs) == 1 and len(metas) == 1
    assert len(pngs[0].name) == 64 + 4  # sha256 hex + .png
    meta = json.loads(metas[0].read_text())
    assert meta["crs_id"] == "EPSG:32618"


def test_http_error_carries_status(tmp_path):
    transport = RecordingTransport(status=503, body=b"unavailable", content_type="text/plain")
    with pytest.raises(TransportError) as err:
        fetch_satellite(Extent2D(0.0, 10.0, 0.0, 5.0), "EPSG:32618", 0.5,
                        "https://example.test/wms", cache_dir=tmp_path, transport=transport)
    assert err.value.status == 503


def test_service_exception_surfaced(tmp_path):
    body = b'<?xml version="1.0"?><ServiceExceptionReport>bbox outside coverage</ServiceExceptionReport>'
    transport = RecordingTransport(status=200, body=body, content_type="application/vnd.ogc.se_xml")
    with pytest.raises(ServiceError, match="bbox outside coverage"):
        fetch_satellite(Extent2D(0.0, 10.0, 0.0, 5.0), "EPSG:32618", 0.5,
                        "https://example.test/wms", cache_dir=tmp_path, transport=transport)


def test_synthetic_endpoint_offline(tmp_path):
    extent = Extent2D(100.0, 150.0, 200.0, 240.0)
    a = fetch_satellite(extent, "EPSG:6539", 0.5, "synthetic:demo", cache_dir=tmp_path)
    b = fetch_satellite(extent, "EPSG:6539", 0.5, "synthetic:demo", cache_dir=tmp_path / "other")
    assert (a.width, a.height) == (100, 80)
    assert np.array_equal(a.pixels, b.pixels)  # deterministic across caches
    c = fetch_satellite(Extent2D(0.0, 50.0, 0.0, 40.0), "EPSG:6539", 0.5,
                        "synthetic:demo", cache_dir=tmp_path)
    assert not np.array_equal(a.pixels, c.pixels)  # extent-anchored pattern


def tile_png(shade):
    img = Image.new("RGB", (256, 256), (shade, shade, shade))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class TileTransport:
    def __init__(self):
        self.urls = []

    def get(self, url):
        self.urls.append(url)
        return 200, tile_png(128), "image/png"


def test_xyz_tiles_geographic(tmp_path):
    transport = TileTransport()
    extent = Extent2D(-74.45, -74.44, 40.49, 40.50)
    img = fetch_satellite(extent, "EPSG:4326", 0.0001, "https://tiles.test/{z}/{x}/{y}.png",
                          cache_dir=tmp_path, transport=transport)
    assert (img.width, img.height) == (100, 100)
    assert len(transport.urls) >= 1
    # template fully substituted
    assert all("{" not in u for u in transport.urls)


def test_xyz_requires_known_crs(tmp_path):
    with pytest.raises(ConfigurationError):
        fetch_satellite(Extent2D(0.0, 10.0, 0.0, 5.0), "EPSG:6539", 0.5,
                        "https://tiles.test/{z}/{x}/{y}.png", cache_dir=tmp_path,
                        transport=TileTransport())


def test_mercator_round_trip():
    for lon, lat in ((-74.44, 40.5), (0.0, 0.0), (151.2, -33.87)):
        x, y = geographic_to_mercator(lon, lat)
        lon2, lat2 = mercator_to_geographic(x, y)
        assert lon2 == pytest.approx(lon, abs=1e-9)
        assert lat2 == pytest.approx(lat, abs=1e-9)


# --- alignment ------------------------------------------------------------


def gray_image(w, h, geo, crs="EPSG:6539"):
    return RasterImage(np.zeros((h, w), dtype=np.uint8), "R1", geo=geo,
                       crs_id=crs, linear_unit=LinearUnit.FEET)


def test_align_identity():
    geo = Geotransform(100.0, 200.0, 0.5)
    report = align_check(gray_image(40, 30, geo), gray_image(40, 30, geo))
    assert report.pixel_offset == (0.0, 0.0)
    assert report.overlap == Extent2D(100.0, 120.0, 185.0, 200.0)


def test_align_shifted_one_cell():
    a = gray_image(40, 30, Geotransform(100.0, 200.0, 0.5))
    b = gray_image(40, 30, Geotransform(100.5, 200.0, 0.5))
    report = align_check(a, b)
    assert report.pixel_offset == (1.0, 0.0)


def test_align_partial_overlap_matches_interval_oracle():
    a = gray_image(40, 30, Geotransform(0.0, 30.0, 1.0))  # x 0..40, y 0..30
    b = gray_image(40, 30, Geotransform(25.0, 50.0, 1.0))  # x 25..65, y 20..50
    report = align_check(a, b)
    ox = (max(0.0, 25.0), min(40.0, 65.0))
    oy = (max(0.0, 20.0), min(30.0, 50.0))
    assert report.overlap == Extent2D(ox[0], ox[1], oy[0], oy[1])


def test_align_disjoint():
    a = gray_image(10, 10, Geotransform(0.0, 10.0, 1.0))
    b = gray_image(10, 10, Geotransform(100.0, 10.0, 1.0))
    assert align_check(a, b).overlap is None


def test_align_crs_mismatch():
    a = gray_image(10, 10, Geotransform(0.0, 10.0, 1.0), crs="EPSG:6539")
    b = gray_image(10, 10, Geotransform(0.0, 10.0, 1.0), crs="EPSG:26918")
    with pytest.raises(AlignmentError):
        align_check(a, b)


def test_align_requires_geo():
    a = gray_image(10, 10, Geotransform(0.0, 10.0, 1.0))
    b = RasterImage(np.zeros((5, 5), dtype=np.uint8), "R6")
    with pytest.raises(AlignmentError):
        align_check(a, b)
