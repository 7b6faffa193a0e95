"""LAS reader/writer tests.

The oracle here is a separate raw-struct byte builder (below) that lays out
LAS files field by field from the published offsets, independently of the
implementation under test.
"""

import struct

import numpy as np
import pytest

from paikit.errors import ConfigurationError, FormatError, UnsupportedFormatError
from paikit.las import load_las, write_las
from paikit.pointcloud import LinearUnit

from conftest import make_cloud


def build_las12(points, point_format=1, scale=(0.01, 0.01, 0.01), offset=(0.0, 0.0, 0.0), vlrs=(), truncate=None):
    """Hand-rolled LAS 1.2 byte builder used as the test oracle.

    `points` is a list of dicts with keys x y z intensity classification and
    optionally red green blue (16-bit) and gps_time.
    """
    reclen = {0: 20, 1: 28, 2: 26, 3: 34}[point_format]
    vlr_blob = b""
    for user_id, record_id, body in vlrs:
        vlr_blob += struct.pack("<H16sHH32s", 0, user_id, record_id, len(body), b"")
        vlr_blob += body
    header = bytearray(227)
    header[0:4] = b"LASF"
    header[24] = 1
    header[25] = 2
    struct.pack_into("<H", header, 94, 227)
    struct.pack_into("<I", header, 96, 227 + len(vlr_blob))
    struct.pack_into("<I", header, 100, len(vlrs))
    header[104] = point_format
    struct.pack_into("<H", header, 105, reclen)
    struct.pack_into("<I", header, 107, len(points))
    struct.pack_into("<3d", header, 131, *scale)
    struct.pack_into("<3d", header, 155, *offset)
    body = b""
    for p in points:
        xi = round((p["x"] - offset[0]) / scale[0])
        yi = round((p["y"] - offset[1]) / scale[1])
        zi = round((p["z"] - offset[2]) / scale[2])
        rec = struct.pack("<3iHBBbBH", xi, yi, zi, p.get("intensity", 0), 0x09, p.get("classification", 0), 0, 0, 0)
        if point_format in (1, 3):
            rec += struct.pack("<d", p.get("gps_time", 0.0))
        if point_format in (2, 3):
            rec += struct.pack("<3H", p.get("red", 0), p.get("green", 0), p.get("blue", 0))
        body += rec
    blob = bytes(header) + vlr_blob + body
    if truncate is not None:
        blob = blob[:truncate]
    return blob


def geokey_vlr(epsg=6539, unit_code=9002):
    shorts = (1, 1, 0, 3, 1024, 0, 1, 1, 3072, 0, 1, epsg, 3076, 0, 1, unit_code)
    return (b"LASF_Projection", 34735, struct.pack(f"<{len(shorts)}H", *shorts))


THREE_POINTS = [
    dict(x=1.0, y=2.0, z=3.0, intensity=10, classification=2),
    dict(x=-5.25, y=0.5, z=3.5, intensity=20, classification=1),
    dict(x=100.0, y=-100.0, z=0.0, intensity=65535, classification=5),
]


def test_load_format1_fields(tmp_path):
    f = tmp_path / "a.las"
    f.write_bytes(build_las12(THREE_POINTS, point_format=1, vlrs=[geokey_vlr()]))
    cloud = load_las(f)
    assert len(cloud) == 3
    np.testing.assert_allclose(cloud.x, [1.0, -5.25, 100.0])
    np.testing.assert_allclose(cloud.y, [2.0, 0.5, -100.0])
    np.testing.assert_allclose(cloud.z, [3.0, 3.5, 0.0])
    assert cloud.intensity.tolist() == [10, 20, 65535]
    assert cloud.class_codes.tolist() == [2, 1, 5]
    assert cloud.rgb is None
    assert cloud.crs_id == "EPSG:6539"
    assert cloud.linear_unit is LinearUnit.FEET
    assert cloud.las_scale == (0.01, 0.01, 0.01)


def test_load_format2_color_high_byte(tmp_path):
    pts = [dict(x=0, y=0, z=0, red=256, green=512, blue=768)]
    f = tmp_path / "c.las"
    f.write_bytes(build_las12(pts, point_format=2, vlrs=[geokey_vlr()]))
    cloud = load_las(f)
    assert cloud.has_color
    assert cloud.rgb[0].tolist() == [1, 2, 3]


def test_load_empty(tmp_path):
    f = tmp_path / "e.las"
    f.write_bytes(build_las12([], point_format=0, vlrs=[geokey_vlr()]))
    cloud = load_las(f)
    assert len(cloud) == 0


def test_classification_masks_high_bits(tmp_path):
    # Formats 0-3 keep synthetic/key-point/withheld flags in the top 3 bits.
    pts = [dict(x=0, y=0, z=0, classification=0x42)]  # withheld flag + class 2
    f = tmp_path / "m.las"
    f.write_bytes(build_las12(pts, point_format=0, vlrs=[geokey_vlr()]))
    assert load_las(f).class_codes.tolist() == [2]


def test_missing_crs_requires_override(tmp_path):
    f = tmp_path / "nocrs.las"
    f.write_bytes(build_las12(THREE_POINTS))
    with pytest.raises(ConfigurationError):
        load_las(f)
    cloud = load_las(f, crs_override="EPSG:26918", unit_override=LinearUnit.METERS)
    assert cloud.crs_id == "EPSG:26918"
    assert cloud.linear_unit is LinearUnit.METERS


def test_bad_signature(tmp_path):
    f = tmp_path / "bad.las"
    f.write_bytes(b"NOPE" + bytes(300))
    with pytest.raises(FormatError, match="offset 0"):
        load_las(f)


def test_truncated_points(tmp_path):
    blob = build_las12(THREE_POINTS, vlrs=[geokey_vlr()])
    f = tmp_path / "t.las"
    f.write_bytes(blob[:-10])
    with pytest.raises(FormatError, match="EOF"):
        load_las(f)


def test_unsupported_version(tmp_path):
    blob = bytearray(build_las12(THREE_POINTS, vlrs=[geokey_vlr()]))
    blob[25] = 3  # LAS 1.3
    f = tmp_path / "v.las"
    f.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedFormatError, match="1.3"):
        load_las(f)


def test_unsupported_point_format(tmp_path):
    blob = bytearray(build_las12(THREE_POINTS, vlrs=[geokey_vlr()]))
    blob[104] = 7
    f = tmp_path / "pf.las"
    f.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedFormatError, match="format 7"):
        load_las(f)


def test_oversized_records_tolerated(tmp_path):
    """Extra bytes per record beyond the standard layout are skipped."""
    blob = bytearray(build_las12([], point_format=0, vlrs=[geokey_vlr()]))
    reclen = 25  # 20 standard + 5 extra
    struct.pack_into("<H", blob, 105, reclen)
    struct.pack_into("<I", blob, 107, 2)
    for x in (1, 2):
        rec = struct.pack("<3iHBBbBH", x * 100, 0, 0, 7, 0x09, 2, 0, 0, 0) + b"\xee" * 5
        blob += rec
    f = tmp_path / "wide.las"
    f.write_bytes(bytes(blob))
    cloud = load_las(f)
    np.testing.assert_allclose(cloud.x, [1.0, 2.0])
    assert cloud.intensity.tolist() == [7, 7]


def test_write_read_round_trip(tmp_path, tiny_cloud):
    f = tmp_path / "rt.las"
    write_las(tiny_cloud, f)
    back = load_las(f)
    np.testing.assert_allclose(back.x, tiny_cloud.x, atol=5e-4)
    np.testing.assert_allclose(back.y, tiny_cloud.y, atol=5e-4)
    np.testing.assert_allclose(back.z, tiny_cloud.z, atol=5e-4)
    assert back.intensity.tolist() == tiny_cloud.intensity.tolist()
    assert back.class_codes.tolist() == tiny_cloud.class_codes.tolist()
    assert back.crs_id == tiny_cloud.crs_id
    assert back.linear_unit is tiny_cloud.linear_unit


def test_load_write_load_bit_exact(tmp_path):
    """A loaded cloud rewritten with the remembered scale/offset reproduces
    exactly the same coordinates."""
    f1 = tmp_path / "orig.las"
    f1.write_bytes(build_las12(THREE_POINTS, point_format=1, vlrs=[geokey_vlr()]))
    c1 = load_las(f1)
    f2 = tmp_path / "copy.las"
    write_las(c1, f2, point_format=1)
    c2 = load_las(f2)
    assert c1.x.tolist() == c2.x.tolist()
    assert c1.y.tolist() == c2.y.tolist()
    assert c1.z.tolist() == c2.z.tolist()


def test_write_color_round_trip(tmp_path):
    cloud = make_cloud(
        x=[0.0, 1.0], y=[0.0, 1.0], z=[0.0, 1.0],
        rgb=[[255, 0, 10], [1, 2, 3]],
    )
    f = tmp_path / "rgb.las"
    write_las(cloud, f)
    back = load_las(f)
    assert back.rgb.tolist() == [[255, 0, 10], [1, 2, 3]]


def test_write_format6_high_codes(tmp_path):
    cloud = make_cloud(x=[0.0], y=[0.0], z=[0.0], class_codes=[86])
    f = tmp_path / "hi.las"
    write_las(cloud, f, point_format=6)
    data = f.read_bytes()
    assert (data[24], data[25]) == (1, 4)
    back = load_las(f)
    assert back.class_codes.tolist() == [86]


def test_high_codes_rejected_without_format6(tmp_path):
    cloud = make_cloud(x=[0.0], y=[0.0], z=[0.0], class_codes=[64])
    with pytest.raises(UnsupportedFormatError, match="format 6"):
        write_las(cloud, tmp_path / "no.las", point_format=0)


def test_write_empty(tmp_path, tiny_cloud):
    empty = tiny_cloud.take(np.array([], dtype=np.int64))
    f = tmp_path / "zero.las"
    write_las(empty, f)
    assert len(load_las(f)) == 0


def test_write_feet_geokey_unit(tmp_path, tiny_cloud):
    f = tmp_path / "ft.las"
    write_las(tiny_cloud, f)
    back = load_las(f)
    assert back.linear_unit is LinearUnit.FEET
    assert back.crs_id == "EPSG:6539"


def test_write_nonepsg_crs_las14(tmp_path):
    cloud = make_cloud(x=[1.0], y=[2.0], z=[3.0], crs_id="LOCAL:site7", unit=LinearUnit.METERS)
    f = tmp_path / "wkt.las"
    write_las(cloud, f, point_format=6)
    back = load_las(f)
    assert back.crs_id == "LOCAL:site7"
    assert back.linear_unit is LinearUnit.METERS
