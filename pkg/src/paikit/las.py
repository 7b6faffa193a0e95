"""LAS 1.2 / 1.4 binary reader and writer.

Covers point formats 0-3 (ingest) plus format 6 (labeled export, whose
classification byte accommodates the user-defined codes above 31). The
parser is deliberately hand-rolled over numpy views: every offset is visible
here and error messages name the byte that broke.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, FormatError, UnsupportedFormatError
from .geokeys import decode_geokeys, encode_geokeys
from .pointcloud import LinearUnit, PointCloud

SIGNATURE = b"LASF"
HEADER_SIZE = {(1, 2): 227, (1, 4): 375}
SUPPORTED_FORMATS = (0, 1, 2, 3, 6)

# Standard record length per point format.
RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34, 6: 30}

VLR_HEADER_LEN = 54
VLR_PROJECTION_USER = b"LASF_Projection"
VLR_GEOKEYS_ID = 34735
VLR_WKT_ID = 2112

_BASE_FIELDS = [
    ("X", "<i4", 0),
    ("Y", "<i4", 4),
    ("Z", "<i4", 8),
    ("intensity", "<u2", 12),
    ("returns", "u1", 14),
    ("classification", "u1", 15),
    ("scan_angle", "i1", 16),
    ("user_data", "u1", 17),
    ("point_source", "<u2", 18),
]

_FMT6_FIELDS = [
    ("X", "<i4", 0),
    ("Y", "<i4", 4),
    ("Z", "<i4", 8),
    ("intensity", "<u2", 12),
    ("returns", "u1", 14),
    ("class_flags", "u1", 15),
    ("classification", "u1", 16),
    ("user_data", "u1", 17),
    ("scan_angle", "<i2", 18),
    ("point_source", "<u2", 20),
    ("gps_time", "<f8", 22),
]


def _point_dtype(fmt: int, record_length: int) -> np.dtype:
    if fmt == 6:
        fields = list(_FMT6_FIELDS)
    else:
        fields = list(_BASE_FIELDS)
        if fmt in (1, 3):
            fields.append(("gps_time", "<f8", 20))
        if fmt in (2, 3):
            base = 20 if fmt == 2 else 28
            fields += [("red", "<u2", base), ("green", "<u2", base + 2), ("blue", "<u2", base + 4)]
    return np.dtype(
        {
            "names": [f[0] for f in fields],
            "formats": [f[1] for f in fields],
            "offsets": [f[2] for f in fields],
            "itemsize": record_length,
        }
    )


def load_las(
    path,
    crs_override: Optional[str] = None,
    unit_override: Optional[LinearUnit] = None,
) -> PointCloud:
    """Read a LAS file into a PointCloud.

    CRS id and linear unit come from the header VLRs when present; the
    overrides fill in when the file carries neither.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != SIGNATURE:
        raise FormatError(f"{path}: offset 0: expected LASF signature")
    if len(data) < 227:
        raise FormatError(f"{path}: offset 4: file shorter than a LAS header")

    version = (data[24], data[25])
    if version not in HEADER_SIZE:
        raise UnsupportedFormatError(
            f"{path}: offset 24: LAS {version[0]}.{version[1]} unsupported (1.2 or 1.4 only)"
        )
    (header_size,) = struct.unpack_from("<H", data, 94)
    if header_size < HEADER_SIZE[version]:
        raise FormatError(
            f"{path}: offset 94: header size {header_size} below the "
            f"{HEADER_SIZE[version]} required by LAS {version[0]}.{version[1]}"
        )
    (point_offset,) = struct.unpack_from("<I", data, 96)
    (n_vlrs,) = struct.unpack_from("<I", data, 100)
    point_format = data[104]
    if point_format not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(
            f"{path}: offset 104: point format {point_format} unsupported "
            f"(supported: {', '.join(map(str, SUPPORTED_FORMATS))})"
        )
    (record_length,) = struct.unpack_from("<H", data, 105)
    if record_length < RECORD_LENGTH[point_format]:
        raise FormatError(
            f"{path}: offset 105: record length {record_length} below the "
            f"{RECORD_LENGTH[point_format]} of point format {point_format}"
        )
    (legacy_count,) = struct.unpack_from("<I", data, 107)
    count = legacy_count
    if version == (1, 4):
        (count64,) = struct.unpack_from("<Q", data, 247)
        if count64:
            count = count64
    scale = struct.unpack_from("<3d", data, 131)
    offset = struct.unpack_from("<3d", data, 155)

    if point_offset > len(data):
        raise FormatError(f"{path}: offset 96: point data offset {point_offset} beyond EOF")
    end = point_offset + count * record_length
    if end > len(data):
        raise FormatError(
            f"{path}: offset {point_offset}: {count} records of {record_length} bytes "
            f"run past EOF at {len(data)}"
        )

    crs_id, unit = _read_crs_vlrs(data, header_size, n_vlrs, path)
    if crs_id is None:
        crs_id = crs_override
    if unit is None:
        unit = unit_override
    if crs_id is None:
        raise ConfigurationError(
            f"{path}: no CRS in header VLRs and no override given (pass --crs)"
        )
    if unit is None:
        raise ConfigurationError(
            f"{path}: no linear unit in header VLRs and no override given (pass --unit)"
        )

    raw = np.frombuffer(data, dtype=_point_dtype(point_format, record_length), count=count, offset=point_offset)

    x = raw["X"] * scale[0] + offset[0]
    y = raw["Y"] * scale[1] + offset[1]
    z = raw["Z"] * scale[2] + offset[2]
    if point_format == 6:
        class_codes = raw["classification"].copy()
    else:
        class_codes = (raw["classification"] & 0x1F).astype(np.uint8)
    rgb = None
    if point_format in (2, 3):
        # LAS colors are 16-bit; the 8-bit model value is the high byte.
        rgb = np.stack(
            [raw["red"] >> 8, raw["green"] >> 8, raw["blue"] >> 8], axis=1
        ).astype(np.uint8)

    return PointCloud(
        x,
        y,
        z,
        raw["intensity"].copy(),
        rgb,
        class_codes,
        crs_id=crs_id,
        linear_unit=unit,
        source_path=str(path),
        las_scale=tuple(scale),
        las_offset=tuple(offset),
    )


def _read_crs_vlrs(data: bytes, header_size: int, n_vlrs: int, path) -> Tuple[Optional[str], Optional[LinearUnit]]:
    crs_id = None
    unit = None
    pos = header_size
    for _ in range(n_vlrs):
        if pos + VLR_HEADER_LEN > len(data):
            raise FormatError(f"{path}: offset {pos}: VLR header runs past EOF")
        user_id = data[pos + 2 : pos + 18].rstrip(b"\x00")
        (record_id,) = struct.unpack_from("<H", data, pos + 18)
        (body_len,) = struct.unpack_from("<H", data, pos + 20)
        body = data[pos + VLR_HEADER_LEN : pos + VLR_HEADER_LEN + body_len]
        if len(body) < body_len:
            raise FormatError(f"{path}: offset {pos + VLR_HEADER_LEN}: VLR body truncated")
        if user_id == VLR_PROJECTION_USER:
            if record_id == VLR_GEOKEYS_ID and body_len >= 8:
                shorts = struct.unpack_from(f"<{body_len // 2}H", body, 0)
                got_crs, got_unit = decode_geokeys(shorts)
                crs_id = crs_id or got_crs
                unit = unit or got_unit
            elif record_id == VLR_WKT_ID:
                got_crs, got_unit = _parse_wkt(body.rstrip(b"\x00").decode("utf-8", "replace"))
                crs_id = crs_id or got_crs
                unit = unit or got_unit
        pos += VLR_HEADER_LEN + body_len
    return crs_id, unit


def _parse_wkt(wkt: str) -> Tuple[Optional[str], Optional[LinearUnit]]:
    """Pull the CRS name and unit out of the small WKT strings this writer
    emits (LOCAL_CS["...", UNIT["...", factor]]); tolerant of other WKT."""
    crs_id = None
    unit = None
    first_quote = wkt.find('"')
    if first_quote >= 0:
        second = wkt.find('"', first_quote + 1)
        if second > first_quote:
            name = wkt[first_quote + 1 : second]
            crs_id = name if name else None
    low = wkt.lower()
    if "foot" in low or '"feet"' in low:
        unit = LinearUnit.FEET
    elif "metre" in low or "meter" in low:
        unit = LinearUnit.METERS
    return crs_id, unit


def _wkt_for(crs_id: str, unit: LinearUnit) -> str:
    if unit is LinearUnit.FEET:
        return f'LOCAL_CS["{crs_id}",UNIT["foot",0.3048]]'
    return f'LOCAL_CS["{crs_id}",UNIT["metre",1.0]]'


def _pick_quantization(cloud: PointCloud) -> Tuple[Tuple[float, float, float], Tuple[float, float, float]]:
    if cloud.las_scale is not None and cloud.las_offset is not None:
        return cloud.las_scale, cloud.las_offset
    if len(cloud) == 0:
        return (0.001, 0.001, 0.001), (0.0, 0.0, 0.0)
    offset = tuple(float(np.floor(a.min())) for a in (cloud.x, cloud.y, cloud.z))
    return (0.001, 0.001, 0.001), offset


def write_las(
    cloud: PointCloud,
    path,
    point_format: Optional[int] = None,
    version: Optional[Tuple[int, int]] = None,
) -> None:
    """Write a PointCloud as LAS.

    Defaults: format 2 when the cloud has color else 0, LAS 1.2; format 6
    forces LAS 1.4. Reuses the source file's scale/offset when the cloud
    was loaded from LAS, so load -> write -> load is bit-exact.
    """
    if point_format is None:
        point_format = 2 if cloud.has_color else 0
    if point_format not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"point format {point_format} unsupported")
    if version is None:
        version = (1, 4) if point_format == 6 else (1, 2)
    if point_format == 6 and version != (1, 4):
        raise UnsupportedFormatError("point format 6 requires LAS 1.4")
    if version not in HEADER_SIZE:
        raise UnsupportedFormatError(f"LAS {version} unsupported")
    if point_format in (0, 1) and cloud.has_color:
        point_format = point_format + 2  # keep color rather than drop it
    if point_format != 6 and np.any(cloud.class_codes > 31):
        raise UnsupportedFormatError(
            "class codes above 31 need point format 6 (full classification byte)"
        )

    scale, offset = _pick_quantization(cloud)
    n = len(cloud)
    record_length = RECORD_LENGTH[point_format]
    rec = np.zeros(n, dtype=_point_dtype(point_format, record_length))
    for name, arr, sc, off in (
        ("X", cloud.x, scale[0], offset[0]),
        ("Y", cloud.y, scale[1], offset[1]),
        ("Z", cloud.z, scale[2], offset[2]),
    ):
        q = np.round((arr - off) / sc)
        if n and (q.max() > 2**31 - 1 or q.min() < -(2**31)):
            raise FormatError(f"{name} exceeds the 32-bit LAS integer range at scale {sc}")
        rec[name] = q.astype(np.int64)
    rec["intensity"] = cloud.intensity
    if point_format == 6:
        rec["returns"] = 0x11  # return 1 of 1
        rec["classification"] = cloud.class_codes
    else:
        rec["returns"] = 0x09  # return 1 of 1
        rec["classification"] = cloud.class_codes & 0x1F
    if point_format in (2, 3):
        rgb = cloud.rgb if cloud.rgb is not None else np.zeros((n, 3), np.uint8)
        rec["red"] = rgb[:, 0].astype(np.uint16) * 256
        rec["green"] = rgb[:, 1].astype(np.uint16) * 256
        rec["blue"] = rgb[:, 2].astype(np.uint16) * 256

    vlrs = []
    if cloud.crs_id:
        if version == (1, 4):
            wkt = _wkt_for(cloud.crs_id, cloud.linear_unit).encode() + b"\x00"
            vlrs.append((VLR_PROJECTION_USER, VLR_WKT_ID, wkt))
        else:
            shorts = encode_geokeys(cloud.crs_id, cloud.linear_unit)
            if shorts is not None:
                vlrs.append(
                    (VLR_PROJECTION_USER, VLR_GEOKEYS_ID, struct.pack(f"<{len(shorts)}H", *shorts))
                )

    header_size = HEADER_SIZE[version]
    vlr_bytes = b"".join(
        struct.pack("<H16sHH32s", 0, user.ljust(16, b"\x00"), rid, len(body), b"\x00" * 32) + body
        for user, rid, body in vlrs
    )
    point_offset = header_size + len(vlr_bytes)

    if n:
        xs = rec["X"] * scale[0] + offset[0]
        ys = rec["Y"] * scale[1] + offset[1]
        zs = rec["Z"] * scale[2] + offset[2]
        bounds = (xs.max(), xs.min(), ys.max(), ys.min(), zs.max(), zs.min())
    else:
        bounds = (0.0,) * 6

    header = bytearray(header_size)
    header[0:4] = SIGNATURE
    global_encoding = 16 if version == (1, 4) else 0  # bit 4: WKT CRS
    struct.pack_into("<H", header, 6, global_encoding)
    header[24] = version[0]
    header[25] = version[1]
    header[26:58] = b"paikit".ljust(32, b"\x00")
    header[58:90] = b"paikit writer".ljust(32, b"\x00")
    struct.pack_into("<H", header, 94, header_size)
    struct.pack_into("<I", header, 96, point_offset)
    struct.pack_into("<I", header, 100, len(vlrs))
    header[104] = point_format
    struct.pack_into("<H", header, 105, record_length)
    legacy = n if (point_format <= 5 and n < 2**32) else 0
    struct.pack_into("<I", header, 107, legacy)
    if legacy:
        struct.pack_into("<I", header, 111, legacy)  # by-return slot 1
    struct.pack_into("<3d", header, 131, *scale)
    struct.pack_into("<3d", header, 155, *offset)
    struct.pack_into("<6d", header, 179, *bounds)
    if version == (1, 4):
        struct.pack_into("<Q", header, 247, n)
        struct.pack_into("<Q", header, 255, n)  # by-return slot 1

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(vlr_bytes)
        fh.write(rec.tobytes())
