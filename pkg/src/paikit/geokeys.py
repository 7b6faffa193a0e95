"""Minimal GeoKey directory encode/decode.

The same little key/value table describes the CRS in both GeoTIFF rasters
(tag 34735) and LAS coordinate-reference VLRs (record id 34735), so both
writers share this module. Only the three keys the pipeline needs are
handled: model type, projected CRS EPSG code, and linear unit.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

from .pointcloud import LinearUnit

KEY_MODEL_TYPE = 1024
KEY_PROJECTED_CRS = 3072
KEY_LINEAR_UNITS = 3076

MODEL_TYPE_PROJECTED = 1

UNIT_METER = 9001
UNIT_FOOT = 9002
UNIT_US_SURVEY_FOOT = 9003

_UNIT_CODES = {LinearUnit.METERS: UNIT_METER, LinearUnit.FEET: UNIT_FOOT}
_CODE_UNITS = {
    UNIT_METER: LinearUnit.METERS,
    UNIT_FOOT: LinearUnit.FEET,
    UNIT_US_SURVEY_FOOT: LinearUnit.FEET,
}


def epsg_code(crs_id: Optional[str]) -> Optional[int]:
    """EPSG integer for ids shaped like 'EPSG:6539'; None otherwise."""
    if not crs_id:
        return None
    head, _, tail = crs_id.partition(":")
    if head.strip().upper() != "EPSG":
        return None
    try:
        code = int(tail.strip())
    except ValueError:
        return None
    return code if 0 < code < 65535 else None


def encode_geokeys(crs_id: Optional[str], unit: Optional[LinearUnit]) -> Optional[Tuple[int, ...]]:
    """GeoKey directory shorts for an EPSG CRS, or None when not expressible."""
    code = epsg_code(crs_id)
    if code is None:
        return None
    entries = [
        (KEY_MODEL_TYPE, 0, 1, MODEL_TYPE_PROJECTED),
        (KEY_PROJECTED_CRS, 0, 1, code),
    ]
    if unit is not None:
        entries.append((KEY_LINEAR_UNITS, 0, 1, _UNIT_CODES[unit]))
    header = (1, 1, 0, len(entries))
    return header + tuple(v for entry in entries for v in entry)


def decode_geokeys(shorts: Sequence[int]) -> Tuple[Optional[str], Optional[LinearUnit]]:
    """(crs_id, unit) recovered from a GeoKey directory; missing keys -> None."""
    if len(shorts) < 4:
        return None, None
    n_keys = shorts[3]
    crs_id = None
    unit = None
    for k in range(n_keys):
        base = 4 + 4 * k
        if base + 4 > len(shorts):
            break
        key_id, location, _count, value = shorts[base : base + 4]
        if location != 0:
            continue
        if key_id == KEY_PROJECTED_CRS:
            crs_id = f"EPSG:{value}"
        elif key_id == KEY_LINEAR_UNITS:
            unit = _CODE_UNITS.get(value)
    return crs_id, unit
