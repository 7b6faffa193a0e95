"""Sidewalk geometry from labeled points: centerline extraction over an
occupancy grid, then station-by-station width, running slope, and cross
slope along each centerline. Distances in the station records are meters
regardless of the cloud's native unit; slopes are percentages signed along
the direction of travel (cross slope toward the left of travel)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .errors import DegenerateInputError
from .gateway import FeatureClass
from .pointcloud import LinearUnit
from .reproject import LabeledCloud


@dataclass(frozen=True)
class MetricsParams:
    """Centerline extraction knobs (all lengths in meters)."""

    grid_cell_m: float = 0.25
    min_arc_m: float = 2.0
    smooth_window_m: float = 2.0
    close_gaps: bool = True

    def __post_init__(self):
        if self.grid_cell_m <= 0 or self.min_arc_m < 0 or self.smooth_window_m < 0:
            raise ValueError("metrics parameters must be positive")


@dataclass(frozen=True)
class StationMeasure:
    """One station: arc length plus measurements, None when the station had
    too few points or a degenerate fit."""

    s_m: float
    width_m: Optional[float]
    running_slope_pct: Optional[float]
    cross_slope_pct: Optional[float]
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        if self.width_m is not None and not (self.width_m > 0):
            raise ValueError("station width must be positive when measured")
        for slope in (self.running_slope_pct, self.cross_slope_pct):
            if slope is not None and not math.isfinite(slope):
                raise ValueError("station slopes must be finite when measured")


@dataclass(frozen=True)
class SidewalkSegment:
    centerline: np.ndarray  # (N, 2) world coordinates
    stations: Tuple[StationMeasure, ...]

    def __post_init__(self):
        s_values = [st.s_m for st in self.stations]
        if any(b <= a for a, b in zip(s_values, s_values[1:])):
            raise ValueError("station arc lengths must be strictly increasing")


def _polyline_cum(line: np.ndarray) -> np.ndarray:
    deltas = np.diff(line, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.hypot(deltas[:, 0], deltas[:, 1]))])


def polyline_length(line: np.ndarray) -> float:
    return float(_polyline_cum(np.asarray(line, dtype=np.float64))[-1])


def _polyline_at(line: np.ndarray, cum: np.ndarray, s: float) -> Tuple[np.ndarray, np.ndarray]:
    """Point and unit tangent at arc length s (clamped to the ends)."""
    s = min(max(s, 0.0), float(cum[-1]))
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(line) - 2)
    seg = line[i + 1] - line[i]
    seg_len = float(np.hypot(seg[0], seg[1]))
    t = 0.0 if seg_len == 0 else (s - cum[i]) / seg_len
    return line[i] + t * seg, seg / seg_len if seg_len else np.array([1.0, 0.0])


# ------------------------------------------------------------ centerlines


def _skeleton_arcs(skel: np.ndarray) -> List[List[Tuple[int, int]]]:
    """Split a skeleton bitmap into pixel chains between endpoints and
    junctions (8-connected); isolated loops come back as closed chains."""
    pixels = {(int(r), int(c)) for r, c in np.argwhere(skel)}

    def neighbors(p):
        r, c = p
        return [
            (r + dr, c + dc)
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
            if (dr or dc) and (r + dr, c + dc) in pixels
        ]

    degree = {p: len(neighbors(p)) for p in pixels}
    nodes = {p for p, d in degree.items() if d != 2}
    used = set()
    arcs: List[List[Tuple[int, int]]] = []

    def walk(start, first):
        chain = [start, first]
        used.add((start, first))
        used.add((first, start))
        while chain[-1] not in nodes:
            prev, here = chain[-2], chain[-1]
            options = [n for n in neighbors(here) if n != prev]
            if not options:
                break
            nxt = options[0]
            if (here, nxt) in used:
                break
            used.add((here, nxt))
            used.add((nxt, here))
            chain.append(nxt)
        return chain

    for node in sorted(nodes):
        for nb in sorted(neighbors(node)):
            if (node, nb) not in used:
                arcs.append(walk(node, nb))
    # pure cycles: every pixel degree 2, no nodes to anchor on
    remaining = sorted(p for p in pixels if p not in nodes and not any((p, n) in used for n in neighbors(p)))
    while remaining:
        start = remaining[0]
        chain = walk(start, neighbors(start)[0])
        arcs.append(chain)
        remaining = [p for p in remaining if not any((p, n) in used for n in neighbors(p))]
    for p in sorted(pixels):
        if degree[p] == 0:
            arcs.append([p])
    return arcs


def _smooth_polyline(line: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(line) <= 2:
        return line
    window = min(window if window % 2 == 1 else window + 1, 2 * len(line) - 1)
    half = window // 2
    padded = np.vstack([np.repeat(line[:1], half, axis=0), line, np.repeat(line[-1:], half, axis=0)])
    kernel = np.full(window, 1.0 / window)
    return np.column_stack(
        [np.convolve(padded[:, k], kernel, mode="valid") for k in range(2)]
    )


def extract_centerline(
    labeled: LabeledCloud,
    feature_class: FeatureClass,
    params: MetricsParams = MetricsParams(),
) -> List[np.ndarray]:
    """Centerline polylines for one feature class.

    Class points rasterize onto an occupancy grid, small gaps close, the
    grid thins to a skeleton, and skeleton arcs become world polylines;
    arcs shorter than the minimum survive only as nothing. Each polyline is
    smoothed with a moving average and oriented so its lexicographically
    smaller endpoint comes first."""
    cloud = labeled.cloud
    sel = labeled.labels == feature_class.las_code
    if not sel.any():
        return []
    unit = cloud.linear_unit or LinearUnit.METERS
    cell = unit.from_meters(params.grid_cell_m)
    xs = cloud.x[sel]
    ys = cloud.y[sel]
    ox = float(xs.min())
    oy = float(ys.min())
    cols = np.floor((xs - ox) / cell).astype(np.int64) + 1  # 1-pixel empty border
    rows = np.floor((ys - oy) / cell).astype(np.int64) + 1
    grid = np.zeros((int(rows.max()) + 2, int(cols.max()) + 2), dtype=bool)
    grid[rows, cols] = True
    if params.close_gaps:
        grid = ndimage.binary_closing(grid, structure=np.ones((3, 3), dtype=bool))
    skel = skeletonize(grid)

    min_len = unit.from_meters(params.min_arc_m)
    window = int(round(unit.from_meters(params.smooth_window_m) / cell))
    polylines = []
    for chain in _skeleton_arcs(skel):
        if len(chain) < 2:
            continue
        pts = np.array(
            [(ox + (c - 1 + 0.5) * cell, oy + (r - 1 + 0.5) * cell) for r, c in chain],
            dtype=np.float64,
        )
        if polyline_length(pts) < min_len:
            continue
        pts = _smooth_polyline(pts, window)
        if tuple(pts[-1]) < tuple(pts[0]):
            pts = pts[::-1]
        polylines.append(pts)
    return polylines


# ---------------------------------------------------------------- stations


def _fit_slope(t: np.ndarray, z: np.ndarray) -> Optional[float]:
    """Least-squares dz/dt through demeaned samples; None when degenerate.

    Heights are referenced to the first sample before demeaning so a
    uniform height offset cancels out of the fit rather than leaking in
    through the rounding of the mean.
    """
    if len(t) < 2:
        return None
    tc = t - t.mean()
    denominator = float(np.dot(tc, tc))
    if denominator <= 0.0:
        return None
    dz = z - z[0]
    zc = dz - dz.mean()
    return float(np.dot(tc, zc) / denominator)


# uniform-distribution span between the 2nd and 98th percentile
_PERCENTILE_SPAN = 0.96


def _station_frame(
    rel: np.ndarray, tangent: np.ndarray, half_along: float, probe: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Select station points and their (along, across) coordinates.

    The polyline tangent picks the candidate points, then the principal
    axis of their spread refines the travel direction (oriented to agree
    with the polyline) and the selection repeats in the refined frame.
    This keeps widths honest where the rasterized centerline wiggles,
    and depends on the points alone, so it is rigid-motion equivariant."""

    def select(t):
        n = np.array([-t[1], t[0]])  # left of travel
        along = rel @ t
        across = rel @ n
        keep = (np.abs(along) <= half_along) & (np.abs(across) <= probe)
        return keep, along, across

    axis = tangent
    keep, along, across = select(axis)
    for _ in range(8):
        if int(keep.sum()) < 3:
            break
        xy = rel[keep]
        d = xy - xy.mean(axis=0)
        sxx = float(np.dot(d[:, 0], d[:, 0]))
        syy = float(np.dot(d[:, 1], d[:, 1]))
        sxy = float(np.dot(d[:, 0], d[:, 1]))
        gap = math.hypot(sxx - syy, 2.0 * sxy)
        if gap <= 1e-9 * (sxx + syy):
            break
        phi = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
        refined = np.array([math.cos(phi), math.sin(phi)])
        if float(refined @ tangent) < 0:
            refined = -refined
        done = abs(float(refined @ axis)) > 1.0 - 1e-12
        axis = refined
        keep, along, across = select(axis)
        if done:
            break
    return keep, along, across


def measure_stations(
    labeled: LabeledCloud,
    centerline: np.ndarray,
    station_spacing: float,
    probe_halfwidth: float,
    feature_class: FeatureClass = FeatureClass.SIDEWALK,
    running_window_m: float = 2.0,
    min_station_points: int = 10,
) -> SidewalkSegment:
    """Width and slope profile along one centerline.

    station_spacing and probe_halfwidth are meters. At each station the
    class points within half a station spacing along-track and inside the
    probe corridor are measured: width as their 2nd-98th percentile
    perpendicular extent rescaled to full span, cross slope as the
    least-squares z-versus-offset grade, and running slope as the
    least-squares z-versus-arc-length grade over a +-2 m window. Stations
    with fewer than min_station_points points report null measurements."""
    centerline = np.asarray(centerline, dtype=np.float64)
    if centerline.ndim != 2 or centerline.shape[0] < 2 or centerline.shape[1] != 2:
        raise DegenerateInputError("centerline must be an (N, 2) polyline with N >= 2")
    cloud = labeled.cloud
    unit = cloud.linear_unit or LinearUnit.METERS
    spacing = unit.from_meters(station_spacing)
    probe = unit.from_meters(probe_halfwidth)
    run_window = unit.from_meters(running_window_m)
    cum = _polyline_cum(centerline)
    length = float(cum[-1])
    if length < spacing:
        raise DegenerateInputError("centerline shorter than one station spacing")

    sel = labeled.labels == feature_class.las_code
    pts = np.column_stack([cloud.x[sel], cloud.y[sel]])
    elevation = cloud.z[sel]

    stations = []
    k = 0
    while True:
        s = k * spacing
        if s >= length:
            break
        center, tangent = _polyline_at(centerline, cum, s)
        rel = pts - center
        in_station, along, across = _station_frame(rel, tangent, spacing / 2.0, probe)
        width_m = cross_pct = running_pct = None
        if int(in_station.sum()) >= min_station_points:
            lo, hi = np.percentile(across[in_station], [2.0, 98.0])
            span = (hi - lo) / _PERCENTILE_SPAN
            width_m = unit.to_meters(span) if span > 0 else None
            cross = _fit_slope(across[in_station], elevation[in_station])
            cross_pct = None if cross is None else 100.0 * cross
            in_run = (np.abs(along) <= run_window) & (np.abs(across) <= probe)
            running = _fit_slope(along[in_run], elevation[in_run])
            running_pct = None if running is None else 100.0 * running
        stations.append(
            StationMeasure(
                s_m=unit.to_meters(s),
                width_m=width_m,
                running_slope_pct=running_pct,
                cross_slope_pct=cross_pct,
                x=float(center[0]),
                y=float(center[1]),
            )
        )
        k += 1
    return SidewalkSegment(centerline=centerline, stations=tuple(stations))


# ----------------------------------------------------------------- outputs

CSV_HEADER = ("s_m", "width_m", "running_slope_pct", "cross_slope_pct")


def write_station_csv(segments: Sequence[SidewalkSegment], path) -> None:
    """One delimited row per station across all segments; missing
    measurements stay empty."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("segment",) + CSV_HEADER)
        for i, segment in enumerate(segments):
            for st in segment.stations:
                writer.writerow(
                    [
                        i,
                        f"{st.s_m:.6f}",
                        "" if st.width_m is None else f"{st.width_m:.6f}",
                        "" if st.running_slope_pct is None else f"{st.running_slope_pct:.6f}",
                        "" if st.cross_slope_pct is None else f"{st.cross_slope_pct:.6f}",
                    ]
                )


def segments_to_geojson(segments: Sequence[SidewalkSegment], crs_id: str) -> Dict:
    """FeatureCollection: one LineString per centerline plus one Point per
    station carrying the measurements as properties."""
    features = []
    for i, segment in enumerate(segments):
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[float(x), float(y)] for x, y in segment.centerline],
                },
                "properties": {"segment": i},
            }
        )
        for st in segment.stations:
            features.append(
                {
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [st.x, st.y]},
                    "properties": {
                        "segment": i,
                        "s_m": st.s_m,
                        "width_m": st.width_m,
                        "running_slope_pct": st.running_slope_pct,
                        "cross_slope_pct": st.cross_slope_pct,
                    },
                }
            )
    return {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": crs_id}},
        "features": features,
    }


def write_segments_geojson(segments: Sequence[SidewalkSegment], crs_id: str, path) -> None:
    Path(path).write_text(json.dumps(segments_to_geojson(segments, crs_id), indent=2))
