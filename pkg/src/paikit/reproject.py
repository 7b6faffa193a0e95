"""Back to geospatial space: BEV masks become world polygons, street-view
masks become labeled 3D points via the correspondence map, votes from many
views pool into per-point labels, and the result exports as GeoJSON plus a
labeled point cloud."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AlignmentError,
    BoundsError,
    ConfigurationError,
    DimensionMismatchError,
    MissingAttributeError,
)
from .gateway import FeatureClass, MaskAnnotation
from .las import write_las
from .pointcloud import PointCloud
from .polygons import rasterize_rings, ring_area
from .raster import CorrespondenceMap, Geotransform, RasterImage

Ring = Tuple[Tuple[float, float], ...]

GEOJSON_NAME = "inventory.geojson"
LABELED_LAS_NAME = "labeled.las"
LABEL_MAP_NAME = "label_map.json"


@dataclass(frozen=True)
class GeoPolygon:
    """World-coordinate polygon for the GIS inventory. Ring vertex order
    mirrors the source mask (the row-to-northing flip means the traversal
    sense reverses; export re-normalizes orientation for GeoJSON)."""

    rings: Tuple[Ring, ...]
    feature_class: FeatureClass
    source_representations: Tuple[str, ...]
    crs_id: Optional[str] = None


def mask_vertex_to_world(geo: Geotransform, u: float, v: float) -> Tuple[float, float]:
    """Mask coordinates put integers at pixel centers; the geotransform puts
    its origin at the top-left pixel corner, half a cell away."""
    return geo.world(u + 0.5, v + 0.5)


def world_to_mask_vertex(geo: Geotransform, x: float, y: float) -> Tuple[float, float]:
    """Inverse of mask_vertex_to_world. Values within float rounding noise
    of a half-integer snap onto it, so lattice vertices round-trip exactly."""

    def snap(q: float, value: float, origin: float) -> float:
        r = round(q * 2.0) / 2.0
        eps = 2.220446049250313e-16
        if abs(q - r) * geo.cell_size <= 4.0 * eps * max(abs(value), abs(origin), 1.0):
            return r
        return q

    u = snap((x - geo.origin_x) / geo.cell_size - 0.5, x, geo.origin_x)
    v = snap((geo.origin_y - y) / geo.cell_size - 0.5, y, geo.origin_y)
    return (u, v)


def bev_mask_to_geo(
    mask: MaskAnnotation, geo: Optional[Geotransform], crs_id: Optional[str] = None
) -> GeoPolygon:
    """Map every mask vertex pixel-center to world coordinates, preserving
    ring structure, vertex count, and order."""
    if geo is None:
        raise MissingAttributeError("BEV mask re-projection needs the image's geotransform")
    rings = tuple(
        tuple(mask_vertex_to_world(geo, u, v) for u, v in ring) for ring in mask.rings
    )
    return GeoPolygon(
        rings=rings,
        feature_class=mask.feature_class,
        source_representations=(mask.image_ref.representation_id,),
        crs_id=crs_id,
    )


def street_mask_to_points(
    mask: MaskAnnotation,
    cmap: CorrespondenceMap,
    image: Optional[RasterImage] = None,
) -> List[Tuple[int, FeatureClass]]:
    """Point indices whose winning projection landed inside the mask.

    A pixel contributes when it is populated in the correspondence map and
    its center lies inside the mask polygon (even-odd rule over all rings,
    boundary handled half-open). Never fabricates points: the result is a
    subset of the populated pixels' indices."""
    if image is not None and (image.width != cmap.width or image.height != cmap.height):
        raise DimensionMismatchError(
            f"mask image is {image.width}x{image.height} but the correspondence map "
            f"is {cmap.width}x{cmap.height}"
        )
    inside = rasterize_rings([list(r) for r in mask.rings], cmap.height, cmap.width)
    hit = inside & cmap.populated()
    indices = cmap.point_index[hit].astype(np.int64)
    return [(int(i), mask.feature_class) for i in indices]


class LabeledCloud:
    """Pooled semantic labels over a point cloud: a per-point classification
    code (0 when unlabeled, feature-class codes 64..86 otherwise) plus the
    vote tally behind every labeled point."""

    def __init__(
        self,
        cloud: PointCloud,
        labels: np.ndarray,
        tallies: Dict[int, Dict[FeatureClass, int]],
    ):
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.shape != (len(cloud),):
            raise DimensionMismatchError("one label slot per point required")
        self.cloud = cloud
        self.labels = labels
        self.tallies = tallies

    def label_of(self, index: int) -> Optional[FeatureClass]:
        code = int(self.labels[index])
        return None if code == 0 else FeatureClass.from_las_code(code)

    @property
    def labeled_count(self) -> int:
        return int(np.count_nonzero(self.labels))

    def labeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labels)[0]


def _tie_rank(fc: FeatureClass) -> Tuple[bool, str]:
    return (not fc.planimetric, fc.canonical_name)


def pool_labels(
    contributions: Sequence[Sequence[Tuple[int, FeatureClass]]],
    cloud: PointCloud,
    min_votes: int = 1,
) -> LabeledCloud:
    """Tally per-point class votes across views and keep the winners.

    One view contributes at most one vote per (point, class) no matter how
    many pixels the point covered in that view. A point is labeled with the
    class holding the most votes when that count reaches min_votes; vote
    ties go to planimetric classes before volumetric, then to the
    lexicographically smaller class name. View order never matters."""
    if min_votes < 1:
        raise ValueError("min_votes must be at least 1")
    n = len(cloud)
    tallies: Dict[int, Dict[FeatureClass, int]] = {}
    for view in contributions:
        for index, fc in set(view):
            if not (0 <= index < n):
                raise BoundsError(f"contribution references point {index} of {n}")
            per_point = tallies.setdefault(index, {})
            per_point[fc] = per_point.get(fc, 0) + 1

    labels = np.zeros(n, dtype=np.uint8)
    for index, tally in tallies.items():
        top = max(tally.values())
        if top < min_votes:
            continue
        winner = min((fc for fc, c in tally.items() if c == top), key=_tie_rank)
        labels[index] = winner.las_code
    return LabeledCloud(cloud, labels, tallies)


def _geojson_ring(ring: Ring, outer: bool) -> List[List[float]]:
    # GeoJSON wants closed rings, exteriors counterclockwise in world axes
    area = ring_area(ring)
    pts = list(ring)
    if (outer and area < 0) or (not outer and area > 0):
        pts.reverse()
    pts.append(pts[0])
    return [[float(x), float(y)] for x, y in pts]


def export_inventory(
    geos: Sequence[GeoPolygon],
    labeled: LabeledCloud,
    out_dir,
    crs_id: Optional[str] = None,
) -> Dict[str, Path]:
    """Write the inventory: a GeoJSON FeatureCollection of the world
    polygons, the point cloud with pooled labels burned into the
    classification field, and the code-to-class sidecar table.

    Unlabeled points keep their original classification; labeled points
    carry their feature-class code, which needs the extended point format."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crs = crs_id or labeled.cloud.crs_id
    if crs is None:
        raise ConfigurationError("inventory export needs a coordinate reference system")
    for geo in geos:
        if geo.crs_id is not None and geo.crs_id != crs:
            raise AlignmentError(f"polygon CRS {geo.crs_id} does not match {crs}")

    features = []
    for geo in geos:
        coordinates = [_geojson_ring(ring, outer=(i == 0)) for i, ring in enumerate(geo.rings)]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": coordinates},
                "properties": {
                    "feature_class": geo.feature_class.canonical_name,
                    "source_representations": list(geo.source_representations),
                },
            }
        )
    collection = {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": crs}},
        "features": features,
    }
    geojson_path = out_dir / GEOJSON_NAME
    geojson_path.write_text(json.dumps(collection, indent=2))

    codes = labeled.cloud.class_codes.copy()
    labeled_mask = labeled.labels != 0
    codes[labeled_mask] = labeled.labels[labeled_mask]
    las_path = out_dir / LABELED_LAS_NAME
    write_las(labeled.cloud.with_class_codes(codes), las_path, point_format=6)

    label_map_path = out_dir / LABEL_MAP_NAME
    label_map_path.write_text(
        json.dumps(
            {
                "classification_codes": {
                    str(fc.las_code): fc.canonical_name for fc in FeatureClass
                },
                "unlabeled": "points keep their ground/vegetation classification",
            },
            indent=2,
        )
    )
    return {"geojson": geojson_path, "las": las_path, "label_map": label_map_path}
