import json
import math

import numpy as np
import pytest

from paikit.errors import (
    AlignmentError,
    BoundsError,
    ConfigurationError,
    DimensionMismatchError,
    MissingAttributeError,
)
from paikit.gateway import FeatureClass, ImageRef, MaskAnnotation
from paikit.las import load_las
from paikit.pointcloud import ClassSelector, LinearUnit, PointCloud
from paikit.polygons import ring_area, trace_region
from paikit.raster import CorrespondenceMap, Geotransform, NO_POINT, PixelAttribute
from paikit.render import render_bev
from paikit.reproject import (
    GeoPolygon,
    LabeledCloud,
    bev_mask_to_geo,
    export_inventory,
    mask_vertex_to_world,
    pool_labels,
    street_mask_to_points,
    world_to_mask_vertex,
)

from conftest import make_cloud

BEV_REF = ImageRef("R1", "bev_ground.png")
VIEW_REF = ImageRef("R6", "view_000_front.png")


def bev_mask(rings, fc=FeatureClass.SIDEWALK):
    return MaskAnnotation(rings=tuple(tuple(r) for r in rings), feature_class=fc, image_ref=BEV_REF)


def view_mask(rings, fc=FeatureClass.SIDEWALK):
    return MaskAnnotation(rings=tuple(tuple(r) for r in rings), feature_class=fc, image_ref=VIEW_REF)


# ------------------------------------------------------------- BEV to world


def test_bev_unit_pixel_maps_to_half_cell_offset_square():
    geo = Geotransform(100.0, 200.0, 0.1)
    mask = bev_mask([[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]])
    poly = bev_mask_to_geo(mask, geo, crs_id="EPSG:6539")
    assert poly.feature_class is FeatureClass.SIDEWALK
    assert poly.source_representations == ("R1",)
    xs = [p[0] for p in poly.rings[0]]
    ys = [p[1] for p in poly.rings[0]]
    assert poly.rings[0][0] == pytest.approx((100.05, 199.95), abs=1e-12)
    assert max(xs) - min(xs) == pytest.approx(0.1, abs=1e-12)
    assert max(ys) - min(ys) == pytest.approx(0.1, abs=1e-12)


def test_bev_vertex_round_trip_exact_at_survey_scale():
    geo = Geotransform(430000.0, 4460050.0, 0.1)
    for u, v in [(0.0, 0.0), (12.5, 7.5), (999.0, 3.0), (42.5, 499.5)]:
        x, y = mask_vertex_to_world(geo, u, v)
        u2, v2 = world_to_mask_vertex(geo, x, y)
        assert (u2, v2) == (u, v)
        assert mask_vertex_to_world(geo, u2, v2) == (x, y)


def test_bev_area_scales_by_cell_squared():
    yy, xx = np.mgrid[0:40, 0:40]
    blob = (xx - 20) ** 2 + (yy - 18) ** 2 <= 144
    rings = trace_region(blob)
    pixel_area = sum(ring_area(r) for r in rings)
    geo = Geotransform(500.0, 800.0, 0.25)
    mask = bev_mask(rings)
    poly = bev_mask_to_geo(mask, geo)
    world_area = abs(sum(ring_area(r) for r in poly.rings))
    assert world_area == pytest.approx(pixel_area * 0.25**2, rel=1e-9)


def test_bev_topology_preserved():
    outer = [(0.0, 0.0), (6.0, 0.0), (6.0, 5.0), (0.0, 5.0)]
    hole = [(2.0, 2.0), (3.0, 2.0), (3.0, 3.0), (2.0, 3.0)]
    mask = bev_mask([outer, hole])
    geo = Geotransform(10.0, 20.0, 2.0)
    poly = bev_mask_to_geo(mask, geo)
    assert len(poly.rings) == 2
    for ring, src in zip(poly.rings, mask.rings):
        assert len(ring) == len(src)
        for world, (u, v) in zip(ring, src):
            assert world == mask_vertex_to_world(geo, u, v)


def test_bev_requires_geotransform():
    mask = bev_mask([[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]])
    with pytest.raises(MissingAttributeError):
        bev_mask_to_geo(mask, None)


# ----------------------------------------------------- street mask to points


def make_cmap(width, height, entries):
    cmap = CorrespondenceMap(width, height)
    for col, row, index in entries:
        cmap.point_index[row, col] = index
        cmap.depth[row, col] = 1.0
    return cmap


def test_street_full_cover_returns_all_populated():
    cmap = make_cmap(6, 5, [(0, 0, 10), (3, 2, 20), (5, 4, 30)])
    ring = [(-0.5, -0.5), (5.5, -0.5), (5.5, 4.5), (-0.5, 4.5)]
    got = street_mask_to_points(view_mask([ring], fc=FeatureClass.CROSSWALK), cmap)
    assert sorted(got) == [(10, FeatureClass.CROSSWALK), (20, FeatureClass.CROSSWALK), (30, FeatureClass.CROSSWALK)]


def test_street_mask_over_nodata_is_empty():
    cmap = make_cmap(6, 5, [(5, 4, 30)])
    ring = [(-0.5, -0.5), (1.5, -0.5), (1.5, 1.5), (-0.5, 1.5)]
    assert street_mask_to_points(view_mask([ring]), cmap) == []


def test_street_dimension_mismatch():
    cmap = make_cmap(6, 5, [])
    image_pixels = np.zeros((5, 7), dtype=np.uint8)
    from paikit.raster import RasterImage

    image = RasterImage(pixels=image_pixels, representation_id="R6")
    ring = [(-0.5, -0.5), (1.5, -0.5), (1.5, 1.5), (-0.5, 1.5)]
    with pytest.raises(DimensionMismatchError):
        street_mask_to_points(view_mask([ring]), cmap, image=image)


def test_street_matches_brute_force_on_rendered_scene():
    rng = np.random.default_rng(11)
    n = 1000
    cloud = make_cloud(
        x=rng.uniform(0, 20, n),
        y=rng.uniform(0, 15, n),
        z=rng.uniform(0, 3, n),
        intensity=rng.integers(1, 60000, n),
        class_codes=np.full(n, 2),
    )
    _, cmap = render_bev(cloud, ClassSelector.ALL, PixelAttribute.INTENSITY, cell_size=0.5)

    # irregular polygon with non-lattice vertices so no center is on an edge
    theta = np.linspace(0, 2 * math.pi, 13)[:-1]
    radius = 9.3 + 3.7 * np.sin(3 * theta + 0.31)
    ring = [(20.1 + r * math.cos(t), 14.2 + r * math.sin(t)) for r, t in zip(radius, theta)]
    mask = view_mask([ring], fc=FeatureClass.LANDSCAPE)
    got = street_mask_to_points(mask, cmap)

    from matplotlib.path import Path

    populated = np.argwhere(cmap.populated())
    path = Path(np.asarray(ring))
    expected = []
    for row, col in populated:
        if path.contains_point((col, row)):
            expected.append((int(cmap.point_index[row, col]), FeatureClass.LANDSCAPE))
    assert sorted(got) == sorted(expected)
    assert len(got) > 0
    populated_indices = {int(i) for i in cmap.point_index[cmap.populated()]}
    assert {i for i, _ in got} <= populated_indices


# ------------------------------------------------------------------- pooling


def cloud_of(n):
    return make_cloud(x=np.arange(n, dtype=float), y=np.zeros(n), z=np.zeros(n))


def test_pool_majority_vote():
    cloud = cloud_of(3)
    views = [
        [(0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.CROSSWALK)],
    ]
    labeled = pool_labels(views, cloud, min_votes=2)
    assert labeled.label_of(0) is FeatureClass.SIDEWALK
    assert labeled.label_of(1) is None
    assert labeled.labeled_count == 1
    assert labeled.tallies[0] == {FeatureClass.SIDEWALK: 2, FeatureClass.CROSSWALK: 1}


def test_pool_single_view_identity():
    cloud = cloud_of(4)
    view = [(0, FeatureClass.SIDEWALK), (2, FeatureClass.BENCH)]
    labeled = pool_labels([view], cloud, min_votes=1)
    assert labeled.label_of(0) is FeatureClass.SIDEWALK
    assert labeled.label_of(1) is None
    assert labeled.label_of(2) is FeatureClass.BENCH
    assert labeled.label_of(3) is None


def test_pool_tie_lexicographic_within_planimetric():
    cloud = cloud_of(1)
    views = [
        [(0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.CROSSWALK)],
        [(0, FeatureClass.CROSSWALK)],
    ]
    labeled = pool_labels(views, cloud)
    assert labeled.label_of(0) is FeatureClass.CROSSWALK


def test_pool_tie_planimetric_beats_volumetric():
    cloud = cloud_of(1)
    views = [
        [(0, FeatureClass.BENCH)],
        [(0, FeatureClass.BENCH)],
        [(0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.SIDEWALK)],
    ]
    assert pool_labels(views, cloud).label_of(0) is FeatureClass.SIDEWALK

    views_vol = [
        [(0, FeatureClass.BOLLARD)],
        [(0, FeatureClass.BENCH)],
        [(0, FeatureClass.BOLLARD)],
        [(0, FeatureClass.BENCH)],
    ]
    assert pool_labels(views_vol, cloud).label_of(0) is FeatureClass.BENCH


def test_pool_duplicate_votes_within_one_view_count_once():
    cloud = cloud_of(1)
    views = [
        [(0, FeatureClass.SIDEWALK), (0, FeatureClass.SIDEWALK)],
        [(0, FeatureClass.CROSSWALK)],
    ]
    # dedupe makes it a 1-1 tie, which crosswalk wins lexicographically
    assert pool_labels(views, cloud).label_of(0) is FeatureClass.CROSSWALK


def test_pool_permutation_invariant():
    rng = np.random.default_rng(5)
    cloud = cloud_of(50)
    classes = list(FeatureClass)
    views = [
        [(int(rng.integers(0, 50)), classes[int(rng.integers(0, len(classes)))]) for _ in range(30)]
        for _ in range(6)
    ]
    base = pool_labels(views, cloud, min_votes=2).labels
    for _ in range(5):
        order = rng.permutation(len(views))
        shuffled = [views[i] for i in order]
        assert np.array_equal(pool_labels(shuffled, cloud, min_votes=2).labels, base)


def test_pool_min_votes_monotone_shrinkage():
    rng = np.random.default_rng(9)
    cloud = cloud_of(40)
    classes = [FeatureClass.SIDEWALK, FeatureClass.CROSSWALK, FeatureClass.BENCH]
    views = [
        [(int(rng.integers(0, 40)), classes[int(rng.integers(0, 3))]) for _ in range(25)]
        for _ in range(5)
    ]
    previous = None
    for mv in (1, 2, 3, 4):
        labeled_set = set(pool_labels(views, cloud, min_votes=mv).labeled_indices().tolist())
        if previous is not None:
            assert labeled_set <= previous
        previous = labeled_set


def test_pool_validates_inputs():
    cloud = cloud_of(2)
    with pytest.raises(ValueError):
        pool_labels([], cloud, min_votes=0)
    with pytest.raises(BoundsError):
        pool_labels([[(5, FeatureClass.SIDEWALK)]], cloud)


# -------------------------------------------------------------------- export


def small_labeled(n=20):
    cloud = make_cloud(
        x=np.linspace(0, 10, n),
        y=np.linspace(0, 5, n),
        z=np.zeros(n),
        class_codes=np.full(n, 2),
    )
    views = [[(i, FeatureClass.SIDEWALK) for i in range(10)] + [(i, FeatureClass.BENCH) for i in range(10, 15)]]
    return pool_labels(views, cloud)


def square_geo(fc=FeatureClass.SIDEWALK, crs=None):
    ring = ((100.0, 200.0), (101.0, 200.0), (101.0, 199.0), (100.0, 199.0))
    return GeoPolygon(rings=(ring,), feature_class=fc, source_representations=("R1",), crs_id=crs)


def test_export_empty_inventory(tmp_path):
    cloud = PointCloud(
        x=np.array([]), y=np.array([]), z=np.array([]), crs_id="EPSG:6539", linear_unit=LinearUnit.FEET
    )
    labeled = LabeledCloud(cloud, np.zeros(0, dtype=np.uint8), {})
    paths = export_inventory([], labeled, tmp_path)
    doc = json.loads(paths["geojson"].read_text())
    assert doc["type"] == "FeatureCollection"
    assert doc["features"] == []
    assert len(load_las(paths["las"])) == 0
    table = json.loads(paths["label_map"].read_text())["classification_codes"]
    assert len(table) == 23
    assert table["64"] == "sidewalk"
    assert table["86"] == "waste_container"


def test_export_single_sidewalk_feature(tmp_path):
    labeled = small_labeled()
    paths = export_inventory([square_geo()], labeled, tmp_path)
    doc = json.loads(paths["geojson"].read_text())
    assert len(doc["features"]) == 1
    feature = doc["features"][0]
    assert feature["properties"]["feature_class"] == "sidewalk"
    assert feature["properties"]["source_representations"] == ["R1"]
    ring = feature["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1]
    shoelace = sum(
        ring[i][0] * ring[i + 1][1] - ring[i + 1][0] * ring[i][1] for i in range(len(ring) - 1)
    )
    assert shoelace > 0
    assert doc["crs"]["properties"]["name"] == "EPSG:6539"


def test_export_label_multiset_round_trip(tmp_path):
    labeled = small_labeled()
    paths = export_inventory([], labeled, tmp_path)
    reloaded = load_las(paths["las"])
    from collections import Counter

    assert Counter(reloaded.class_codes.tolist()) == Counter(
        [64] * 10 + [74] * 5 + [2] * 5
    )


def test_export_crs_checks(tmp_path):
    labeled = small_labeled()
    with pytest.raises(AlignmentError):
        export_inventory([square_geo(crs="EPSG:4326")], labeled, tmp_path)

    bare = PointCloud(x=np.zeros(1), y=np.zeros(1), z=np.zeros(1))
    unlabeled = LabeledCloud(bare, np.zeros(1, dtype=np.uint8), {})
    with pytest.raises(ConfigurationError):
        export_inventory([], unlabeled, tmp_path / "x")
