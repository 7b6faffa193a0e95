import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paikit.errors import DegenerateInputError, EmptyInputError, ParseError
from paikit.pointcloud import (
    FEET_TO_METERS,
    ClassLabel,
    ClassSelector,
    Extent2D,
    LinearUnit,
    Trajectory,
    load_trajectory,
)

from conftest import make_cloud


def test_unit_conversion_round_trip():
    assert LinearUnit.FEET.to_meters(1.0) == pytest.approx(0.3048)
    v = 123.456
    assert LinearUnit.FEET.from_meters(LinearUnit.FEET.to_meters(v)) == pytest.approx(v)
    assert LinearUnit.METERS.to_meters(2.5) == 2.5
    assert FEET_TO_METERS == 0.3048


def test_unit_parse():
    assert LinearUnit.parse("feet") is LinearUnit.FEET
    assert LinearUnit.parse("m") is LinearUnit.METERS
    with pytest.raises(ValueError):
        LinearUnit.parse("furlongs")


def test_class_label_singletons():
    assert ClassLabel.GROUND.code == 2
    assert ClassLabel.from_code(2) is ClassLabel.GROUND
    assert ClassLabel.from_code(77).code == 77
    with pytest.raises(ValueError):
        ClassLabel.from_code(300)


def test_selector_masks():
    codes = np.array([1, 2, 3, 4, 5, 64], dtype=np.uint8)
    all_mask = ClassSelector.ALL.mask(codes)
    assert all_mask.all()
    g = ClassSelector.GROUND_AND_LOW_VEG.mask(codes)
    assert g.tolist() == [False, True, True, False, False, False]
    assert ClassSelector.parse("ground-only") is ClassSelector.GROUND_AND_LOW_VEG
    assert ClassSelector.parse("all") is ClassSelector.ALL


def test_extent_basics():
    e = Extent2D(0.0, 10.0, -5.0, 5.0)
    assert e.width == 10.0
    assert e.height == 10.0
    assert e.contains(0.0, -5.0)
    assert not e.contains(10.1, 0.0)
    inter = e.intersect(Extent2D(5.0, 20.0, 0.0, 50.0))
    assert inter == Extent2D(5.0, 10.0, 0.0, 5.0)
    assert e.intersect(Extent2D(11.0, 12.0, 0.0, 1.0)) is None
    with pytest.raises(DegenerateInputError):
        Extent2D(1.0, 0.0, 0.0, 1.0)


def test_cloud_immutability_and_access(tiny_cloud):
    with pytest.raises(ValueError):
        tiny_cloud.x[0] = 99.0
    p = tiny_cloud.point(1)
    assert p.x == 1.0 and p.intensity == 20
    assert len(tiny_cloud) == 3


def test_cloud_extent_and_empty(tiny_cloud):
    e = tiny_cloud.extent()
    assert (e.min_x, e.max_x, e.min_y, e.max_y) == (0.0, 2.5, -1.0, 4.0)
    empty = tiny_cloud.take(np.array([], dtype=np.int64))
    with pytest.raises(EmptyInputError):
        empty.extent()


def test_filter_classes(tiny_cloud):
    ground = tiny_cloud.filter_classes(ClassSelector.GROUND_AND_LOW_VEG)
    assert len(ground) == 2
    assert set(ground.class_codes.tolist()) == {2}
    assert tiny_cloud.filter_classes(ClassSelector.ALL) is tiny_cloud


def test_with_class_codes(tiny_cloud):
    relabeled = tiny_cloud.with_class_codes(np.array([5, 5, 5], dtype=np.uint8))
    assert relabeled.class_codes.tolist() == [5, 5, 5]
    assert tiny_cloud.class_codes.tolist() == [1, 2, 2]
    assert relabeled.crs_id == tiny_cloud.crs_id


# --- trajectory ---------------------------------------------------------


def straight_trajectory(n=11, length=100.0):
    t = np.linspace(0.0, 10.0, n)
    x = np.linspace(0.0, length, n)
    samples = np.column_stack([x, np.zeros(n), np.full(n, 2.0), t])
    return Trajectory(samples)


def test_trajectory_length():
    tr = straight_trajectory()
    assert tr.length == pytest.approx(100.0)


def test_point_at_interpolates():
    tr = straight_trajectory()
    p = tr.point_at(25.0)
    np.testing.assert_allclose(p, [25.0, 0.0, 2.0])
    np.testing.assert_allclose(tr.point_at(0.0), [0.0, 0.0, 2.0])
    np.testing.assert_allclose(tr.point_at(100.0), [100.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        tr.point_at(100.0001)
    with pytest.raises(ValueError):
        tr.point_at(-0.1)


def test_tangent_straight_line():
    tr = straight_trajectory()
    for s in (0.0, 13.7, 50.0, 100.0):
        np.testing.assert_allclose(tr.tangent_at(s), [1.0, 0.0, 0.0], atol=1e-12)


def test_tangent_circle_accuracy():
    """On a circle, interpolated central-difference tangents should match the
    analytic tangent to well under a microradian with dense sampling."""
    R = 50.0
    theta = np.linspace(0.0, math.pi / 2, 2001)
    samples = np.column_stack(
        [R * np.cos(theta), R * np.sin(theta), np.zeros_like(theta), theta]
    )
    tr = Trajectory(samples)
    for frac in (0.1, 0.25, 0.5, 0.9):
        s = frac * tr.length
        tan = tr.tangent_at(s)
        ang = s / R
        expect = np.array([-math.sin(ang), math.cos(ang), 0.0])
        err = math.acos(min(1.0, abs(float(np.dot(tan, expect)))))
        assert err < 1e-6


def test_trajectory_validation():
    with pytest.raises(DegenerateInputError):
        Trajectory(np.array([[0.0, 0.0, 0.0, 0.0]]))
    with pytest.raises(DegenerateInputError):
        Trajectory(np.array([[0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.5]]))
    with pytest.raises(DegenerateInputError):
        Trajectory(np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]))


def test_load_trajectory(tmp_path):
    f = tmp_path / "traj.csv"
    f.write_text("# x,y,z,t\n0,0,2,0\n10,0,2,1\n20,0,2,2\n")
    tr = load_trajectory(f)
    assert tr.length == pytest.approx(20.0)
    f2 = tmp_path / "traj.txt"
    f2.write_text("0 0 2 0\n10 0 2 1\n")
    assert load_trajectory(f2).length == pytest.approx(10.0)


def test_load_trajectory_errors(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("0,0,2,0\n10,oops,2,1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_trajectory(f)
    g = tmp_path / "short.csv"
    g.write_text("1,2,3\n")
    with pytest.raises(ParseError):
        load_trajectory(g)


@given(
    st.lists(
        st.floats(min_value=-1e5, max_value=1e5, allow_nan=False),
        min_size=1,
        max_size=40,
    )
)
def test_take_preserves_values(xs):
    n = len(xs)
    cloud = make_cloud(x=xs, y=np.zeros(n), z=np.zeros(n))
    idx = np.arange(n - 1, -1, -1)
    flipped = cloud.take(idx)
    assert flipped.x.tolist() == list(reversed([float(v) for v in xs]))
