import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paikit.polygons import canonical_ring, orient_ring, outer_rings, rasterize_rings, ring_area, trace_region

UNIT_SQUARE = {(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)}


def test_ring_area_triangle():
    assert ring_area([(0, 0), (4, 0), (0, 3)]) == pytest.approx(6.0)
    assert ring_area([(0, 0), (0, 3), (4, 0)]) == pytest.approx(-6.0)


def test_single_pixel_traces_unit_square():
    loops = trace_region(np.ones((1, 1), dtype=bool))
    assert len(loops) == 1
    assert set(loops[0]) == UNIT_SQUARE
    assert ring_area(loops[0]) == pytest.approx(1.0)


def test_rectangle_has_four_corners():
    mask = np.zeros((5, 7), dtype=bool)
    mask[1:3, 2:5] = True
    loops = trace_region(mask)
    assert len(loops) == 1
    assert set(loops[0]) == {(1.5, 0.5), (4.5, 0.5), (4.5, 2.5), (1.5, 2.5)}
    assert ring_area(loops[0]) == pytest.approx(6.0)


def test_l_shape_vertices():
    mask = np.array([[1, 0], [1, 1]], dtype=bool)
    loops = trace_region(mask)
    assert len(loops) == 1
    assert len(loops[0]) == 6
    assert ring_area(loops[0]) == pytest.approx(3.0)


def test_hole_traced_with_negative_area():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False
    loops = trace_region(mask)
    areas = sorted(ring_area(l) for l in loops)
    assert areas == pytest.approx([-1.0, 9.0])
    assert len(outer_rings(mask)) == 1


def test_diagonal_pixels_trace_as_separate_loops():
    mask = np.eye(2, dtype=bool)
    loops = trace_region(mask)
    assert len(loops) == 2
    assert all(ring_area(l) == pytest.approx(1.0) for l in loops)


def test_diagonal_pinch_within_one_component():
    # one 4-connected component that touches itself diagonally; the outer
    # boundary passes through the pinch corner twice but still encloses
    # exactly the component's pixels
    mask = np.array(
        [
            [1, 1, 1, 1],
            [1, 0, 0, 1],
            [1, 1, 0, 1],
            [0, 1, 1, 1],
        ],
        dtype=bool,
    )
    loops = trace_region(mask)
    total = sum(ring_area(l) for l in loops)
    assert total == pytest.approx(float(mask.sum()))
    assert np.array_equal(rasterize_rings(loops, *mask.shape), mask)


def test_orient_ring_flips_only_when_needed():
    ccw = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]
    assert orient_ring(ccw, outer=True) == ccw
    assert orient_ring(ccw, outer=False) == list(reversed(ccw))
    assert ring_area(orient_ring(list(reversed(ccw)), outer=True)) > 0


def test_canonical_ring_ignores_rotation_and_direction():
    ring = [(1.0, 0.0), (3.0, 0.0), (3.0, 2.0), (1.0, 2.0)]
    rotated = ring[2:] + ring[:2]
    reversed_ring = list(reversed(ring))
    assert canonical_ring(ring) == canonical_ring(rotated) == canonical_ring(reversed_ring)


def test_empty_mask():
    assert trace_region(np.zeros((4, 4), dtype=bool)) == []
    assert not rasterize_rings([], 4, 4).any()


def test_rasterize_half_open_boundary():
    # centers exactly on the ring: low-x and high-y sides count inside
    ring = [(1.0, 1.0), (4.0, 1.0), (4.0, 3.0), (1.0, 3.0)]
    mask = rasterize_rings([ring], 5, 6)
    expected = np.zeros((5, 6), dtype=bool)
    expected[2:4, 1:4] = True
    assert np.array_equal(mask, expected)


def test_rasterize_adjacent_polygons_tile():
    left = [(1.0, 1.0), (4.0, 1.0), (4.0, 3.0), (1.0, 3.0)]
    right = [(4.0, 1.0), (7.0, 1.0), (7.0, 3.0), (4.0, 3.0)]
    a = rasterize_rings([left], 5, 9)
    b = rasterize_rings([right], 5, 9)
    assert not (a & b).any()
    assert (a | b).sum() == 2 * 3 + 2 * 3


@st.composite
def random_masks(draw):
    h = draw(st.integers(min_value=1, max_value=9))
    w = draw(st.integers(min_value=1, max_value=9))
    bits = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    return np.array(bits, dtype=bool).reshape(h, w)


@settings(max_examples=120, deadline=None)
@given(random_masks())
def test_signed_areas_sum_to_pixel_count(mask):
    loops = trace_region(mask)
    assert sum(ring_area(l) for l in loops) == pytest.approx(float(mask.sum()))


@settings(max_examples=120, deadline=None)
@given(random_masks())
def test_rasterize_inverts_trace(mask):
    loops = trace_region(mask)
    assert np.array_equal(rasterize_rings(loops, *mask.shape), mask)
