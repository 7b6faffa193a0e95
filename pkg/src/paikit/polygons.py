"""Pixel-region polygons: boundary tracing, orientation, rasterization.

Convention: integer pixel coordinates address pixel centers, so the square
of pixel (c, r) spans corners (c - 0.5, r - 0.5) to (c + 0.5, r + 0.5) and
region boundaries traced from a bitmap have half-integer vertices. Ring
orientation is measured by the shoelace sum on raw (x, y) values; traced
outer rings come out positive and holes negative, and the shoelace area of
an outer ring equals the enclosed pixel count exactly.
"""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

Ring = List[Tuple[float, float]]

# Directed crack edges around one inside pixel whose 4-neighbor is outside:
# (neighbor dr, dc) -> (start corner offset, end corner offset), offsets in
# half-steps from the pixel center, scaled x2 to stay integral.
_EDGE_TABLE = {
    (-1, 0): ((-1, -1), (1, -1)),  # top side, +x
    (0, 1): ((1, -1), (1, 1)),  # right side, +y
    (1, 0): ((1, 1), (-1, 1)),  # bottom side, -x
    (0, -1): ((-1, 1), (-1, -1)),  # left side, -y
}

# Outgoing-direction preference at a shared corner: the turn toward the
# inside first (right turn, (dx, dy) -> (-dy, dx)), then straight, then
# away, so diagonally pinched lobes trace as separate tight loops.
_TURN_PREFERENCE = {
    (1, 0): ((0, 1), (1, 0), (0, -1)),
    (0, 1): ((-1, 0), (0, 1), (1, 0)),
    (-1, 0): ((0, -1), (-1, 0), (0, 1)),
    (0, -1): ((1, 0), (0, -1), (-1, 0)),
}


def ring_area(ring: Sequence[Tuple[float, float]]) -> float:
    """Signed shoelace area; positive for the traced outer orientation."""
    if len(ring) < 3:
        return 0.0
    arr = np.asarray(ring, dtype=np.float64)
    x = arr[:, 0]
    y = arr[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) / 2.0)


def orient_ring(ring: Ring, outer: bool) -> Ring:
    """Flip vertex order if needed: outer rings positive, holes negative."""
    area = ring_area(ring)
    if (outer and area < 0) or (not outer and area > 0):
        return list(reversed(ring))
    return list(ring)


def canonical_ring(ring: Sequence[Tuple[float, float]]) -> Tuple[Tuple[float, float], ...]:
    """Rotation-invariant form for comparisons: orientation normalized to
    positive, then rotated so the smallest vertex comes first."""
    r = orient_ring([tuple(map(float, v)) for v in ring], outer=True)
    if r[0] == r[-1] and len(r) > 1:
        r = r[:-1]
    pivot = min(range(len(r)), key=lambda i: r[i])
    return tuple(r[pivot:] + r[:pivot])


def trace_region(mask: np.ndarray) -> List[Ring]:
    """All boundary loops of a binary pixel region as closed rings with
    half-integer vertices (first vertex not repeated). Outer loops have
    positive shoelace area, holes negative. Collinear runs are merged."""
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return []

    H, W = mask.shape
    # edges keyed by doubled start corner -> list of (doubled end corner)
    edges: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for r, c in zip(rows.tolist(), cols.tolist()):
        for (dr, dc), (a, b) in _EDGE_TABLE.items():
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and mask[nr, nc]:
                continue
            start = (2 * c + a[0], 2 * r + a[1])
            end = (2 * c + b[0], 2 * r + b[1])
            edges.setdefault(start, []).append(end)

    def step(frm, to):
        return ((to[0] - frm[0]) // 2, (to[1] - frm[1]) // 2)

    loops: List[Ring] = []
    while edges:
        start = min(edges)
        corners = [start]
        nxt = edges[start].pop()
        if not edges[start]:
            del edges[start]
        direction = step(start, nxt)
        current = nxt
        while current != start:
            corners.append(current)
            outgoing = edges.get(current)
            if not outgoing:
                raise RuntimeError("boundary tracing lost its loop")  # unreachable on valid masks
            if len(outgoing) == 1:
                nxt = outgoing.pop()
            else:
                for want in _TURN_PREFERENCE[direction]:
                    match = [c for c in outgoing if step(current, c) == want]
                    if match:
                        nxt = match[0]
                        break
                outgoing.remove(nxt)
            if not edges[current]:
                del edges[current]
            direction = step(current, nxt)
            current = nxt
        # vertices only where the walk turns
        n = len(corners)
        loop = [
            corners[i]
            for i in range(n)
            if step(corners[i - 1], corners[i]) != step(corners[i], corners[(i + 1) % n])
        ]
        loops.append([(vx / 2.0, vy / 2.0) for vx, vy in loop])
    return loops


def outer_rings(mask: np.ndarray) -> List[Ring]:
    """Outer boundary of every loop with positive area (holes dropped)."""
    return [ring for ring in trace_region(mask) if ring_area(ring) > 0]


def rasterize_rings(rings: Sequence[Ring], height: int, width: int) -> np.ndarray:
    """Pixel mask of the region bounded by `rings` (even-odd rule): a pixel
    is set when its center lies inside. Exact inverse of trace_region for
    crack polygons, whose edges never pass through centers.

    Centers exactly on a boundary follow a half-open rule: the low-x and
    high-y sides of the region count as inside, so abutting polygons tile
    without double-claiming pixels. Scanline crossing parity over the edges
    of every ring at once."""
    mask = np.zeros((height, width), dtype=bool)
    segs = []
    for ring in rings:
        if len(ring) < 3:
            continue
        arr = np.asarray(ring, dtype=np.float64)
        nxt = np.roll(arr, -1, axis=0)
        keep = arr[:, 1] != nxt[:, 1]  # horizontal edges never cross a scanline
        if keep.any():
            segs.append(np.column_stack([arr[keep], nxt[keep]]))
    if not segs:
        return mask
    x1, y1, x2, y2 = np.vstack(segs).T
    row_lo = max(0, int(math.floor(min(y1.min(), y2.min()))))
    row_hi = min(height - 1, int(math.ceil(max(y1.max(), y2.max()))))
    for row in range(row_lo, row_hi + 1):
        crossing = (y1 >= row) != (y2 >= row)
        if not crossing.any():
            continue
        t = (row - y1[crossing]) / (y2[crossing] - y1[crossing])
        xs = np.sort(x1[crossing] + t * (x2[crossing] - x1[crossing]))
        for i in range(0, len(xs) - 1, 2):
            lo = max(int(math.ceil(xs[i])), 0)
            hi = min(int(math.ceil(xs[i + 1])), width)
            if hi > lo:
                mask[row, lo:hi] = True
    return mask
