"""Offline segmentation: tolerance flood fill and crack-boundary polygons.

The region grower answers point prompts on 8-bit gray images: a positive
prompt claims the 4-connected patch of pixels within a gray tolerance of
the prompted pixel, negative prompts carve their patches out, and each
surviving connected component returns one polygon with score 1.0.

Polygon convention: integer pixel coordinates are pixel centers, so
boundaries run along half-integer cell edges. Loops are walked on the
directed crack edges between inside and outside pixels, starting from the
lexicographically smallest corner, preferring the turn toward the region
interior at junction corners (diagonal pinches therefore trace as separate
tight loops), dropping collinear vertices, and leaving the closing vertex
implied. Outer loops carry positive shoelace area; holes are discarded.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

NODATA_GRAY = 0
TOLERANCE = 10
SCORE = 1.0

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# side of an inside pixel exposed toward (dr, dc): directed crack edge from
# corner a to corner b, offsets doubled to stay integral
_SIDES = (
    ((-1, 0), (-1, -1), (1, -1)),
    ((0, 1), (1, -1), (1, 1)),
    ((1, 0), (1, 1), (-1, 1)),
    ((0, -1), (-1, 1), (-1, -1)),
)

# at a junction corner: try the turn into the region first, then straight,
# then the turn away
_TURNS = {
    (1, 0): ((0, 1), (1, 0), (0, -1)),
    (0, 1): ((-1, 0), (0, 1), (1, 0)),
    (-1, 0): ((0, -1), (-1, 0), (0, 1)),
    (0, -1): ((1, 0), (0, -1), (-1, 0)),
}

Polygon = List[List[float]]


def shoelace(ring: Sequence[Sequence[float]]) -> float:
    if len(ring) < 3:
        return 0.0
    arr = np.asarray(ring, dtype=np.float64)
    x, y = arr[:, 0], arr[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) / 2.0)


def boundary_loops(mask: np.ndarray) -> List[Polygon]:
    """Every boundary loop of a binary region, half-integer vertices."""
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return []
    H, W = mask.shape

    edges = {}
    for r, c in zip(rows.tolist(), cols.tolist()):
        for (dr, dc), a, b in _SIDES:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and mask[nr, nc]:
                continue
            start = (2 * c + a[0], 2 * r + a[1])
            edges.setdefault(start, []).append((2 * c + b[0], 2 * r + b[1]))

    def heading(frm, to):
        return ((to[0] - frm[0]) // 2, (to[1] - frm[1]) // 2)

    loops = []
    while edges:
        start = min(edges)
        nxt = edges[start].pop()
        if not edges[start]:
            del edges[start]
        walk = [start]
        direction = heading(start, nxt)
        here = nxt
        while here != start:
            walk.append(here)
            outgoing = edges[here]
            if len(outgoing) == 1:
                nxt = outgoing.pop()
            else:
                nxt = None
                for turn in _TURNS[direction]:
                    for candidate in outgoing:
                        if heading(here, candidate) == turn:
                            nxt = candidate
                            break
                    if nxt is not None:
                        break
                outgoing.remove(nxt)
            if not outgoing:
                del edges[here]
            direction = heading(here, nxt)
            here = nxt
        n = len(walk)
        loop = [
            walk[i]
            for i in range(n)
            if heading(walk[i - 1], walk[i]) != heading(walk[i], walk[(i + 1) % n])
        ]
        loops.append([[vx / 2.0, vy / 2.0] for vx, vy in loop])
    return loops


def _patch_at(gray: np.ndarray, col: int, row: int, tolerance: int) -> Optional[np.ndarray]:
    seed = int(gray[row, col])
    if seed == NODATA_GRAY:
        return None
    values = gray.astype(np.int16)
    candidate = (values != NODATA_GRAY) & (np.abs(values - seed) <= tolerance)
    labels, _ = ndimage.label(candidate, structure=_CROSS)
    return labels == labels[row, col]


def segment_gray(
    gray: np.ndarray,
    prompts: Sequence[Tuple[float, float, bool]],
    tolerance: int = TOLERANCE,
) -> List[dict]:
    """Masks for (x, y, positive) prompts on an 8-bit gray array.

    Mask order follows prompt order, then row-major component order within
    a prompt. Pure function of its inputs."""
    gray = np.asarray(gray, dtype=np.uint8)

    carved = np.zeros(gray.shape, dtype=bool)
    for x, y, positive in prompts:
        if not positive:
            patch = _patch_at(gray, int(round(x)), int(round(y)), tolerance)
            if patch is not None:
                carved |= patch

    masks = []
    for x, y, positive in prompts:
        if not positive:
            continue
        patch = _patch_at(gray, int(round(x)), int(round(y)), tolerance)
        if patch is None:
            continue
        patch &= ~carved
        labels, count = ndimage.label(patch, structure=_CROSS)
        for lab in range(1, count + 1):
            outer = [p for p in boundary_loops(labels == lab) if shoelace(p) > 0]
            assert len(outer) == 1  # a 4-connected component has one outer loop
            masks.append({"polygon": outer[0], "score": SCORE})
    return masks
