"""BEV and street-view renderers plus pixel-to-point back-projection.

Both renderers fill a raster and a correspondence map from a classified
cloud. Point indices recorded in correspondence maps always refer to the
cloud as passed in (pre-filtering), so a map stays valid against the file
the cloud was loaded from.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .camera import CameraIntrinsics, CameraPose, project_points
from .errors import EmptyInputError, MissingAttributeError
from .pointcloud import ClassSelector, LidarPoint, PointCloud
from .raster import (
    CorrespondenceMap,
    PixelAttribute,
    RasterImage,
    ViewKind,
    avoid_nodata_rgb,
    geotransform_for_extent,
    gray_mapping,
    intensity_to_gray,
    representation_for,
)


def _selected_indices(cloud: PointCloud, selector: ClassSelector) -> np.ndarray:
    return np.flatnonzero(selector.mask(cloud.class_codes))


def _require_color(cloud: PointCloud, attribute: PixelAttribute):
    if attribute is PixelAttribute.COLOR and not cloud.has_color:
        raise MissingAttributeError("color rendering requested but cloud has no color")


def _fill_attribute(
    shape: Tuple[int, int],
    winner_rows: np.ndarray,
    winner_cols: np.ndarray,
    winner_idx: np.ndarray,
    cloud: PointCloud,
    attribute: PixelAttribute,
    selected_intensities: np.ndarray,
) -> np.ndarray:
    if attribute is PixelAttribute.INTENSITY:
        lo, hi = gray_mapping(selected_intensities)
        pixels = np.zeros(shape, dtype=np.uint8)
        pixels[winner_rows, winner_cols] = intensity_to_gray(
            cloud.intensity[winner_idx], lo, hi
        )
    else:
        pixels = np.zeros(shape + (3,), dtype=np.uint8)
        pixels[winner_rows, winner_cols] = avoid_nodata_rgb(cloud.rgb[winner_idx])
    return pixels


def render_bev(
    cloud: PointCloud,
    selector: ClassSelector,
    attribute: PixelAttribute,
    cell_size: float,
) -> Tuple[RasterImage, CorrespondenceMap]:
    """Ortho-project the selected classes onto a horizontal grid.

    Cell winner is the highest-z selected point (ties to the lower index);
    raster extent comes from the full cloud so every representation of one
    scene shares a single grid. Correspondence depth holds the winner's z.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot render an empty cloud")
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    _require_color(cloud, attribute)

    geo, cols, rows = geotransform_for_extent(cloud.extent(), cell_size)
    sel = _selected_indices(cloud, selector)

    cmap = CorrespondenceMap(cols, rows)
    rep = representation_for(ViewKind.BEV, selector, attribute)

    if sel.size:
        x = cloud.x[sel]
        y = cloud.y[sel]
        z = cloud.z[sel]
        c = np.clip(((x - geo.origin_x) / cell_size).astype(np.int64), 0, cols - 1)
        r = np.clip(((geo.origin_y - y) / cell_size).astype(np.int64), 0, rows - 1)
        flat = r * cols + c
        # winner per cell: max z, then lower source index
        order = np.lexsort((sel, -z, flat))
        flat_sorted = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        win = order[first]

        win_idx = sel[win]
        win_rows = r[win]
        win_cols = c[win]
        pixels = _fill_attribute(
            (rows, cols), win_rows, win_cols, win_idx, cloud, attribute, cloud.intensity[sel]
        )
        cmap.point_index[win_rows, win_cols] = win_idx.astype(np.uint64)
        cmap.depth[win_rows, win_cols] = z[win].astype(np.float32)
    else:
        pixels = np.zeros(
            (rows, cols) if attribute is PixelAttribute.INTENSITY else (rows, cols, 3),
            dtype=np.uint8,
        )

    image = RasterImage(
        pixels,
        rep.rep_id,
        geo=geo,
        crs_id=cloud.crs_id,
        linear_unit=cloud.linear_unit,
    )
    return image, cmap


def splat_bounds(center: int, size: int) -> Tuple[int, int]:
    """Inclusive pixel range of a size-px splat centered on `center`; even
    sizes extend one pixel further on the high side."""
    lo = center - (size - 1) // 2
    return lo, lo + size - 1


def render_street_view(
    cloud: PointCloud,
    selector: ClassSelector,
    attribute: PixelAttribute,
    intr: CameraIntrinsics,
    pose: CameraPose,
    point_size_px: int = 8,
) -> Tuple[RasterImage, CorrespondenceMap]:
    """Perspective render with square point splats and a per-pixel z-buffer.

    Depth ties break toward the lower point index. The correspondence map
    records a point only at the pixel containing its projection center, and
    only when that point also won the depth contest there; splat pixels away
    from the center carry attribute and depth but no back-link, which keeps
    every recorded link within half a pixel of its re-projection.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot render an empty cloud")
    if point_size_px < 1:
        raise ValueError("point_size_px must be >= 1")
    _require_color(cloud, attribute)

    W, H = intr.width, intr.height
    sel = _selected_indices(cloud, selector)
    sel_intensity = cloud.intensity[sel]  # gray range spans the whole
    rep = representation_for(ViewKind.STREET_VIEW, selector, attribute)
    cmap = CorrespondenceMap(W, H)  # selected cloud, not just this frustum

    xyz = np.column_stack([cloud.x[sel], cloud.y[sel], cloud.z[sel]])
    u, v, s = project_points(xyz, intr, pose)
    lo_off = -((point_size_px - 1) // 2)
    hi_off = point_size_px - 1 + lo_off
    visible = (
        (s > 0)
        & (u + hi_off >= 0)
        & (u + lo_off < W)
        & (v + hi_off >= 0)
        & (v + lo_off < H)
    )
    sel = sel[visible]

    if sel.size:
        u = u[visible]
        v = v[visible]
        s = s[visible]
        pc = np.floor(u).astype(np.int64)
        pr = np.floor(v).astype(np.int64)

        offsets = np.arange(lo_off, hi_off + 1)
        dc, dr = np.meshgrid(offsets, offsets)
        cols_all = (pc[:, None] + dc.ravel()[None, :]).ravel()
        rows_all = (pr[:, None] + dr.ravel()[None, :]).ravel()
        k2 = offsets.size * offsets.size
        depth_all = np.repeat(s, k2)
        idx_all = np.repeat(sel, k2)

        inb = (cols_all >= 0) & (cols_all < W) & (rows_all >= 0) & (rows_all < H)
        cols_all, rows_all = cols_all[inb], rows_all[inb]
        depth_all, idx_all = depth_all[inb], idx_all[inb]

        flat = rows_all * W + cols_all
        order = np.lexsort((idx_all, depth_all, flat))
        flat_sorted = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        win = order[first]

        win_rows = rows_all[win]
        win_cols = cols_all[win]
        win_idx = idx_all[win]
        win_depth = depth_all[win]

        pixels = _fill_attribute(
            (H, W), win_rows, win_cols, win_idx, cloud, attribute, sel_intensity
        )

        # z-buffer winners, kept only to resolve the correspondence contest
        winner_at = np.full((H, W), -1, dtype=np.int64)
        winner_at[win_rows, win_cols] = win_idx

        center_in = (pc >= 0) & (pc < W) & (pr >= 0) & (pr < H)
        own = center_in & (winner_at[pr.clip(0, H - 1), pc.clip(0, W - 1)] == sel)
        cmap.point_index[pr[own], pc[own]] = sel[own].astype(np.uint64)
        cmap.depth[pr[own], pc[own]] = s[own].astype(np.float32)
    else:
        pixels = np.zeros(
            (H, W) if attribute is PixelAttribute.INTENSITY else (H, W, 3), dtype=np.uint8
        )

    image = RasterImage(pixels, rep.rep_id)
    return image, cmap


def back_project(
    pixel: Tuple[int, int], cmap: CorrespondenceMap, cloud: PointCloud
) -> Optional[LidarPoint]:
    """The source point recorded at render time for (col, row), or None on a
    no-data pixel. Raises a bounds error outside the image."""
    entry = cmap.at(pixel[0], pixel[1])
    if entry is None:
        return None
    idx, _ = entry
    return cloud.point(idx)
