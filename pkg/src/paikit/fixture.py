"""Deterministic synthetic street scene for exercising the full pipeline.

One block of a survey-foot city: a road flanked by raised sidewalks and
grass verges, a striped crosswalk, street trees, and sign posts, plus the
vehicle trajectory down the road center and seed prompts for the
segmentation stage. Everything is generated from one seed so repeated runs
produce byte-identical files.
"""

from typing import Dict, List, Tuple

import numpy as np

from .pointcloud import LinearUnit, PointCloud, Trajectory

CITY_CRS = "EPSG:6539"

# world offsets kept survey-plausible so coordinate snapping sees realistic
# magnitudes, all in US survey feet
ORIGIN_X = 1005000.0
ORIGIN_Y = 230000.0

BLOCK_LENGTH = 400.0
ROAD_Y = (33.0, 67.0)
WALK_SOUTH = (25.0, 33.0)
WALK_NORTH = (67.0, 75.0)
GRASS_SOUTH = (20.0, 25.0)
GRASS_NORTH = (75.0, 80.0)
CURB_HEIGHT = 0.5

# per-material reflectance on a 0..255 scale; pairs must differ by far more
# than the stub flood-fill tolerance after gray mapping
MATERIALS = {
    "road": (90, (60, 60, 65)),
    "walk": (200, (205, 205, 200)),
    "grass": (60, (70, 140, 60)),
    "paint": (250, (235, 235, 235)),
    "trunk": (110, (110, 75, 45)),
    "canopy": (80, (60, 110, 50)),
    "post": (140, (120, 120, 125)),
}


def _patch(rng, x0, x1, y0, y1, z, spacing, material):
    """Jittered grid of points over a rectangle at constant height."""
    xs = np.arange(x0, x1, spacing)
    ys = np.arange(y0, y1, spacing)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel() + rng.uniform(0.0, spacing * 0.6, gx.size)
    gy = gy.ravel() + rng.uniform(0.0, spacing * 0.6, gy.size)
    gz = np.full(gx.shape, z) + rng.uniform(-0.01, 0.01, gx.size)
    return _bundle(rng, gx, gy, gz, material)


def _bundle(rng, gx, gy, gz, material):
    value, rgb = MATERIALS[material]
    n = len(gx)
    intensity = (value + rng.integers(-3, 4, n)).clip(1, 255).astype(np.uint16) * 257
    colors = np.tile(np.asarray(rgb, dtype=np.uint16) * 257, (n, 1))
    return gx, gy, gz, intensity, colors


def _trunk(rng, cx, cy, height=10.0, radius=0.6, n=220):
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    gz = rng.uniform(0.0, height, n)
    return _bundle(rng, cx + r * np.cos(angle), cy + r * np.sin(angle), gz, "trunk")


def _canopy(rng, cx, cy, cz=13.0, radius=5.0, n=500):
    pts = rng.normal(0.0, radius / 2.2, (n, 3))
    keep = np.linalg.norm(pts, axis=1) <= radius
    pts = pts[keep]
    return _bundle(rng, cx + pts[:, 0], cy + pts[:, 1], cz + pts[:, 2], "canopy")


def _post(rng, cx, cy, height=7.0, radius=0.15, n=80):
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    gz = rng.uniform(0.0, height, n)
    return _bundle(rng, cx + radius * np.cos(angle), cy + radius * np.sin(angle), gz, "post")


def crosswalk_stripes() -> List[Tuple[float, float]]:
    """Stripe x-intervals of the continental crosswalk at mid-block."""
    return [(195.0 + 3.0 * k, 196.5 + 3.0 * k) for k in range(4)]


def synth_city(seed: int = 7) -> Tuple[PointCloud, Trajectory, List[Dict]]:
    """Build the scene; returns (cloud, trajectory, prompt records).

    Prompts are world-coordinate seed points on the BEV ground render,
    two on the sidewalks and one on a crosswalk stripe.
    """
    rng = np.random.default_rng(seed)
    parts = [
        _patch(rng, 0.0, BLOCK_LENGTH, ROAD_Y[0], ROAD_Y[1], 0.0, 0.3, "road"),
        _patch(rng, 0.0, BLOCK_LENGTH, WALK_SOUTH[0], WALK_SOUTH[1], CURB_HEIGHT, 0.2, "walk"),
        _patch(rng, 0.0, BLOCK_LENGTH, WALK_NORTH[0], WALK_NORTH[1], CURB_HEIGHT, 0.2, "walk"),
        _patch(rng, 0.0, BLOCK_LENGTH, GRASS_SOUTH[0], GRASS_SOUTH[1], 0.3, 0.4, "grass"),
        _patch(rng, 0.0, BLOCK_LENGTH, GRASS_NORTH[0], GRASS_NORTH[1], 0.3, 0.4, "grass"),
    ]
    for x0, x1 in crosswalk_stripes():
        parts.append(_patch(rng, x0, x1, ROAD_Y[0], ROAD_Y[1], 0.02, 0.15, "paint"))
    for cx in (50.0, 150.0, 250.0, 350.0):
        for cy in (22.5, 77.5):
            parts.append(_trunk(rng, cx, cy))
            parts.append(_canopy(rng, cx, cy))
    for cx in (100.0, 300.0):
        for cy in (25.7, 74.3):
            parts.append(_post(rng, cx, cy))

    gx = np.concatenate([p[0] for p in parts]) + ORIGIN_X
    gy = np.concatenate([p[1] for p in parts]) + ORIGIN_Y
    gz = np.concatenate([p[2] for p in parts])
    intensity = np.concatenate([p[3] for p in parts])
    rgb = np.vstack([p[4] for p in parts])

    cloud = PointCloud(
        x=gx,
        y=gy,
        z=gz,
        intensity=intensity,
        rgb=rgb,
        crs_id=CITY_CRS,
        linear_unit=LinearUnit.FEET,
    )

    # drive down the road center at a steady 10 ft/s
    xs = np.arange(0.0, BLOCK_LENGTH + 1.0, 2.0)
    samples = np.column_stack(
        [xs + ORIGIN_X, np.full_like(xs, ORIGIN_Y + 50.0), np.zeros_like(xs), xs / 10.0]
    )
    trajectory = Trajectory(samples)

    stripe0 = crosswalk_stripes()[0]
    prompts = [
        {"image": "bev/R1.tif", "x": ORIGIN_X + 150.0, "y": ORIGIN_Y + 29.0, "class": "sidewalk"},
        {"image": "bev/R1.tif", "x": ORIGIN_X + 150.0, "y": ORIGIN_Y + 71.0, "class": "sidewalk"},
        {
            "image": "bev/R1.tif",
            "x": ORIGIN_X + (stripe0[0] + stripe0[1]) / 2.0,
            "y": ORIGIN_Y + 50.0,
            "class": "crosswalk",
        },
    ]
    return cloud, trajectory, prompts
