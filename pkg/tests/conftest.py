import numpy as np
import pytest

from paikit.pointcloud import LinearUnit, PointCloud


def make_cloud(
    x, y, z,
    intensity=None,
    rgb=None,
    class_codes=None,
    crs_id="EPSG:6539",
    unit=LinearUnit.FEET,
):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if intensity is None:
        intensity = np.full(n, 100, dtype=np.uint16)
    if class_codes is None:
        class_codes = np.ones(n, dtype=np.uint8)
    return PointCloud(
        x,
        np.asarray(y, dtype=np.float64),
        np.asarray(z, dtype=np.float64),
        np.asarray(intensity, dtype=np.uint16),
        None if rgb is None else np.asarray(rgb, dtype=np.uint8),
        np.asarray(class_codes, dtype=np.uint8),
        crs_id=crs_id,
        linear_unit=unit,
    )


@pytest.fixture
def tiny_cloud():
    return make_cloud(
        x=[0.0, 1.0, 2.5],
        y=[0.0, -1.0, 4.0],
        z=[10.0, 10.5, 11.25],
        intensity=[10, 20, 30],
        class_codes=[1, 2, 2],
    )
