"""Point cloud data model: immutable struct-of-arrays cloud, class filtering,
extents, and vehicle trajectories.

Coordinates stay in the unit of the source file (feet or meters, recorded in
``linear_unit``); nothing converts on load. Downstream operations convert
explicitly where their contracts require metric parameters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, EmptyInputError, ParseError

FEET_TO_METERS = 0.3048


class LinearUnit(enum.Enum):
    FEET = "feet"
    METERS = "meters"

    @property
    def meters_per_unit(self) -> float:
        return FEET_TO_METERS if self is LinearUnit.FEET else 1.0

    def to_meters(self, value):
        return value * self.meters_per_unit

    def from_meters(self, value_m):
        """Convert a metric quantity into this unit."""
        return value_m / self.meters_per_unit

    @classmethod
    def parse(cls, text: str) -> "LinearUnit":
        t = text.strip().lower()
        if t in ("ft", "feet", "foot", "us-feet", "usft"):
            return cls.FEET
        if t in ("m", "meter", "meters", "metre", "metres"):
            return cls.METERS
        raise ValueError(f"unknown linear unit {text!r}")


# LAS classification codes with first-class meaning in this pipeline.
CODE_UNCLASSIFIED = 1
CODE_GROUND = 2
CODE_LOW_VEG = 3
CODE_MEDIUM_VEG = 4
CODE_HIGH_VEG = 5


class ClassLabel:
    """Point class: the four codes the pipeline reasons about get named
    singletons, every other LAS code is preserved verbatim as Other(code)."""

    __slots__ = ("code",)
    _NAMES = {
        CODE_UNCLASSIFIED: "Unclassified",
        CODE_GROUND: "Ground",
        CODE_LOW_VEG: "LowVegetation",
        CODE_MEDIUM_VEG: "MediumVegetation",
        CODE_HIGH_VEG: "HighVegetation",
    }

    def __init__(self, code: int):
        if not 0 <= int(code) <= 255:
            raise ValueError(f"class code {code} outside [0, 255]")
        object.__setattr__(self, "code", int(code))

    def __setattr__(self, *a):  # immutable
        raise AttributeError("ClassLabel is immutable")

    @property
    def name(self) -> str:
        return self._NAMES.get(self.code, f"Other({self.code})")

    def __eq__(self, other):
        return isinstance(other, ClassLabel) and other.code == self.code

    def __hash__(self):
        return hash(self.code)

    def __repr__(self):
        return f"ClassLabel.{self.name}"

    @classmethod
    def from_code(cls, code: int) -> "ClassLabel":
        return _LABEL_SINGLETONS.get(int(code)) or cls(code)


ClassLabel.UNCLASSIFIED = ClassLabel(CODE_UNCLASSIFIED)
ClassLabel.GROUND = ClassLabel(CODE_GROUND)
ClassLabel.LOW_VEGETATION = ClassLabel(CODE_LOW_VEG)
ClassLabel.MEDIUM_VEGETATION = ClassLabel(CODE_MEDIUM_VEG)
ClassLabel.HIGH_VEGETATION = ClassLabel(CODE_HIGH_VEG)

_LABEL_SINGLETONS = {
    label.code: label
    for label in (
        ClassLabel.UNCLASSIFIED,
        ClassLabel.GROUND,
        ClassLabel.LOW_VEGETATION,
        ClassLabel.MEDIUM_VEGETATION,
        ClassLabel.HIGH_VEGETATION,
    )
}


class ClassSelector(enum.Enum):
    """Which classes take part in a render: everything, or the walkable
    surface (ground plus the low vegetation riding on it)."""

    ALL = "all"
    GROUND_AND_LOW_VEG = "ground-only"

    def mask(self, class_codes: np.ndarray) -> np.ndarray:
        if self is ClassSelector.ALL:
            return np.ones(len(class_codes), dtype=bool)
        return (class_codes == CODE_GROUND) | (class_codes == CODE_LOW_VEG)

    @classmethod
    def parse(cls, text: str) -> "ClassSelector":
        t = text.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == t:
                return member
        if t in ("ground", "ground-and-low-veg"):
            return cls.GROUND_AND_LOW_VEG
        raise ValueError(f"unknown class selector {text!r}")


@dataclass(frozen=True)
class Extent2D:
    min_x: float
    max_x: float
    min_y: float
    max_y: float

    def __post_init__(self):
        for v in (self.min_x, self.max_x, self.min_y, self.max_y):
            if not math.isfinite(v):
                raise DegenerateInputError("extent bounds must be finite")
        if not (self.min_x <= self.max_x and self.min_y <= self.max_y):
            raise DegenerateInputError(f"inverted extent {self}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    def intersect(self, other: "Extent2D") -> Optional["Extent2D"]:
        lo_x, hi_x = max(self.min_x, other.min_x), min(self.max_x, other.max_x)
        lo_y, hi_y = max(self.min_y, other.min_y), min(self.max_y, other.max_y)
        if lo_x > hi_x or lo_y > hi_y:
            return None
        return Extent2D(lo_x, hi_x, lo_y, hi_y)

    def contains(self, x: float, y: float) -> bool:
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y


@dataclass(frozen=True)
class LidarPoint:
    x: float
    y: float
    z: float
    intensity: int = 0
    color: Optional[Tuple[int, int, int]] = None
    class_label: ClassLabel = ClassLabel.UNCLASSIFIED

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("coordinates must be finite")
        if not 0 <= self.intensity <= 65535:
            raise ValueError(f"intensity {self.intensity} outside [0, 65535]")
        if self.color is not None and not all(0 <= c <= 255 for c in self.color):
            raise ValueError(f"color {self.color} outside [0, 255]")


class PointCloud:
    """Immutable struct-of-arrays point cloud.

    Per-point attributes live in parallel read-only numpy arrays so scans and
    filters stay vectorized; ``point(i)`` materializes single records for
    APIs that want one point at a time.
    """

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        z: np.ndarray,
        intensity: Optional[np.ndarray] = None,
        rgb: Optional[np.ndarray] = None,
        class_codes: Optional[np.ndarray] = None,
        crs_id: Optional[str] = None,
        linear_unit: LinearUnit = LinearUnit.METERS,
        source_path: str = "",
        las_scale: Optional[Tuple[float, float, float]] = None,
        las_offset: Optional[Tuple[float, float, float]] = None,
    ):
        n = len(x)
        self.x = _frozen(np.asarray(x, dtype=np.float64))
        self.y = _frozen(np.asarray(y, dtype=np.float64))
        self.z = _frozen(np.asarray(z, dtype=np.float64))
        if len(self.y) != n or len(self.z) != n:
            raise ValueError("coordinate arrays must share one length")
        if n and not (
            np.all(np.isfinite(self.x))
            and np.all(np.isfinite(self.y))
            and np.all(np.isfinite(self.z))
        ):
            raise ValueError("coordinates must be finite")
        self.intensity = _frozen(
            np.zeros(n, dtype=np.uint16)
            if intensity is None
            else np.asarray(intensity, dtype=np.uint16)
        )
        self.rgb = None if rgb is None else _frozen(np.asarray(rgb, dtype=np.uint8))
        if self.rgb is not None and self.rgb.shape != (n, 3):
            raise ValueError(f"rgb must be (N, 3), got {self.rgb.shape}")
        self.class_codes = _frozen(
            np.full(n, CODE_UNCLASSIFIED, dtype=np.uint8)
            if class_codes is None
            else np.asarray(class_codes, dtype=np.uint8)
        )
        if len(self.intensity) != n or len(self.class_codes) != n:
            raise ValueError("attribute arrays must share the point count")
        self.crs_id = crs_id
        self.linear_unit = linear_unit
        self.source_path = source_path
        # Quantization used by the file the cloud came from; reused on write
        # so load -> write round trips stay bit-exact.
        self.las_scale = las_scale
        self.las_offset = las_offset

    def __len__(self) -> int:
        return len(self.x)

    @property
    def has_color(self) -> bool:
        return self.rgb is not None

    def point(self, i: int) -> LidarPoint:
        color = tuple(int(c) for c in self.rgb[i]) if self.rgb is not None else None
        return LidarPoint(
            float(self.x[i]),
            float(self.y[i]),
            float(self.z[i]),
            int(self.intensity[i]),
            color,
            ClassLabel(int(self.class_codes[i])),
        )

    def extent(self) -> Extent2D:
        if len(self) == 0:
            raise EmptyInputError("extent of an empty cloud is undefined")
        return Extent2D(
            float(self.x.min()),
            float(self.x.max()),
            float(self.y.min()),
            float(self.y.max()),
        )

    def filter_classes(self, selector: ClassSelector) -> "PointCloud":
        """Sub-cloud with only the selected classes; ALL is the identity view."""
        if selector is ClassSelector.ALL:
            return self
        return self.take(np.flatnonzero(selector.mask(self.class_codes)))

    def take(self, indices: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.x[indices],
            self.y[indices],
            self.z[indices],
            self.intensity[indices],
            None if self.rgb is None else self.rgb[indices],
            self.class_codes[indices],
            crs_id=self.crs_id,
            linear_unit=self.linear_unit,
            source_path=self.source_path,
            las_scale=self.las_scale,
            las_offset=self.las_offset,
        )

    def with_class_codes(self, class_codes: np.ndarray) -> "PointCloud":
        """Same geometry and attributes, new labels."""
        if len(class_codes) != len(self):
            raise ValueError("class_codes length mismatch")
        return PointCloud(
            self.x,
            self.y,
            self.z,
            self.intensity,
            self.rgb,
            class_codes,
            crs_id=self.crs_id,
            linear_unit=self.linear_unit,
            source_path=self.source_path,
            las_scale=self.las_scale,
            las_offset=self.las_offset,
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy() if not arr.flags.owndata or arr.flags.writeable else arr
    arr.setflags(write=False)
    return arr


class Trajectory:
    """Vehicle path as (x, y, z, t) samples with an arc-length parameterization.

    The trajectory comes from the navigation system, not the point cloud, so
    it loads from its own delimited file (see :func:`load_trajectory`).
    """

    def __init__(self, samples: np.ndarray):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 4:
            raise ValueError("trajectory samples must be (N, 4): x, y, z, t")
        if len(samples) < 2:
            raise DegenerateInputError("trajectory needs at least two samples")
        t = samples[:, 3]
        if not np.all(np.diff(t) > 0):
            raise DegenerateInputError("trajectory timestamps must be strictly increasing")
        seg = np.diff(samples[:, :3], axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len <= 0):
            raise DegenerateInputError("consecutive trajectory samples must not coincide")
        self.samples = _frozen(samples)
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def _locate(self, s: float):
        """Segment index and in-segment fraction for arc length s; s must lie
        on the path (a one-ulp-scale overshoot from accumulation is allowed)."""
        tol = 1e-9 * max(1.0, self.length)
        if s < -tol or s > self.length + tol:
            raise ValueError(f"arc length {s} outside [0, {self.length}]")
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._cum) - 2)
        seg = self._cum[i + 1] - self._cum[i]
        w = 0.0 if seg == 0 else (s - self._cum[i]) / seg
        return i, w

    def point_at(self, s: float) -> np.ndarray:
        """Interpolated (x, y, z) at arc length s."""
        i, w = self._locate(float(s))
        p = self.samples[i, :3]
        q = self.samples[i + 1, :3]
        return p + w * (q - p)

    def tangent_at(self, s: float) -> np.ndarray:
        """Unit tangent at arc length s.

        Per-sample tangents use central differences (exact on circular arcs);
        the tangent between samples interpolates linearly and renormalizes.
        """
        i, w = self._locate(float(s))
        t0 = self._sample_tangent(i)
        t1 = self._sample_tangent(i + 1)
        t = (1.0 - w) * t0 + w * t1
        norm = np.linalg.norm(t)
        if norm == 0:
            return t0
        return t / norm

    def _sample_tangent(self, i: int) -> np.ndarray:
        pts = self.samples[:, :3]
        n = len(pts)
        if 0 < i < n - 1:
            d = pts[i + 1] - pts[i - 1]
        elif n >= 3:
            # Second-order one-sided difference at the ends, non-uniform
            # spacing handled via the chord lengths.
            if i == 0:
                p0, p1, p2 = pts[0], pts[1], pts[2]
                d1 = self._cum[1] - self._cum[0]
                d2 = self._cum[2] - self._cum[1]
            else:
                p0, p1, p2 = pts[-1], pts[-2], pts[-3]
                d1 = self._cum[-1] - self._cum[-2]
                d2 = self._cum[-2] - self._cum[-3]
            d = (
                -(2 * d1 + d2) / (d1 * (d1 + d2)) * p0
                + (d1 + d2) / (d1 * d2) * p1
                - d1 / (d2 * (d1 + d2)) * p2
            )
            if i != 0:
                d = -d
        else:
            d = pts[1] - pts[0]
        return d / np.linalg.norm(d)

    def within(self, extent: Extent2D) -> bool:
        return bool(
            np.all(self.samples[:, 0] >= extent.min_x)
            and np.all(self.samples[:, 0] <= extent.max_x)
            and np.all(self.samples[:, 1] >= extent.min_y)
            and np.all(self.samples[:, 1] <= extent.max_y)
        )


def load_trajectory(path) -> Trajectory:
    """Read a trajectory file: one `x,y,z,t` line per sample, `#` comments."""
    rows = []
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p for p in line.replace(",", " ").split() if p]
        if len(parts) != 4:
            raise ParseError(f"{path}: line {lineno}: expected 'x,y,z,t', got {raw!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    if len(rows) < 2:
        raise DegenerateInputError(f"{path}: trajectory needs at least two samples")
    return Trajectory(np.asarray(rows))
