"""Promptable-segmentation gateway: the feature-class vocabulary, mask
annotations, COCO import/export, a remote segmentation client, an offline
flood-fill backend, and the per-representation extraction assessment.

Mask coordinates follow the center-origin pixel convention described in
polygons.py: integer coordinates are pixel centers, traced region boundaries
have half-integer vertices.
"""

from __future__ import annotations

import base64
import enum
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import requests
from PIL import Image
from scipy import ndimage

from .errors import (
    BoundsError,
    FormatError,
    ParseError,
    ReferentialIntegrityError,
    ServiceError,
    TransportError,
    UnsupportedFormatError,
)
from .polygons import orient_ring, ring_area, trace_region
from .raster import NODATA_GRAY, REPRESENTATIONS, RasterImage

STUB_TOLERANCE = 10
WIRE_SEGMENT_PATH = "/segment"
WIRE_HEALTH_PATH = "/healthz"

# 4-connected flood fill: diagonal contact does not join regions
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class FeatureClass(enum.Enum):
    """Closed inventory vocabulary. Planimetric classes are flat surface
    features measured in plan view; volumetric classes are upright street
    furniture and vegetation. Each class owns a point classification code
    in the 64..86 user-defined range."""

    SIDEWALK = ("Sidewalk", True, 64)
    CROSSWALK = ("Crosswalk", True, 65)
    CURB_RAMP = ("Curb Ramp", True, 66)
    LANDSCAPE = ("Landscape", True, 67)
    STAIR = ("Stair", True, 68)
    DETECTABLE_WARNING_SURFACE = ("Detectable Warning Surface", True, 69)
    STORM_WATER_INLET = ("Storm Water Inlet", True, 70)
    MANHOLE_COVER = ("Manhole Cover", True, 71)
    TRAFFIC_BARRIER = ("Traffic Barrier", True, 72)
    RETAINING_WALL = ("Retaining Wall", True, 73)
    BENCH = ("Bench", False, 74)
    BOLLARD = ("Bollard", False, 75)
    FIRE_HYDRANT = ("Fire Hydrant", False, 76)
    MAILBOX = ("Mailbox", False, 77)
    MEMORIAL = ("Memorial", False, 78)
    PHONE_BOOTH = ("Phone Booth", False, 79)
    PARKING_METER = ("Parking Meter", False, 80)
    POST = ("Post", False, 81)
    PUBLIC_SCULPTURE = ("Public Sculpture", False, 82)
    PUBLIC_VENDING_MACHINE = ("Public Vending Machine", False, 83)
    TREE_TRUNK = ("Tree Trunk", False, 84)
    TREE_CANOPY = ("Tree Canopy", False, 85)
    WASTE_CONTAINER = ("Waste Container", False, 86)

    def __init__(self, display: str, planimetric: bool, las_code: int):
        self.display = display
        self.planimetric = planimetric
        self.las_code = las_code

    @property
    def canonical_name(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> Optional["FeatureClass"]:
        """Match a label case-insensitively, treating spaces, underscores,
        and hyphens as interchangeable. None when nothing matches."""
        key = _normalize_label(name)
        return _PARSE_TABLE.get(key)

    @classmethod
    def from_las_code(cls, code: int) -> "FeatureClass":
        try:
            return _LAS_CODE_TABLE[code]
        except KeyError:
            raise ValueError(f"no feature class for classification code {code}") from None


def _normalize_label(name: str) -> str:
    return " ".join(name.replace("_", " ").replace("-", " ").lower().split())


_PARSE_TABLE: Dict[str, FeatureClass] = {}
for _fc in FeatureClass:
    _PARSE_TABLE[_normalize_label(_fc.display)] = _fc
    _PARSE_TABLE[_normalize_label(_fc.name)] = _fc
_LAS_CODE_TABLE = {fc.las_code: fc for fc in FeatureClass}


def planimetric_classes() -> Tuple[FeatureClass, ...]:
    return tuple(fc for fc in FeatureClass if fc.planimetric)


def volumetric_classes() -> Tuple[FeatureClass, ...]:
    return tuple(fc for fc in FeatureClass if not fc.planimetric)


class ExtractionLevel(enum.Enum):
    """How completely a feature class can be extracted from one image
    representation: not extractable, partially, completely, or not
    applicable to that representation at all."""

    NOT_EXTRACTABLE = "N"
    PARTIAL = "P"
    COMPLETE = "C"
    NOT_APPLICABLE = "N/A"

    @classmethod
    def parse(cls, text: str) -> "ExtractionLevel":
        t = text.strip().upper()
        for member in cls:
            if member.value == t:
                return member
        raise ValueError(f"unknown extraction level {text!r}")


@dataclass(frozen=True)
class ImageRef:
    """Which rendered image an annotation lives on."""

    representation_id: str
    image_id: str

    def __post_init__(self):
        if self.representation_id not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation_id!r}")


@dataclass(frozen=True)
class PromptPoint:
    """Click prompt in pixel coordinates; positive adds, negative carves."""

    u: float
    v: float
    positive: bool = True


Ring = Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class MaskAnnotation:
    """One polygonal mask: an outer ring plus optional hole rings.

    Rings are stored open (the closing vertex is implied) and orientation
    is normalized on construction: outer ring to positive shoelace area,
    holes to negative. The outer ring must enclose positive area; callers
    are trusted not to hand in self-intersecting outer rings."""

    rings: Tuple[Ring, ...]
    feature_class: FeatureClass
    image_ref: ImageRef
    score: Optional[float] = None

    def __post_init__(self):
        if not self.rings:
            raise ValueError("annotation needs at least an outer ring")
        normalized = []
        for i, ring in enumerate(self.rings):
            pts = [(float(x), float(y)) for x, y in ring]
            if len(pts) > 1 and pts[0] == pts[-1]:
                pts = pts[:-1]
            if len(pts) < 3:
                raise ValueError("rings need at least 3 distinct vertices")
            normalized.append(tuple(orient_ring(pts, outer=(i == 0))))
        object.__setattr__(self, "rings", tuple(normalized))
        if ring_area(self.rings[0]) <= 0:
            raise ValueError("outer ring must enclose positive area")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")

    @property
    def outer(self) -> Ring:
        return self.rings[0]

    @property
    def holes(self) -> Tuple[Ring, ...]:
        return self.rings[1:]

    @property
    def area(self) -> float:
        """Enclosed area: outer minus holes."""
        return ring_area(self.rings[0]) + sum(ring_area(r) for r in self.rings[1:])

    def bbox(self) -> Tuple[float, float, float, float]:
        """(min_x, min_y, width, height) over all ring vertices."""
        pts = np.asarray([p for ring in self.rings for p in ring], dtype=np.float64)
        mn = pts.min(axis=0)
        mx = pts.max(axis=0)
        return (float(mn[0]), float(mn[1]), float(mx[0] - mn[0]), float(mx[1] - mn[1]))


@dataclass(frozen=True)
class RegisteredImage:
    """Registry row tying an exported file name to its representation slot."""

    file_name: str
    width: int
    height: int
    representation_id: str

    @property
    def ref(self) -> ImageRef:
        return ImageRef(self.representation_id, self.file_name)


ImageRegistry = Mapping[str, RegisteredImage]


def build_registry(entries: Sequence[RegisteredImage]) -> Dict[str, RegisteredImage]:
    reg: Dict[str, RegisteredImage] = {}
    for entry in entries:
        if entry.file_name in reg:
            raise ValueError(f"duplicate image file name {entry.file_name!r}")
        reg[entry.file_name] = entry
    return reg


@dataclass(frozen=True)
class RejectedAnnotation:
    annotation_id: object
    category_name: str
    reason: str


@dataclass
class CocoImportResult:
    annotations: List[MaskAnnotation] = field(default_factory=list)
    rejected: List[RejectedAnnotation] = field(default_factory=list)


def import_coco(path, image_registry: ImageRegistry) -> CocoImportResult:
    """Read a COCO 1.0 instance file into mask annotations.

    Category names are matched case-insensitively with separator
    normalization; annotations whose category is outside the vocabulary,
    or whose geometry cannot form a valid mask, land in the rejects list
    with a reason instead of being dropped silently. Bounding boxes are
    recomputed from the polygons, never trusted. Malformed JSON raises
    ParseError with the location; an annotation pointing at an image id
    that does not exist, or an image absent from the registry, raises
    ReferentialIntegrityError."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    for section in ("images", "annotations", "categories"):
        if not isinstance(doc.get(section), list):
            raise FormatError(f"{path}: missing or invalid {section!r} section")

    images = {}
    for img in doc["images"]:
        images[img["id"]] = img
    categories = {cat["id"]: str(cat["name"]) for cat in doc["categories"]}

    result = CocoImportResult()
    for ann in doc["annotations"]:
        ann_id = ann.get("id")
        cat_name = categories.get(ann.get("category_id"), f"<category {ann.get('category_id')}>")
        image_id = ann.get("image_id")
        if image_id not in images:
            raise ReferentialIntegrityError(
                f"{path}: annotation {ann_id} references missing image {image_id}"
            )
        file_name = str(images[image_id].get("file_name", ""))
        if file_name not in image_registry:
            raise ReferentialIntegrityError(
                f"{path}: annotation {ann_id} references unregistered image {file_name!r}"
            )
        fc = FeatureClass.parse(cat_name)
        if fc is None:
            result.rejected.append(RejectedAnnotation(ann_id, cat_name, "unknown category"))
            continue
        seg = ann.get("segmentation")
        if not isinstance(seg, list) or not seg or not all(isinstance(r, list) for r in seg):
            result.rejected.append(
                RejectedAnnotation(ann_id, cat_name, "unsupported segmentation encoding")
            )
            continue
        try:
            rings = tuple(_ring_from_flat(r) for r in seg)
            annotation = MaskAnnotation(
                rings=rings,
                feature_class=fc,
                image_ref=image_registry[file_name].ref,
                score=ann.get("score"),
            )
        except ValueError as exc:
            result.rejected.append(RejectedAnnotation(ann_id, cat_name, str(exc)))
            continue
        result.annotations.append(annotation)
    return result


def _ring_from_flat(flat: Sequence[float]) -> Ring:
    if len(flat) % 2 != 0:
        raise ValueError("segmentation ring has an odd coordinate count")
    return tuple((float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2))


def export_coco(annotations: Sequence[MaskAnnotation], image_registry: ImageRegistry, path) -> None:
    """Write annotations as a COCO 1.0 instance file.

    Category ids are assigned by sorted display name so they are stable
    across runs; image ids by sorted file name. Exporting then importing
    reproduces the same annotations."""
    path = Path(path)
    used_images = sorted({ann.image_ref.image_id for ann in annotations})
    for image_id in used_images:
        if image_id not in image_registry:
            raise ReferentialIntegrityError(f"annotation references unregistered image {image_id!r}")
    used_classes = sorted({ann.feature_class for ann in annotations}, key=lambda fc: fc.display)
    cat_ids = {fc: i + 1 for i, fc in enumerate(used_classes)}
    img_ids = {name: i + 1 for i, name in enumerate(used_images)}

    doc = {
        "images": [
            {
                "id": img_ids[name],
                "file_name": name,
                "width": image_registry[name].width,
                "height": image_registry[name].height,
            }
            for name in used_images
        ],
        "annotations": [],
        "categories": [{"id": cat_ids[fc], "name": fc.display} for fc in used_classes],
    }
    for i, ann in enumerate(annotations):
        x, y, w, h = ann.bbox()
        entry = {
            "id": i + 1,
            "image_id": img_ids[ann.image_ref.image_id],
            "category_id": cat_ids[ann.feature_class],
            "segmentation": [[c for p in ring for c in p] for ring in ann.rings],
            "bbox": [x, y, w, h],
            "area": ann.area,
            "iscrowd": 0,
        }
        if ann.score is not None:
            entry["score"] = ann.score
        doc["annotations"].append(entry)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


class PostTransport:
    """Thin JSON POST wrapper so tests can swap in a fake service."""

    def post(self, url: str, payload: dict, timeout: float) -> Tuple[int, bytes]:
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        return resp.status_code, resp.content


def png_bytes(image: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image.pixels).save(buf, format="PNG")
    return buf.getvalue()


def _check_prompts(image: RasterImage, prompts: Sequence[PromptPoint]) -> None:
    for p in prompts:
        col = int(round(p.u))
        row = int(round(p.v))
        if not (0 <= col < image.width and 0 <= row < image.height):
            raise BoundsError(
                f"prompt ({p.u}, {p.v}) outside image of size {image.width}x{image.height}"
            )


def segment_remote(
    image: RasterImage,
    prompts: Sequence[PromptPoint],
    class_hint: FeatureClass,
    endpoint: str,
    image_id: str = "",
    transport=None,
    retries: int = 2,
    backoff: float = 0.5,
    timeout: float = 30.0,
    sleep=time.sleep,
) -> List[MaskAnnotation]:
    """Ask a segmentation service for masks at the given prompts.

    The request carries the PNG-encoded image and the prompt list; every
    returned polygon becomes an annotation tagged with class_hint. An empty
    mask list is a valid reply. Connection failures and 5xx replies are
    retried `retries` times with exponential backoff; other non-2xx replies
    raise ServiceError with a body excerpt."""
    _check_prompts(image, prompts)
    transport = transport if transport is not None else PostTransport()
    url = endpoint.rstrip("/") + WIRE_SEGMENT_PATH
    payload = {
        "image_png_b64": base64.b64encode(png_bytes(image)).decode("ascii"),
        "prompts": [{"x": p.u, "y": p.v, "positive": p.positive} for p in prompts],
        "multimask": False,
    }

    last_error: Optional[Exception] = None
    for attempt in range(retries + 1):
        if attempt > 0:
            sleep(backoff * (2 ** (attempt - 1)))
        try:
            status, body = transport.post(url, payload, timeout)
        except TransportError as exc:
            last_error = exc
            continue
        if 200 <= status < 300:
            return _parse_wire_masks(body, class_hint, ImageRef(image.representation_id, image_id))
        excerpt = body[:200].decode("utf-8", errors="replace")
        if status >= 500:
            last_error = ServiceError(f"segmentation service returned {status}: {excerpt}")
            continue
        raise ServiceError(f"segmentation service returned {status}: {excerpt}")
    assert last_error is not None
    raise last_error


def _parse_wire_masks(body: bytes, class_hint: FeatureClass, ref: ImageRef) -> List[MaskAnnotation]:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"segmentation reply is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("masks"), list):
        raise FormatError("segmentation reply lacks a 'masks' list")
    annotations = []
    for mask in doc["masks"]:
        poly = mask.get("polygon")
        if not isinstance(poly, list) or len(poly) < 3:
            raise FormatError("segmentation mask polygon must list at least 3 [x, y] pairs")
        ring = tuple((float(p[0]), float(p[1])) for p in poly)
        annotations.append(
            MaskAnnotation(rings=(ring,), feature_class=class_hint, image_ref=ref, score=mask.get("score"))
        )
    return annotations


def segment_stub(
    image: RasterImage,
    prompts: Sequence[PromptPoint],
    class_hint: FeatureClass,
    image_id: str = "",
    tolerance: int = STUB_TOLERANCE,
) -> List[MaskAnnotation]:
    """Deterministic offline backend for gray images.

    Each positive prompt grows a 4-connected region of pixels within
    `tolerance` gray levels of the prompted pixel; no-data pixels (value 0)
    never join. Regions of negative prompts are carved out of every
    positive region, and each surviving connected component becomes one
    annotation (outer boundary only) with score 1.0. A prompt landing on
    no-data contributes nothing."""
    if image.is_color:
        raise UnsupportedFormatError("the offline segmentation backend handles gray images only")
    _check_prompts(image, prompts)
    pixels = image.pixels.astype(np.int16)
    ref = ImageRef(image.representation_id, image_id)

    def region_of(p: PromptPoint) -> Optional[np.ndarray]:
        col = int(round(p.u))
        row = int(round(p.v))
        seed = pixels[row, col]
        if seed == NODATA_GRAY:
            return None
        candidate = (pixels != NODATA_GRAY) & (np.abs(pixels - seed) <= tolerance)
        labels, _ = ndimage.label(candidate, structure=_CROSS)
        return labels == labels[row, col]

    negative = np.zeros(pixels.shape, dtype=bool)
    for p in prompts:
        if not p.positive:
            reg = region_of(p)
            if reg is not None:
                negative |= reg

    annotations: List[MaskAnnotation] = []
    for p in prompts:
        if not p.positive:
            continue
        reg = region_of(p)
        if reg is None:
            continue
        reg &= ~negative
        labels, count = ndimage.label(reg, structure=_CROSS)
        for lab in range(1, count + 1):
            rings = trace_region(labels == lab)
            outer = [r for r in rings if ring_area(r) > 0]
            assert len(outer) == 1
            annotations.append(
                MaskAnnotation(
                    rings=(tuple(outer[0]),), feature_class=class_hint, image_ref=ref, score=1.0
                )
            )
    return annotations


AssessmentMatrix = Mapping[Tuple[FeatureClass, str], ExtractionLevel]

_REP_ORDER = tuple(f"R{i}" for i in range(1, 10))


def record_assessment(matrix: AssessmentMatrix, json_path, text_path) -> None:
    """Persist the per-class, per-representation extraction assessment.

    Writes a machine-readable JSON file and an aligned text table with one
    row per feature class (planimetric block first) and one column per
    representation R1..R9. Cells without an entry print as '-'."""
    for fc, rep_id in matrix:
        if not isinstance(fc, FeatureClass):
            raise ValueError(f"matrix key {fc!r} is not a feature class")
        if rep_id not in REPRESENTATIONS:
            raise ValueError(f"matrix references unknown representation {rep_id!r}")

    records = [
        {"feature_class": fc.canonical_name, "representation_id": rep_id, "level": level.value}
        for (fc, rep_id), level in sorted(
            matrix.items(), key=lambda kv: (kv[0][0].las_code, kv[0][1])
        )
    ]
    Path(json_path).write_text(json.dumps({"assessment": records}, indent=2))

    name_width = max(len("feature class"), max((len(fc.display) for fc in FeatureClass), default=0))
    col_width = max(len("N/A"), max(len(r) for r in _REP_ORDER))
    lines = []
    header = "feature class".ljust(name_width) + "".join(
        f"  {rep.rjust(col_width)}" for rep in _REP_ORDER
    )
    lines.append(header)
    lines.append("-" * len(header))
    present = {fc for fc, _ in matrix}
    for group in (planimetric_classes(), volumetric_classes()):
        for fc in group:
            if fc not in present:
                continue
            cells = []
            for rep_id in _REP_ORDER:
                level = matrix.get((fc, rep_id))
                cells.append((level.value if level is not None else "-").rjust(col_width))
            lines.append(fc.display.ljust(name_width) + "".join(f"  {c}" for c in cells))
    Path(text_path).write_text("\n".join(lines) + "\n")
