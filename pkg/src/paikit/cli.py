"""Pipeline orchestration: composable subcommands over one run directory.

Each stage reads files the previous stages wrote, records what it produced
in manifest.json (input hashes, output checksums, timings), and skips work
when nothing changed. A YAML config supplies per-stage settings; command
line flags override the config; built-in defaults fill the rest.

Exit codes: 0 ok, 2 usage or configuration, 3 missing prerequisite,
4 data error, 5 transport error.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from .camera import (
    DEFAULT_CAM_HEIGHT_M,
    DEFAULT_FOCAL_MM,
    DEFAULT_PITCH_DEG,
    DEFAULT_PIXEL_SIZE_UM,
    DEFAULT_VIEW_HEIGHT,
    DEFAULT_VIEW_WIDTH,
    VIEW_KINDS,
    CameraIntrinsics,
    plan_stations,
)
from .errors import (
    ConfigurationError,
    MissingPrerequisiteError,
    PaikitError,
    ParseError,
)
from .fixture import synth_city
from .gateway import (
    FeatureClass,
    PromptPoint,
    RegisteredImage,
    build_registry,
    export_coco,
    import_coco,
    segment_remote,
    segment_stub,
)
from .ground import SmrfParams, VegetationTiers, classify_ground, classify_vegetation
from .las import load_las, write_las
from .metrics import (
    MetricsParams,
    extract_centerline,
    measure_stations,
    write_segments_geojson,
    write_station_csv,
)
from .pointcloud import ClassSelector, load_trajectory
from .raster import (
    REPRESENTATIONS,
    PixelAttribute,
    RasterImage,
    ViewKind,
    read_correspondence,
    read_geotiff,
    read_png,
    representation_for,
    write_correspondence,
    write_geotiff,
    write_png,
)
from .render import render_bev, render_street_view
from .reproject import (
    GeoPolygon,
    LabeledCloud,
    bev_mask_to_geo,
    export_inventory,
    pool_labels,
    street_mask_to_points,
)
from .satellite import fetch_satellite

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
CACHE_ENV = "PAIKIT_CACHE"

INPUT_LAS = "input.las"
TRAJECTORY_TXT = "trajectory.txt"
PROMPTS_JSON = "prompts.json"
CLASSIFIED_LAS = "classified.las"
ANNOTATIONS_JSON = "annotations/annotations.json"
GEOS_JSON = "reproject/geos.json"
CONTRIBUTIONS_JSON = "reproject/contributions.json"
INVENTORY_DIR = "inventory"
STATIONS_CSV = "metrics/stations.csv"
SEGMENTS_GEOJSON = "metrics/segments.geojson"

BEV_VARIANTS = ("R1", "R2", "R3", "R4")

# written by `synth` when no config exists: one fixture block is tiny, so
# render it small and fast instead of at full survey resolution
FIXTURE_CONFIG = """\
schema_version: 1
render_bev:
  cell_size: 0.5        # survey feet per pixel
render_views:
  width: 504
  height: 378
  pixel_size_um: 9.76   # keeps the full-resolution field of view
fetch_sat:
  resolution: 0.5
metrics:
  station_spacing_m: 10.0
  probe_halfwidth_m: 2.0
"""

# which command produces a file, for actionable missing-prerequisite errors
_PRODUCERS = (
    (INPUT_LAS, "synth (or copy your LAS tile to input.las)"),
    (TRAJECTORY_TXT, "synth (or provide trajectory.txt)"),
    (PROMPTS_JSON, "synth (or provide prompts.json)"),
    (CLASSIFIED_LAS, "classify"),
    ("bev/", "render-bev"),
    ("views/", "render-views"),
    ("sat/", "fetch-sat"),
    ("annotations/", "segment"),
    ("reproject/", "reproject"),
    ("inventory/", "pool"),
    ("metrics/", "metrics"),
)


def _producer_of(rel: str) -> str:
    for prefix, cmd in _PRODUCERS:
        if rel == prefix or rel.startswith(prefix):
            return cmd
    return "an earlier stage"


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_config(path: Path) -> Dict:
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ParseError(f"{path}: {where}: {getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    return doc


class RunContext:
    """Everything a stage needs: directories, config, manifest, run flags."""

    def __init__(self, run_dir: Path, config: Dict, force: bool, dry_run: bool, jobs: int,
                 cache_dir: Optional[Path]):
        self.run_dir = run_dir
        self.config = config
        self.force = force
        self.dry_run = dry_run
        self.jobs = max(1, jobs)
        self._cache_dir = cache_dir
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> Dict:
        path = self.run_dir / MANIFEST_NAME
        if path.exists():
            doc = json.loads(path.read_text())
            if doc.get("schema_version") != SCHEMA_VERSION:
                raise ConfigurationError(
                    f"{path}: unsupported manifest schema {doc.get('schema_version')!r}"
                )
            return doc
        return {"schema_version": SCHEMA_VERSION, "stages": {}}

    def save_manifest(self):
        self.manifest["config"] = self.config
        path = self.run_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))

    def cfg(self, stage: str, key: str, override, default):
        """Flag value if given, else config file value, else default."""
        if override is not None:
            return override
        section = self.config.get(stage) or {}
        value = section.get(key)
        return default if value is None else value

    def cache_dir(self) -> Path:
        if self._cache_dir is not None:
            return self._cache_dir
        configured = self.config.get("cache_dir")
        if configured:
            return Path(configured)
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        return self.run_dir / "cache"

    def require(self, rel: str) -> Path:
        path = self.run_dir / rel
        if not path.exists():
            raise MissingPrerequisiteError(
                f"{rel} not found in {self.run_dir}; run `paikit {_producer_of(rel)}` first"
            )
        return path

    def stage_record(self, name: str) -> Optional[Dict]:
        return self.manifest["stages"].get(name)

    def outputs_current(self, record: Dict) -> bool:
        for rel, digest in record.get("outputs", {}).items():
            path = self.run_dir / rel
            if not path.exists() or _digest(path) != digest:
                return False
        return True

    def run_stage(self, name: str, input_rels: Sequence[str], params: Dict, produce) -> int:
        """Signature-checked stage execution.

        `produce` runs only when the stage is stale (inputs, params, or
        outputs changed) or --force was given; it returns the relative
        paths it wrote.
        """
        inputs = {rel: _digest(self.require(rel)) for rel in sorted(input_rels)}
        signature = hashlib.sha256(
            _canonical({"stage": name, "inputs": inputs, "params": params}).encode()
        ).hexdigest()
        record = self.stage_record(name)
        current = (
            record is not None
            and record.get("signature") == signature
            and self.outputs_current(record)
        )
        if current and not self.force:
            print(f"{name}: up to date")
            return 0
        if self.dry_run:
            verb = "would re-run (forced)" if current else "would run"
            print(f"{name}: {verb}; inputs {list(inputs) or '-'}")
            return 0
        started = time.perf_counter()
        outputs = produce()
        seconds = time.perf_counter() - started
        self.manifest["stages"][name] = {
            "signature": signature,
            "inputs": inputs,
            "params": params,
            "outputs": {rel: _digest(self.run_dir / rel) for rel in sorted(outputs)},
            "seconds": round(seconds, 3),
            "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self.save_manifest()
        print(f"{name}: wrote {len(outputs)} file(s) in {seconds:.1f}s")
        return 0


def _parallel(jobs: int, tasks: Sequence):
    """Run zero-argument callables, preserving order; sequential when jobs=1."""
    if jobs <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


# --------------------------------------------------------------- image io


def _view_rep_id(ctx: RunContext) -> str:
    record = ctx.stage_record("render-views")
    if record and "rep" in record.get("params", {}):
        return record["params"]["rep"]
    return "R6"


def _load_image(ctx: RunContext, rel: str) -> RasterImage:
    path = ctx.require(rel)
    if rel.endswith(".tif"):
        return read_geotiff(path, Path(rel).stem)
    rep = _view_rep_id(ctx) if rel.startswith("views/") else Path(rel).stem
    return read_png(path, rep)


def _cmap_rel(rel: str) -> str:
    return str(Path(rel).with_suffix(".cmap"))


# ------------------------------------------------------------- subcommands


def cmd_synth(ctx: RunContext, args) -> int:
    seed = int(ctx.cfg("synth", "seed", args.seed, 7))

    def produce():
        cloud, trajectory, prompts = synth_city(seed)
        write_las(cloud, ctx.run_dir / INPUT_LAS, point_format=3)
        lines = ["# x, y, z, t"]
        for x, y, z, t in trajectory.samples:
            lines.append(f"{x:.3f},{y:.3f},{z:.3f},{t:.3f}")
        (ctx.run_dir / TRAJECTORY_TXT).write_text("\n".join(lines) + "\n")
        (ctx.run_dir / PROMPTS_JSON).write_text(
            json.dumps({"prompts": prompts}, indent=2, sort_keys=True)
        )
        config_path = ctx.run_dir / "config.yaml"
        if not config_path.exists():
            # fixture-sized settings; untracked so edits never go stale
            config_path.write_text(FIXTURE_CONFIG)
            print("synth: wrote config.yaml with fixture-sized settings")
        return [INPUT_LAS, TRAJECTORY_TXT, PROMPTS_JSON]

    return ctx.run_stage("synth", [], {"seed": seed}, produce)


def cmd_classify(ctx: RunContext, args) -> int:
    cloud = load_las(ctx.require(INPUT_LAS))
    unit = cloud.linear_unit
    base = SmrfParams.metric_defaults(unit)
    params = {
        "cell_size": float(ctx.cfg("classify", "cell_size", args.cell_size, base.cell_size)),
        "max_window": float(ctx.cfg("classify", "max_window", args.max_window, base.max_window)),
        "slope_threshold": float(
            ctx.cfg("classify", "slope_threshold", args.slope_threshold, base.slope_threshold)
        ),
        "elevation_threshold": float(
            ctx.cfg(
                "classify", "elevation_threshold", args.elevation_threshold,
                base.elevation_threshold,
            )
        ),
        "elevation_scaling": float(
            ctx.cfg(
                "classify", "elevation_scaling", args.elevation_scaling, base.elevation_scaling
            )
        ),
        "low_max": float(ctx.cfg("classify", "low_max", None, 2.0)),
        "medium_max": float(ctx.cfg("classify", "medium_max", None, 5.0)),
    }

    def produce():
        smrf = SmrfParams(
            cell_size=params["cell_size"],
            max_window=params["max_window"],
            slope_threshold=params["slope_threshold"],
            elevation_threshold=params["elevation_threshold"],
            elevation_scaling=params["elevation_scaling"],
        )
        tiers = VegetationTiers(params["low_max"], params["medium_max"])
        classified = classify_vegetation(classify_ground(cloud, smrf), tiers)
        write_las(classified, ctx.run_dir / CLASSIFIED_LAS, point_format=3)
        return [CLASSIFIED_LAS]

    return ctx.run_stage("classify", [INPUT_LAS], params, produce)


def _default_cell(unit) -> float:
    # the BEV grid default: 0.1 survey feet expressed in the cloud's unit
    return unit.from_meters(0.1 * 0.3048)


def cmd_render_bev(ctx: RunContext, args) -> int:
    cloud = load_las(ctx.require(CLASSIFIED_LAS))
    cell = float(ctx.cfg("render_bev", "cell_size", args.cell_size, _default_cell(cloud.linear_unit)))
    variants = ctx.cfg("render_bev", "variants", args.variants, list(BEV_VARIANTS))
    if isinstance(variants, str):
        variants = [v.strip() for v in variants.split(",") if v.strip()]
    for rid in variants:
        if rid not in BEV_VARIANTS:
            raise ConfigurationError(f"unknown BEV variant {rid!r}; choose from {BEV_VARIANTS}")
    params = {"cell_size": cell, "variants": list(variants)}

    def produce():
        (ctx.run_dir / "bev").mkdir(exist_ok=True)

        def render_one(rid):
            rep = REPRESENTATIONS[rid]
            image, cmap = render_bev(cloud, rep.selector, rep.attribute, cell)
            write_geotiff(image, ctx.run_dir / "bev" / f"{rid}.tif")
            write_correspondence(cmap, ctx.run_dir / "bev" / f"{rid}.cmap")
            return [f"bev/{rid}.tif", f"bev/{rid}.cmap"]

        produced = _parallel(ctx.jobs, [lambda rid=rid: render_one(rid) for rid in variants])
        return [rel for pair in produced for rel in pair]

    return ctx.run_stage("render-bev", [CLASSIFIED_LAS], params, produce)


def cmd_render_views(ctx: RunContext, args) -> int:
    cloud = load_las(ctx.require(CLASSIFIED_LAS))
    trajectory = load_trajectory(ctx.require(TRAJECTORY_TXT))
    unit = cloud.linear_unit
    spacing = ctx.cfg("render_views", "spacing", args.spacing, None)
    # default: eight stations over the tile regardless of its length
    spacing = float(spacing) if spacing is not None else trajectory.length / 8.0
    selector = ClassSelector.parse(ctx.cfg("render_views", "classes", args.classes, "ground-only"))
    attribute = PixelAttribute.parse(ctx.cfg("render_views", "pixel", args.pixel, "intensity"))
    rep = representation_for(ViewKind.STREET_VIEW, selector, attribute)
    params = {
        "spacing": spacing,
        "point_size": int(ctx.cfg("render_views", "point_size", args.point_size, 8)),
        "rep": rep.rep_id,
        "cam_height": float(
            ctx.cfg(
                "render_views", "cam_height", args.cam_height,
                unit.from_meters(DEFAULT_CAM_HEIGHT_M),
            )
        ),
        "pitch_deg": float(ctx.cfg("render_views", "pitch_deg", args.pitch, DEFAULT_PITCH_DEG)),
        "width": int(ctx.cfg("render_views", "width", args.width, DEFAULT_VIEW_WIDTH)),
        "height": int(ctx.cfg("render_views", "height", args.height, DEFAULT_VIEW_HEIGHT)),
        "focal_mm": float(ctx.cfg("render_views", "focal_mm", None, DEFAULT_FOCAL_MM)),
        "pixel_size_um": float(ctx.cfg("render_views", "pixel_size_um", None, DEFAULT_PIXEL_SIZE_UM)),
    }

    def produce():
        (ctx.run_dir / "views").mkdir(exist_ok=True)
        intr = CameraIntrinsics(
            params["focal_mm"], params["pixel_size_um"], params["width"], params["height"]
        )
        stations = plan_stations(
            trajectory, params["spacing"], params["cam_height"], params["pitch_deg"]
        )

        def render_one(station, view_idx):
            name = f"s{station.index:02d}_{VIEW_KINDS[view_idx]}"
            image, cmap = render_street_view(
                cloud, selector, attribute, intr, station.poses[view_idx], params["point_size"]
            )
            write_png(image, ctx.run_dir / "views" / f"{name}.png")
            write_correspondence(cmap, ctx.run_dir / "views" / f"{name}.cmap")
            return [f"views/{name}.png", f"views/{name}.cmap"]

        tasks = [
            lambda s=s, i=i: render_one(s, i) for s in stations for i in range(len(VIEW_KINDS))
        ]
        produced = _parallel(ctx.jobs, tasks)
        print(f"render-views: {len(stations)} stations x {len(VIEW_KINDS)} views")
        return [rel for pair in produced for rel in pair]

    return ctx.run_stage("render-views", [CLASSIFIED_LAS, TRAJECTORY_TXT], params, produce)


def cmd_fetch_sat(ctx: RunContext, args) -> int:
    cloud = load_las(ctx.require(INPUT_LAS))
    params = {
        "endpoint": str(ctx.cfg("fetch_sat", "endpoint", args.endpoint, "synthetic:checker")),
        "resolution": float(
            ctx.cfg("fetch_sat", "resolution", args.resolution, _default_cell(cloud.linear_unit))
        ),
        "layer": str(ctx.cfg("fetch_sat", "layer", args.layer, "satellite")),
    }

    def produce():
        (ctx.run_dir / "sat").mkdir(exist_ok=True)
        image = fetch_satellite(
            cloud.extent(),
            cloud.crs_id or "EPSG:6539",
            params["resolution"],
            params["endpoint"],
            cache_dir=ctx.cache_dir(),
            layer=params["layer"],
            unit=cloud.linear_unit,
        )
        write_geotiff(image, ctx.run_dir / "sat" / "R5.tif")
        return ["sat/R5.tif"]

    return ctx.run_stage("fetch-sat", [INPUT_LAS], params, produce)


def _load_prompts(ctx: RunContext) -> List[Dict]:
    path = ctx.require(PROMPTS_JSON)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    prompts = doc.get("prompts") if isinstance(doc, dict) else None
    if not isinstance(prompts, list):
        raise ParseError(f"{path}: expected a top-level 'prompts' list")
    return prompts


def _prompt_pixel(entry: Dict, image: RasterImage, path_hint: str) -> PromptPoint:
    if "u" in entry and "v" in entry:
        return PromptPoint(float(entry["u"]), float(entry["v"]), entry.get("positive", True))
    if "x" in entry and "y" in entry:
        if image.geo is None:
            raise ConfigurationError(
                f"prompt on {path_hint} gives world x/y but the image has no geotransform"
            )
        col, row = image.geo.pixel_of(float(entry["x"]), float(entry["y"]))
        return PromptPoint(float(col), float(row), entry.get("positive", True))
    raise ConfigurationError("each prompt needs pixel u/v or world x/y coordinates")


def cmd_segment(ctx: RunContext, args) -> int:
    backend = str(ctx.cfg("segment", "backend", args.backend, "stub"))
    images = ctx.cfg("segment", "images", args.images, ["bev/R1.tif"])
    if isinstance(images, str):
        images = [v.strip() for v in images.split(",") if v.strip()]
    tolerance = int(ctx.cfg("segment", "tolerance", args.tolerance, 10))
    params = {"backend": backend, "images": list(images), "tolerance": tolerance}

    input_rels = list(images)
    if backend.startswith("coco:"):
        coco_src = backend.split(":", 1)[1]
        input_rels.append(coco_src)
    else:
        input_rels.append(PROMPTS_JSON)

    def produce():
        (ctx.run_dir / "annotations").mkdir(exist_ok=True)
        loaded = {rel: _load_image(ctx, rel) for rel in images}
        registry = build_registry(
            [
                RegisteredImage(rel, img.width, img.height, img.representation_id)
                for rel, img in loaded.items()
            ]
        )
        if backend.startswith("coco:"):
            result = import_coco(ctx.run_dir / backend.split(":", 1)[1], registry)
            annotations = result.annotations
            for reject in result.rejected:
                print(f"segment: skipped annotation {reject.annotation_id}: {reject.reason}")
        else:
            annotations = []
            for entry in _load_prompts(ctx):
                rel = entry.get("image", images[0])
                if rel not in loaded:
                    print(f"segment: prompt targets unsegmented image {rel}; skipped")
                    continue
                image = loaded[rel]
                point = _prompt_pixel(entry, image, rel)
                hint = FeatureClass.parse(entry.get("class", "sidewalk"))
                if hint is None:
                    raise ConfigurationError(f"unknown prompt class {entry.get('class')!r}")
                if backend == "stub":
                    annotations.extend(
                        segment_stub(image, [point], hint, image_id=rel, tolerance=tolerance)
                    )
                elif backend.startswith("remote:"):
                    annotations.extend(
                        segment_remote(
                            image, [point], hint,
                            endpoint=backend.split(":", 1)[1], image_id=rel,
                        )
                    )
                else:
                    raise ConfigurationError(
                        f"unknown backend {backend!r}; use stub, coco:<path>, or remote:<url>"
                    )
            print(f"segment: {len(annotations)} annotation(s) from {backend}")
        export_coco(annotations, registry, ctx.run_dir / ANNOTATIONS_JSON)
        return [ANNOTATIONS_JSON]

    return ctx.run_stage("segment", input_rels, params, produce)


def cmd_reproject(ctx: RunContext, args) -> int:
    record = ctx.stage_record("segment")
    if record is None:
        raise MissingPrerequisiteError("no segment stage in the manifest; run `paikit segment` first")
    images = record["params"]["images"]
    input_rels = [ANNOTATIONS_JSON] + list(images) + [_cmap_rel(rel) for rel in images]

    def produce():
        (ctx.run_dir / "reproject").mkdir(exist_ok=True)
        loaded = {rel: _load_image(ctx, rel) for rel in images}
        registry = build_registry(
            [
                RegisteredImage(rel, img.width, img.height, img.representation_id)
                for rel, img in loaded.items()
            ]
        )
        result = import_coco(ctx.run_dir / ANNOTATIONS_JSON, registry)
        geos = []
        contributions: Dict[str, List] = {rel: [] for rel in images}
        for ann in result.annotations:
            rel = ann.image_ref.image_id
            image = loaded[rel]
            cmap = read_correspondence(ctx.run_dir / _cmap_rel(rel))
            if image.geo is not None:
                geos.append(bev_mask_to_geo(ann, image.geo, crs_id=image.crs_id))
            contributions[rel].extend(
                (idx, fc.las_code) for idx, fc in street_mask_to_points(ann, cmap, image)
            )
        (ctx.run_dir / GEOS_JSON).write_text(
            json.dumps(
                [
                    {
                        "feature_class": g.feature_class.canonical_name,
                        "rings": [[[float(x), float(y)] for x, y in ring] for ring in g.rings],
                        "source_representations": list(g.source_representations),
                        "crs_id": g.crs_id,
                    }
                    for g in geos
                ],
                indent=2,
            )
        )
        (ctx.run_dir / CONTRIBUTIONS_JSON).write_text(
            json.dumps({"views": {rel: rows for rel, rows in contributions.items()}})
        )
        total = sum(len(rows) for rows in contributions.values())
        print(f"reproject: {len(geos)} polygon(s), {total} point contribution(s)")
        return [GEOS_JSON, CONTRIBUTIONS_JSON]

    return ctx.run_stage("reproject", input_rels, {"images": list(images)}, produce)


def _load_geos(path: Path) -> List[GeoPolygon]:
    geos = []
    for row in json.loads(path.read_text()):
        fc = FeatureClass.parse(row["feature_class"])
        if fc is None:
            raise ParseError(f"{path}: unknown feature class {row['feature_class']!r}")
        geos.append(
            GeoPolygon(
                rings=tuple(tuple((float(x), float(y)) for x, y in ring) for ring in row["rings"]),
                feature_class=fc,
                source_representations=tuple(row["source_representations"]),
                crs_id=row.get("crs_id"),
            )
        )
    return geos


def cmd_pool(ctx: RunContext, args) -> int:
    min_votes = int(ctx.cfg("pool", "min_votes", args.min_votes, 1))

    def produce():
        cloud = load_las(ctx.run_dir / CLASSIFIED_LAS)
        geos = _load_geos(ctx.run_dir / GEOS_JSON)
        doc = json.loads((ctx.run_dir / CONTRIBUTIONS_JSON).read_text())
        views = [
            [(int(idx), FeatureClass.from_las_code(int(code))) for idx, code in rows]
            for rows in doc["views"].values()
        ]
        labeled = pool_labels(views, cloud, min_votes=min_votes)
        out_dir = ctx.run_dir / INVENTORY_DIR
        out_dir.mkdir(exist_ok=True)
        export_inventory(geos, labeled, out_dir)
        print(f"pool: {labeled.labeled_count} point(s) labeled across {len(views)} view(s)")
        return [
            f"{INVENTORY_DIR}/inventory.geojson",
            f"{INVENTORY_DIR}/labeled.las",
            f"{INVENTORY_DIR}/label_map.json",
        ]

    return ctx.run_stage(
        "pool", [CLASSIFIED_LAS, GEOS_JSON, CONTRIBUTIONS_JSON], {"min_votes": min_votes}, produce
    )


def _load_labeled(path: Path) -> LabeledCloud:
    cloud = load_las(path)
    codes = cloud.class_codes
    feature = (codes >= 64) & (codes <= 86)
    labels = np.where(feature, codes, 0).astype(np.uint8)
    return LabeledCloud(cloud, labels, {})


def cmd_metrics(ctx: RunContext, args) -> int:
    params = {
        "station_spacing_m": float(
            ctx.cfg("metrics", "station_spacing_m", args.station_spacing, 5.0)
        ),
        "probe_halfwidth_m": float(
            ctx.cfg("metrics", "probe_halfwidth_m", args.probe_halfwidth, 2.0)
        ),
        "grid_cell_m": float(ctx.cfg("metrics", "grid_cell_m", args.grid_cell, 0.25)),
        "min_arc_m": float(ctx.cfg("metrics", "min_arc_m", args.min_arc, 2.0)),
    }
    labeled_rel = f"{INVENTORY_DIR}/labeled.las"

    def produce():
        (ctx.run_dir / "metrics").mkdir(exist_ok=True)
        labeled = _load_labeled(ctx.run_dir / labeled_rel)
        extraction = MetricsParams(
            grid_cell_m=params["grid_cell_m"], min_arc_m=params["min_arc_m"]
        )
        lines = extract_centerline(labeled, FeatureClass.SIDEWALK, extraction)
        segments = []
        min_span = labeled.cloud.linear_unit.from_meters(params["station_spacing_m"])
        for line in lines:
            length = float(np.sum(np.linalg.norm(np.diff(line, axis=0), axis=1)))
            if length < min_span:
                continue
            segments.append(
                measure_stations(
                    labeled, line, params["station_spacing_m"], params["probe_halfwidth_m"]
                )
            )
        write_station_csv(segments, ctx.run_dir / STATIONS_CSV)
        write_segments_geojson(
            segments, labeled.cloud.crs_id or "", ctx.run_dir / SEGMENTS_GEOJSON
        )
        n_st = sum(len(s.stations) for s in segments)
        print(f"metrics: {len(segments)} segment(s), {n_st} station(s)")
        return [STATIONS_CSV, SEGMENTS_GEOJSON]

    return ctx.run_stage("metrics", [labeled_rel], params, produce)


# ------------------------------------------------------------------ report


def _read_stations_csv(path: Path) -> List[Dict]:
    rows = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "segment": int(row["segment"]),
                    "s_m": float(row["s_m"]),
                    "width_m": float(row["width_m"]) if row["width_m"] else None,
                    "running_slope_pct": (
                        float(row["running_slope_pct"]) if row["running_slope_pct"] else None
                    ),
                    "cross_slope_pct": (
                        float(row["cross_slope_pct"]) if row["cross_slope_pct"] else None
                    ),
                }
            )
    return rows


def cmd_report(ctx: RunContext, args) -> int:
    bev_rel = "bev/R1.tif"
    inventory_rel = f"{INVENTORY_DIR}/inventory.geojson"
    inputs = [bev_rel, inventory_rel, STATIONS_CSV, SEGMENTS_GEOJSON]

    def produce():
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out_dir = ctx.run_dir / "report"
        out_dir.mkdir(exist_ok=True)
        image = _load_image(ctx, bev_rel)
        inventory = json.loads((ctx.run_dir / inventory_rel).read_text())
        stations = _read_stations_csv(ctx.run_dir / STATIONS_CSV)
        segments_doc = json.loads((ctx.run_dir / SEGMENTS_GEOJSON).read_text())

        geo = image.geo
        extent = [
            geo.origin_x,
            geo.origin_x + image.width * geo.cell_size,
            geo.origin_y - image.height * geo.cell_size,
            geo.origin_y,
        ]
        fig, ax = plt.subplots(figsize=(12, 12 * image.height / max(image.width, 1)))
        ax.imshow(image.pixels, cmap="gray", extent=extent, interpolation="nearest")
        palette = {}
        cmap = plt.get_cmap("tab10")
        for feature in inventory["features"]:
            name = feature["properties"]["feature_class"]
            color = palette.setdefault(name, cmap(len(palette) % 10))
            for ring in feature["geometry"]["coordinates"]:
                xy = np.asarray(ring)
                ax.plot(xy[:, 0], xy[:, 1], color=color, linewidth=1.5,
                        label=name if name not in ax.get_legend_handles_labels()[1] else None)
        for feature in segments_doc.get("features", []):
            if feature["geometry"]["type"] == "LineString":
                xy = np.asarray(feature["geometry"]["coordinates"])
                ax.plot(xy[:, 0], xy[:, 1], color="crimson", linewidth=1.0, linestyle="--",
                        label="centerline" if "centerline" not in ax.get_legend_handles_labels()[1]
                        else None)
        if palette or segments_doc.get("features"):
            ax.legend(loc="upper right", fontsize=8)
        ax.set_xlabel("easting")
        ax.set_ylabel("northing")
        ax.set_title("inventory over ground intensity")
        fig.savefig(out_dir / "overview.png", dpi=110, bbox_inches="tight")
        plt.close(fig)

        fig, axes = plt.subplots(3, 1, figsize=(10, 8), sharex=True)
        keys = ("width_m", "running_slope_pct", "cross_slope_pct")
        titles = ("width (m)", "running slope (%)", "cross slope (%)")
        seg_ids = sorted({row["segment"] for row in stations})
        for seg in seg_ids:
            rows = [r for r in stations if r["segment"] == seg]
            s = [r["s_m"] for r in rows]
            for ax2, key in zip(axes, keys):
                vals = [r[key] if r[key] is not None else np.nan for r in rows]
                ax2.plot(s, vals, marker="o", markersize=3, label=f"segment {seg}")
        for ax2, title in zip(axes, titles):
            ax2.set_ylabel(title)
            ax2.grid(True, alpha=0.3)
        axes[-1].set_xlabel("station chainage (m)")
        if seg_ids:
            axes[0].legend(fontsize=8)
        fig.savefig(out_dir / "profiles.png", dpi=110, bbox_inches="tight")
        plt.close(fig)

        with (out_dir / "summary.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                (
                    "segment", "stations", "measured", "width_min_m", "width_mean_m",
                    "running_abs_max_pct", "cross_abs_max_pct",
                )
            )
            for seg in seg_ids:
                rows = [r for r in stations if r["segment"] == seg]
                widths = [r["width_m"] for r in rows if r["width_m"] is not None]
                runnings = [
                    abs(r["running_slope_pct"]) for r in rows
                    if r["running_slope_pct"] is not None
                ]
                crosses = [
                    abs(r["cross_slope_pct"]) for r in rows if r["cross_slope_pct"] is not None
                ]
                writer.writerow(
                    [
                        seg,
                        len(rows),
                        len(widths),
                        f"{min(widths):.3f}" if widths else "",
                        f"{sum(widths) / len(widths):.3f}" if widths else "",
                        f"{max(runnings):.3f}" if runnings else "",
                        f"{max(crosses):.3f}" if crosses else "",
                    ]
                )
        return ["report/overview.png", "report/profiles.png", "report/summary.csv"]

    return ctx.run_stage("report", inputs, {}, produce)


# --------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paikit",
        description="Pedestrian infrastructure inventory pipeline over a run directory.",
    )
    parser.add_argument("--run-dir", default=".", help="run directory (default: current)")
    parser.add_argument("--config", default=None, help="YAML config path (default: <run>/config.yaml)")
    parser.add_argument("--force", action="store_true", help="re-run even when up to date")
    parser.add_argument("--dry-run", action="store_true", help="print the plan, write nothing")
    parser.add_argument("--jobs", type=int, default=1, help="parallel renders/fetches")
    parser.add_argument("--cache-dir", default=None,
                        help=f"imagery cache (default: ${CACHE_ENV} or <run>/cache)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic street fixture")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("classify", help="ground and vegetation classification")
    p.add_argument("--cell-size", type=float, default=None, help="grid cell, cloud units")
    p.add_argument("--max-window", type=float, default=None)
    p.add_argument("--slope-threshold", type=float, default=None)
    p.add_argument("--elevation-threshold", type=float, default=None)
    p.add_argument("--elevation-scaling", type=float, default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("render-bev", help="render the bird's-eye rasters")
    p.add_argument("--cell-size", type=float, default=None, help="grid cell, cloud units")
    p.add_argument("--variants", default=None, help="comma list from R1,R2,R3,R4")
    p.set_defaults(func=cmd_render_bev)

    p = sub.add_parser("render-views", help="render synthetic street views")
    p.add_argument("--spacing", type=float, default=None, help="station spacing, cloud units")
    p.add_argument("--point-size", type=int, default=None)
    p.add_argument("--classes", default=None, help="ground-only or all")
    p.add_argument("--pixel", default=None, help="intensity or color")
    p.add_argument("--cam-height", type=float, default=None, help="cloud units")
    p.add_argument("--pitch", type=float, default=None, help="degrees downward")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.set_defaults(func=cmd_render_views)

    p = sub.add_parser("fetch-sat", help="fetch the aligned satellite image")
    p.add_argument("--endpoint", default=None, help="WMS URL, XYZ template, or synthetic:<style>")
    p.add_argument("--resolution", type=float, default=None, help="cloud units per pixel")
    p.add_argument("--layer", default=None)
    p.set_defaults(func=cmd_fetch_sat)

    p = sub.add_parser("segment", help="run a segmentation backend over rendered images")
    p.add_argument("--backend", default=None, help="stub, coco:<path>, or remote:<url>")
    p.add_argument("--images", default=None, help="comma list of run-relative images")
    p.add_argument("--tolerance", type=int, default=None, help="stub gray tolerance")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("reproject", help="project masks to world polygons and 3D points")
    p.set_defaults(func=cmd_reproject)

    p = sub.add_parser("pool", help="fuse per-view labels and export the inventory")
    p.add_argument("--min-votes", type=int, default=None)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("metrics", help="sidewalk centerlines, widths, and slopes")
    p.add_argument("--station-spacing", type=float, default=None, help="meters")
    p.add_argument("--probe-halfwidth", type=float, default=None, help="meters")
    p.add_argument("--grid-cell", type=float, default=None, help="meters")
    p.add_argument("--min-arc", type=float, default=None, help="meters")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="figures and summary table from the run outputs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run_dir = Path(args.run_dir)
        if not run_dir.exists():
            raise ConfigurationError(f"run directory {run_dir} does not exist")
        config_path = Path(args.config) if args.config else run_dir / "config.yaml"
        if args.config and not config_path.exists():
            raise ConfigurationError(f"config file {config_path} does not exist")
        config = load_config(config_path) if config_path.exists() else {}
        ctx = RunContext(
            run_dir=run_dir,
            config=config,
            force=args.force,
            dry_run=args.dry_run,
            jobs=args.jobs,
            cache_dir=Path(args.cache_dir) if args.cache_dir else None,
        )
        return args.func(ctx, args)
    except PaikitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
