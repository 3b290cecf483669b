"""Staged file-based pipeline: prepare -> align -> footprints -> regions ->
ctf -> fit -> report, with content-hash caching, an output-directory lock,
and a run manifest. Every stage consumes the previous stage's files, so
stages can be re-run individually and a finished stage is skipped when its
inputs haven't changed.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__ as TOOL_VERSION
from .alignment import GlobalAlignment, apply_alignment, global_align
from .ctf import (
    CtfRecord,
    MetricsError,
    compute_ctf,
    filter_records,
    fit_ctf_model,
    reason_counts,
    threshold_distance,
    vertical_accuracy,
)
from .footprints import (
    align_footprints,
    build_masks,
    load_footprints_geojson,
    polygonize_mask,
    save_footprints_geojson,
)
from .geom import OrientedRect, Point2
from .geotiff import read_geotiff, write_geotiff
from .osm import DEFAULT_ENDPOINT, fetch_osm_footprints
from .pointcloud import load_point_cloud
from .raster import (
    Raster,
    RasterError,
    downsample2,
    estimate_anps,
    generate_tribar,
    rasterize_max_dsm,
    rasterize_mesh,
    rasterize_min_dtm,
    read_obj,
    resample_to_grid,
)
from .regions import BuildingPair, EvaluationRegion, RegionConfig, build_all_regions
from .svgplot import render_ctf_plot
from .util import parallel_map, sha256_bytes, sha256_path, stable_json_dumps

log = logging.getLogger(__name__)

LOCK_NAME = ".ctf3d.lock"
MANIFEST_NAME = "run_manifest.json"


class ConfigError(Exception):
    """Bad or inconsistent configuration (exit 2)."""


class MissingInputError(Exception):
    """A required input or earlier-stage product is absent (exit 3)."""


class LockError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_KINDS_REF = ("pointcloud", "dsm")
_KINDS_TEST = ("pointcloud", "dsm", "mesh")


@dataclass
class PipelineConfig:
    reference: str = ""
    reference_kind: str = "pointcloud"
    reference_crs: str = ""  # override when the file carries no CRS
    test: str = ""
    test_kind: str = "pointcloud"
    test_crs: str = ""
    out_dir: str = "ctf3d_out"
    crs: str = ""  # working CRS; empty = take the reference's
    gsd: float = 0.0  # grid size in meters; 0 = estimate from point spacing
    window_px: int = 512
    valid_frac_min: float = 0.95
    manual_dx: Optional[float] = None
    manual_dy: Optional[float] = None
    manual_dz: Optional[float] = None
    conf_threshold: float = 0.5
    footprints_source: str = "lidar"  # 'lidar' | 'osm' | path to GeoJSON
    align_footprints: bool = True
    search_radius_px: int = 10
    min_area_m2: float = 25.0
    dp_epsilon: float = 0.0  # 0 = one cell
    osm_endpoint: str = DEFAULT_ENDPOINT
    osm_cache: str = ""
    max_centroid_dist: float = 150.0
    angle_tol_deg: float = 10.0
    max_orth_dist: float = 30.0
    min_overlap: float = 2.0
    depth_floor: float = 0.0  # 0 = one reference cell
    min_region_samples: int = 5
    ref_ctf_min: float = 0.95
    threshold: float = 0.2
    log_x: bool = False
    threads: int = 1

    def validate(self) -> None:
        problems = []
        if self.reference_kind not in _KINDS_REF:
            problems.append(f"reference_kind must be one of {_KINDS_REF}")
        if self.test_kind not in _KINDS_TEST:
            problems.append(f"test_kind must be one of {_KINDS_TEST}")
        if not (0.0 < self.threshold < 1.0):
            problems.append("threshold must lie in (0, 1)")
        if not (0.0 <= self.ref_ctf_min < 1.0):
            problems.append("ref_ctf_min must lie in [0, 1)")
        if not (0.0 <= self.valid_frac_min <= 1.0):
            problems.append("valid_frac_min must lie in [0, 1]")
        if not (0.0 <= self.conf_threshold <= 1.0):
            problems.append("conf_threshold must lie in [0, 1]")
        if self.window_px < 8:
            problems.append("window_px must be >= 8")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if self.gsd < 0:
            problems.append("gsd must be >= 0")
        if self.min_region_samples < 1:
            problems.append("min_region_samples must be >= 1")
        manual = (self.manual_dx, self.manual_dy, self.manual_dz)
        if any(v is not None for v in manual) and not all(v is not None for v in manual):
            problems.append("manual offsets need all three of dx, dy, dz")
        if problems:
            raise ConfigError("; ".join(problems))


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Config from a TOML file plus overrides; unknown keys are errors."""
    data: dict = {}
    if path:
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise MissingInputError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML: {e}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = PipelineConfig(**data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Manifest and locking
# ---------------------------------------------------------------------------


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = out_dir / MANIFEST_NAME
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                self.data = json.load(f)
        else:
            self.data = {"tool": "ctf3d", "version": TOOL_VERSION, "stages": {}}

    def stage(self, name: str) -> Optional[dict]:
        return self.data.get("stages", {}).get(name)

    def record_stage(self, name: str, input_hash: str, outputs: dict[str, str]) -> None:
        self.data.setdefault("stages", {})[name] = {
            "input_hash": input_hash,
            "completed_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": outputs,
        }
        self.save()

    def set_meta(self, **kv) -> None:
        self.data.update(kv)
        self.save()

    def save(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.data, f, sort_keys=True, indent=2)
            f.write("\n")
        os.replace(tmp, self.path)


class _Lock:
    """PID lock on the output directory; stale locks from dead processes are
    reclaimed."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / LOCK_NAME
        self.acquired = False

    def __enter__(self) -> "_Lock":
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                self.acquired = True
                return self
            except FileExistsError:
                try:
                    pid = int(self.path.read_text().strip() or "0")
                except (ValueError, OSError):
                    pid = 0
                if pid and pid != os.getpid() and _pid_alive(pid):
                    raise LockError(
                        f"output directory is locked by running process {pid} ({self.path})"
                    )
                try:
                    self.path.unlink()
                except OSError:
                    pass
        raise LockError(f"could not acquire lock {self.path}")

    def __exit__(self, *exc) -> None:
        if self.acquired:
            try:
                self.path.unlink()
            except OSError:
                pass


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# ---------------------------------------------------------------------------
# Small serialization helpers
# ---------------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _rect_props(r: OrientedRect) -> dict:
    return {
        "cx": r.center.x,
        "cy": r.center.y,
        "ax": r.axis.x,
        "ay": r.axis.y,
        "hl": r.half_length,
        "hw": r.half_width,
    }


def _rect_from_props(p: dict) -> OrientedRect:
    return OrientedRect(
        Point2(float(p["cx"]), float(p["cy"])),
        Point2(float(p["ax"]), float(p["ay"])),
        float(p["hl"]),
        float(p["hw"]),
    )


def _rect_geometry(rect: OrientedRect, crs_id: str) -> dict:
    from .footprints import polygon_to_geojson_geometry
    from .geom import Polygon

    return polygon_to_geojson_geometry(Polygon(tuple(rect.corners())), crs_id)


def _parse_id(v):
    if isinstance(v, str) and v.lstrip("-").isdigit():
        return int(v)
    return v


_RECORD_FIELDS = [
    "region",
    "id_a",
    "id_b",
    "d_m",
    "c_test",
    "c_ref",
    "valid",
    "reason",
    "n_test_a1",
    "n_test_a2",
    "n_test_b",
    "n_ref_a1",
    "n_ref_a2",
    "n_ref_b",
]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class StageStatus:
    name: str
    skipped: bool
    outputs: list[str]


class Pipeline:
    def __init__(self, config: PipelineConfig):
        config.validate()
        self.cfg = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.out)

    # -- infrastructure ----------------------------------------------------

    def _p(self, name: str) -> Path:
        return self.out / name

    def _require(self, name: str, producer: str) -> Path:
        p = self._p(name)
        if not p.exists():
            raise MissingInputError(f"{p} not found; run the '{producer}' stage first")
        return p

    def _input_hash(self, stage: str, dep_paths: list[Path], params: dict) -> str:
        deps = []
        for p in dep_paths:
            if not p.exists():
                raise MissingInputError(f"required input {p} does not exist")
            deps.append([str(p), sha256_path(p)])
        payload = stable_json_dumps([TOOL_VERSION, stage, deps, params])
        return sha256_bytes(payload.encode("utf-8"))

    def _cached(self, stage: str, input_hash: str) -> Optional[StageStatus]:
        entry = self.manifest.stage(stage)
        if not entry or entry.get("input_hash") != input_hash:
            return None
        for rel, digest in entry.get("outputs", {}).items():
            p = self._p(rel)
            if not p.exists() or sha256_path(p) != digest:
                return None
        log.info("%s: skipped (inputs unchanged)", stage)
        return StageStatus(stage, True, sorted(entry.get("outputs", {})))

    def _finish(self, stage: str, input_hash: str, outputs: list[str]) -> StageStatus:
        digests = {rel: sha256_path(self._p(rel)) for rel in outputs}
        self.manifest.record_stage(stage, input_hash, digests)
        log.info("%s: wrote %s", stage, ", ".join(sorted(outputs)))
        return StageStatus(stage, False, sorted(outputs))

    def _working_crs(self) -> str:
        crs = self.manifest.data.get("crs") or self.cfg.crs
        if not crs:
            ref = read_geotiff(self._require("ref_dsm.tif", "prepare"))
            crs = ref.crs_id
        return crs

    # -- stages ------------------------------------------------------------

    def prepare(self) -> StageStatus:
        cfg = self.cfg
        if not cfg.reference:
            raise ConfigError("no reference input configured")
        ref_path = Path(cfg.reference)
        if not ref_path.exists():
            raise MissingInputError(f"reference input not found: {ref_path}")
        deps = [ref_path]
        sidecar = Path(str(ref_path) + ".c3dl")
        if cfg.reference_kind == "pointcloud" and sidecar.exists():
            deps.append(sidecar)
        params = {
            "kind": cfg.reference_kind,
            "crs": cfg.crs,
            "reference_crs": cfg.reference_crs,
            "gsd": cfg.gsd,
            "conf_threshold": cfg.conf_threshold,
        }
        ih = self._input_hash("prepare", deps, params)
        hit = self._cached("prepare", ih)
        if hit:
            return hit

        outputs: list[str] = []
        if cfg.reference_kind == "dsm":
            ref = read_geotiff(ref_path)
            if cfg.crs and ref.crs_id and cfg.crs != ref.crs_id:
                raise ConfigError(
                    f"working CRS {cfg.crs} differs from the reference raster's "
                    f"{ref.crs_id}; raster reprojection is not supported"
                )
            if cfg.gsd and abs(cfg.gsd - ref.gsd_x) > 1e-9:
                raise ConfigError(
                    f"configured gsd {cfg.gsd} does not match the reference raster's {ref.gsd_x}"
                )
            write_geotiff(ref, self._p("ref_dsm.tif"))
            outputs.append("ref_dsm.tif")
            crs = ref.crs_id or cfg.crs
            gsd = ref.gsd_x
        else:
            crs = cfg.crs or None
            cloud = load_point_cloud(ref_path, target_crs=crs, source_crs=cfg.reference_crs or None)
            crs = cloud.crs_id
            gsd = cfg.gsd or estimate_anps(cloud)
            dsm = rasterize_max_dsm(cloud, gsd)
            write_geotiff(dsm, self._p("ref_dsm.tif"))
            outputs.append("ref_dsm.tif")
            try:
                dtm = rasterize_min_dtm(cloud, gsd, grid=dsm)
                write_geotiff(dtm, self._p("ref_dtm.tif"))
                outputs.append("ref_dtm.tif")
            except RasterError as e:
                log.warning("terrain model skipped: %s", e)
            masks = build_masks(cloud, dsm, cfg.conf_threshold)
            write_geotiff(masks.building, self._p("mask_building.tif"))
            write_geotiff(masks.ground, self._p("mask_ground.tif"))
            outputs.extend(["mask_building.tif", "mask_ground.tif"])
        self.manifest.set_meta(crs=crs, gsd=gsd)
        return self._finish("prepare", ih, outputs)

    def align(self) -> StageStatus:
        cfg = self.cfg
        if not cfg.test:
            raise ConfigError("no test input configured")
        test_path = Path(cfg.test)
        if not test_path.exists():
            raise MissingInputError(f"test input not found: {test_path}")
        ref_file = self._require("ref_dsm.tif", "prepare")
        deps = [ref_file, test_path]
        side = Path(str(test_path) + ".c3dl")
        if cfg.test_kind == "pointcloud" and side.exists():
            deps.append(side)
        params = {
            "kind": cfg.test_kind,
            "test_crs": cfg.test_crs,
            "window_px": cfg.window_px,
            "valid_frac_min": cfg.valid_frac_min,
            "manual": [cfg.manual_dx, cfg.manual_dy, cfg.manual_dz],
        }
        ih = self._input_hash("align", deps, params)
        hit = self._cached("align", ih)
        if hit:
            return hit

        ref = read_geotiff(ref_file)
        crs = ref.crs_id or self._working_crs()
        if cfg.test_kind == "pointcloud":
            cloud = load_point_cloud(test_path, target_crs=crs, source_crs=cfg.test_crs or None)
            raw = rasterize_max_dsm(cloud, ref.gsd_x, grid=ref)
        elif cfg.test_kind == "dsm":
            t = read_geotiff(test_path)
            if t.crs_id and crs and t.crs_id != crs:
                raise ConfigError(
                    f"test raster CRS {t.crs_id} differs from working CRS {crs}; "
                    "raster reprojection is not supported"
                )
            raw = t if t.same_grid(ref) else resample_to_grid(t, ref)
        else:  # mesh
            mesh = read_obj(test_path, crs_id=cfg.test_crs or crs)
            raw = rasterize_mesh(mesh, ref.gsd_x, grid=ref)
        write_geotiff(raw, self._p("test_dsm_raw.tif"))

        if cfg.manual_dx is not None:
            alignment = GlobalAlignment(
                dx_m=float(cfg.manual_dx),
                dy_m=float(cfg.manual_dy),
                dz_m=float(cfg.manual_dz),
                windows=(),
            )
            mode = "manual"
        else:
            alignment = global_align(raw, ref, cfg.window_px, cfg.valid_frac_min)
            mode = "phase_correlation"
        aligned = apply_alignment(raw, alignment)
        write_geotiff(aligned, self._p("test_dsm_aligned.tif"))
        _write_json(
            self._p("alignment.json"),
            {"mode": mode, **alignment.as_dict()},
        )
        return self._finish(
            "align", ih, ["test_dsm_raw.tif", "test_dsm_aligned.tif", "alignment.json"]
        )

    def footprints(self) -> StageStatus:
        cfg = self.cfg
        src = cfg.footprints_source
        ref_file = self._require("ref_dsm.tif", "prepare")
        deps = [ref_file]
        params = {
            "source": src,
            "min_area_m2": cfg.min_area_m2,
            "dp_epsilon": cfg.dp_epsilon,
            "align": cfg.align_footprints,
            "search_radius_px": cfg.search_radius_px,
            "osm_endpoint": cfg.osm_endpoint if src == "osm" else "",
        }
        have_masks = self._p("mask_building.tif").exists() and self._p("mask_ground.tif").exists()
        if src == "lidar":
            deps.append(self._require("mask_building.tif", "prepare"))
        elif src == "osm":
            pass  # network or cache; the query parameters hash below
        else:
            p = Path(src)
            if not p.exists():
                raise MissingInputError(f"footprints GeoJSON not found: {p}")
            deps.append(p)
        if cfg.align_footprints and have_masks and src != "lidar":
            deps.extend([self._p("mask_building.tif"), self._p("mask_ground.tif")])

        if src == "osm":
            ref = read_geotiff(ref_file)
            bbox = _lonlat_bbox(ref)
            params["bbox"] = [round(v, 8) for v in bbox]
            cache_file = None
            if cfg.osm_cache:
                from .osm import _cache_path, overpass_query

                cache_file = Path(_cache_path(cfg.osm_cache, cfg.osm_endpoint, overpass_query(bbox)))
                if cache_file.exists():
                    deps.append(cache_file)
        ih = self._input_hash("footprints", deps, params)
        hit = self._cached("footprints", ih)
        if hit:
            return hit

        crs = self._working_crs()
        if src == "lidar":
            mask = read_geotiff(self._p("mask_building.tif"))
            eps = cfg.dp_epsilon or mask.gsd_x
            fps = polygonize_mask(mask, cfg.min_area_m2, eps)
        elif src == "osm":
            ref = read_geotiff(ref_file)
            fps = fetch_osm_footprints(
                _lonlat_bbox(ref),
                target_crs=crs,
                endpoint=cfg.osm_endpoint,
                cache_dir=cfg.osm_cache or None,
            )
        else:
            fps = load_footprints_geojson(src, target_crs=crs)

        if src != "lidar" and cfg.align_footprints:
            if have_masks:
                masks = _read_masks(self._p("mask_building.tif"), self._p("mask_ground.tif"))
                fps = align_footprints(fps, masks, cfg.search_radius_px)
            else:
                log.info(
                    "footprint alignment skipped: no segmentation masks "
                    "(reference was not a labeled point cloud)"
                )
        save_footprints_geojson(fps, self._p("footprints.geojson"))
        return self._finish("footprints", ih, ["footprints.geojson"])

    def regions(self) -> StageStatus:
        cfg = self.cfg
        fp_file = self._require("footprints.geojson", "footprints")
        ref_file = self._require("ref_dsm.tif", "prepare")
        params = {
            "max_centroid_dist": cfg.max_centroid_dist,
            "angle_tol_deg": cfg.angle_tol_deg,
            "max_orth_dist": cfg.max_orth_dist,
            "min_overlap": cfg.min_overlap,
            "depth_floor": cfg.depth_floor,
        }
        ih = self._input_hash("regions", [fp_file, ref_file], params)
        hit = self._cached("regions", ih)
        if hit:
            return hit

        ref = read_geotiff(ref_file)
        crs = ref.crs_id or self._working_crs()
        fps = load_footprints_geojson(fp_file, target_crs=crs)
        rc = RegionConfig(
            max_centroid_dist=cfg.max_centroid_dist,
            angle_tol_deg=cfg.angle_tol_deg,
            max_orth_dist=cfg.max_orth_dist,
            min_overlap=cfg.min_overlap,
            depth_floor=cfg.depth_floor or ref.gsd_x,
        )
        regs = build_all_regions(fps, rc, threads=cfg.threads)
        features = []
        for idx, reg in enumerate(regs):
            for role, rect in (
                ("center", reg.center),
                ("building_a", reg.region_a),
                ("building_b", reg.region_b),
            ):
                features.append(
                    {
                        "type": "Feature",
                        "geometry": _rect_geometry(rect, crs),
                        "properties": {
                            "region": idx,
                            "role": role,
                            "id_a": reg.pair.id_a,
                            "id_b": reg.pair.id_b,
                            "centroid_distance_m": reg.pair.centroid_distance,
                            "d_m": reg.d,
                            "overlap_m": reg.overlap,
                            "rect": _rect_props(rect),
                        },
                    }
                )
        doc = {"type": "FeatureCollection", "features": features}
        with open(self._p("regions.geojson"), "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        log.info("regions: %d evaluation regions from %d footprints", len(regs), len(fps))
        return self._finish("regions", ih, ["regions.geojson"])

    def _load_regions(self, path: Path) -> list[EvaluationRegion]:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        groups: dict[int, dict] = {}
        for feat in doc.get("features", []):
            pr = feat.get("properties", {})
            groups.setdefault(int(pr["region"]), {})[pr["role"]] = pr
        out: list[EvaluationRegion] = []
        for idx in sorted(groups):
            g = groups[idx]
            c = g["center"]
            out.append(
                EvaluationRegion(
                    pair=BuildingPair(
                        _parse_id(c["id_a"]), _parse_id(c["id_b"]), float(c["centroid_distance_m"])
                    ),
                    center=_rect_from_props(c["rect"]),
                    region_a=_rect_from_props(g["building_a"]["rect"]),
                    region_b=_rect_from_props(g["building_b"]["rect"]),
                    d=float(c["d_m"]),
                    overlap=float(c["overlap_m"]),
                )
            )
        return out

    def ctf(self) -> StageStatus:
        cfg = self.cfg
        ref_file = self._require("ref_dsm.tif", "prepare")
        test_file = self._require("test_dsm_aligned.tif", "align")
        reg_file = self._require("regions.geojson", "regions")
        params = {
            "min_region_samples": cfg.min_region_samples,
            "ref_ctf_min": cfg.ref_ctf_min,
        }
        ih = self._input_hash("ctf", [ref_file, test_file, reg_file], params)
        hit = self._cached("ctf", ih)
        if hit:
            return hit

        ref = read_geotiff(ref_file)
        test = read_geotiff(test_file)
        regs = self._load_regions(reg_file)
        crs = ref.crs_id or self._working_crs()

        records = parallel_map(
            lambda rg: compute_ctf(test, ref, rg, cfg.min_region_samples),
            regs,
            threads=cfg.threads,
        )
        records = filter_records(records, cfg.ref_ctf_min)

        features = []
        rows = []
        for idx, rec in enumerate(records):
            reg = rec.region
            props = {
                "region": idx,
                "id_a": reg.pair.id_a,
                "id_b": reg.pair.id_b,
                "d_m": rec.d,
                "c_test": rec.c_test,
                "c_ref": rec.c_ref,
                "valid": rec.valid,
                "reason": rec.reason,
                "n_test": list(rec.n_test),
                "n_ref": list(rec.n_ref),
            }
            if rec.levels_test is not None:
                props["levels_test"] = dataclasses.asdict(rec.levels_test)
                props["levels_ref"] = dataclasses.asdict(rec.levels_ref)
            features.append(
                {
                    "type": "Feature",
                    "geometry": _rect_geometry(reg.center, crs),
                    "properties": props,
                }
            )
            rows.append(
                [
                    idx,
                    reg.pair.id_a,
                    reg.pair.id_b,
                    repr(rec.d),
                    repr(rec.c_test),
                    repr(rec.c_ref),
                    str(rec.valid).lower(),
                    rec.reason,
                    *rec.n_test,
                    *rec.n_ref,
                ]
            )
        with open(self._p("ctf_records.geojson"), "w", encoding="utf-8") as f:
            json.dump({"type": "FeatureCollection", "features": features}, f, sort_keys=True,
                      separators=(",", ":"))
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(_RECORD_FIELDS)
        wr.writerows(rows)
        self._p("ctf_records.csv").write_text(buf.getvalue(), encoding="utf-8")

        summary: dict = {"n_regions": len(records), "counts": reason_counts(records)}
        try:
            va = vertical_accuracy(test, ref)
            summary["vertical_accuracy"] = dataclasses.asdict(va)
        except MetricsError as e:
            log.warning("vertical accuracy unavailable: %s", e)
            summary["vertical_accuracy"] = None
        _write_json(self._p("ctf_summary.json"), summary)
        return self._finish(
            "ctf", ih, ["ctf_records.geojson", "ctf_records.csv", "ctf_summary.json"]
        )

    def _load_records_csv(self, path: Path) -> list[CtfRecord]:
        out: list[CtfRecord] = []
        with open(path, "r", encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                out.append(
                    CtfRecord(
                        d=float(row["d_m"]),
                        c_test=float(row["c_test"]),
                        c_ref=float(row["c_ref"]),
                        valid=row["valid"] == "true",
                        reason=row["reason"],
                        levels_test=None,
                        levels_ref=None,
                        n_test=(int(row["n_test_a1"]), int(row["n_test_a2"]), int(row["n_test_b"])),
                        n_ref=(int(row["n_ref_a1"]), int(row["n_ref_a2"]), int(row["n_ref_b"])),
                    )
                )
        return out

    def fit(self) -> StageStatus:
        cfg = self.cfg
        rec_file = self._require("ctf_records.csv", "ctf")
        params = {"threshold": cfg.threshold}
        ih = self._input_hash("fit", [rec_file], params)
        hit = self._cached("fit", ih)
        if hit:
            return hit

        records = self._load_records_csv(rec_file)
        fit = fit_ctf_model(records)
        out = {
            "amplitude": fit.amplitude,
            "sigma_m": fit.sigma_m,
            "residual_rms": fit.residual_rms,
            "n_points": fit.n_points,
            "converged": fit.converged,
            "poorly_constrained": fit.poorly_constrained,
            "threshold": cfg.threshold,
            "counts": reason_counts(records),
        }
        try:
            out["d_star_m"] = threshold_distance(fit, cfg.threshold)
            out["threshold_unreachable"] = False
        except ValueError as e:
            log.warning("threshold crossing undefined: %s", e)
            out["d_star_m"] = None
            out["threshold_unreachable"] = True
        _write_json(self._p("fit.json"), out)
        return self._finish("fit", ih, ["fit.json"])

    def report(self) -> StageStatus:
        cfg = self.cfg
        rec_file = self._require("ctf_records.csv", "ctf")
        fit_file = self._require("fit.json", "fit")
        summary_file = self._require("ctf_summary.json", "ctf")
        params = {"log_x": cfg.log_x}
        ih = self._input_hash("report", [rec_file, fit_file, summary_file], params)
        hit = self._cached("report", ih)
        if hit:
            return hit

        records = self._load_records_csv(rec_file)
        with open(fit_file, "r", encoding="utf-8") as f:
            fit_doc = json.load(f)
        from .ctf import CtfModelFit

        fit = CtfModelFit(
            amplitude=fit_doc["amplitude"],
            sigma_m=fit_doc["sigma_m"],
            residual_rms=fit_doc["residual_rms"],
            n_points=fit_doc["n_points"],
            converged=fit_doc["converged"],
            poorly_constrained=fit_doc["poorly_constrained"],
        )
        svg = render_ctf_plot(records, fit, fit_doc["threshold"], fit_doc.get("d_star_m"), cfg.log_x)
        self._p("report.svg").write_text(svg, encoding="utf-8")

        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["d_m", "c_test", "c_ref", "valid", "reason"])
        for r in records:
            wr.writerow([repr(r.d), repr(r.c_test), repr(r.c_ref), str(r.valid).lower(), r.reason])
        self._p("report_points.csv").write_text(buf.getvalue(), encoding="utf-8")

        with open(summary_file, "r", encoding="utf-8") as f:
            summary = json.load(f)
        _write_json(
            self._p("report.json"),
            {
                "fit": fit_doc,
                "vertical_accuracy": summary.get("vertical_accuracy"),
                "counts": summary.get("counts"),
                "n_regions": summary.get("n_regions"),
            },
        )
        return self._finish("report", ih, ["report.svg", "report_points.csv", "report.json"])

    def run_all(self) -> list[StageStatus]:
        return [
            self.prepare(),
            self.align(),
            self.footprints(),
            self.regions(),
            self.ctf(),
            self.fit(),
            self.report(),
        ]


def _read_masks(bpath: Path, gpath: Path):
    from .footprints import MaskPair

    return MaskPair(building=read_geotiff(bpath), ground=read_geotiff(gpath))


def _lonlat_bbox(r: Raster) -> tuple[float, float, float, float]:
    from .crs import transform_points

    minx, miny, maxx, maxy = r.extent()
    corners = np.array(
        [[minx, miny], [minx, maxy], [maxx, miny], [maxx, maxy]], dtype=np.float64
    )
    ll = transform_points(corners, r.crs_id, "EPSG:4326")
    return (
        float(ll[:, 0].min()),
        float(ll[:, 1].min()),
        float(ll[:, 0].max()),
        float(ll[:, 1].max()),
    )


# ---------------------------------------------------------------------------
# Synthetic target generation
# ---------------------------------------------------------------------------


def synth_tribar(
    out_dir,
    gsd: float = 0.25,
    n_levels: int = 4,
    bar_width: float = 0.3,
    gap: float = 0.3,
    bar_height: float = 10.0,
    n_bars: int = 3,
    n_groups: int = 13,
    gap_scale: float = 1.32,
) -> dict[str, list[str]]:
    """Write the bar-target raster at native resolution, n_levels successive
    2x coarsenings, and the exact footprints. Returns the written names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ras, fps = generate_tribar(
        gsd,
        bar_width=bar_width,
        gap=gap,
        bar_height=bar_height,
        n_bars=n_bars,
        n_groups=n_groups,
        gap_scale=gap_scale,
    )
    rasters = []
    name = f"tribar_gsd{ras.gsd_x:g}.tif"
    write_geotiff(ras, out / name)
    rasters.append(name)
    cur = ras
    for _ in range(n_levels):
        cur = downsample2(cur)
        name = f"tribar_gsd{cur.gsd_x:g}.tif"
        write_geotiff(cur, out / name)
        rasters.append(name)
    save_footprints_geojson(fps, out / "tribar_footprints.geojson")
    return {"rasters": rasters, "footprints": ["tribar_footprints.geojson"]}


def run_locked(config: PipelineConfig, fn_name: str):
    """Run one pipeline stage (or 'run_all' / named stage) under the output
    lock."""
    pipe = Pipeline(config)
    with _Lock(pipe.out):
        fn = getattr(pipe, fn_name)
        return fn()
