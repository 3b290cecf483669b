"""Command-line interface. Every pipeline stage is a subcommand; `run`
chains them all. Exit codes: 0 ok, 2 configuration problems, 3 missing
inputs, 4 numerical failures (alignment or fit)."""

from __future__ import annotations

import logging
import sys

import click

from . import __version__
from .alignment import AlignmentError
from .ctf import FitError, MetricsError
from .footprints import FootprintError
from .geotiff import GeoTiffError
from .lasio import LasParseError
from .osm import OsmError
from .pipeline import (
    ConfigError,
    MissingInputError,
    PipelineConfig,
    load_config,
    run_locked,
    synth_tribar,
)
from .pointcloud import PointCloudError
from .raster import RasterError
from .util import setup_logging

log = logging.getLogger(__name__)

_CONFIG_ERRORS = (ConfigError, PointCloudError, LasParseError, GeoTiffError, FootprintError)
_NUMERIC_ERRORS = (AlignmentError, FitError, MetricsError, RasterError, OsmError)


def _run_stage(ctx: click.Context, stage: str, extra: dict) -> None:
    overrides = dict(ctx.obj["overrides"])
    overrides.update({k: v for k, v in extra.items() if v is not None})
    try:
        cfg = load_config(ctx.obj["config_path"], overrides)
        result = run_locked(cfg, stage)
    except MissingInputError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(3)
    except _CONFIG_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except _NUMERIC_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(4)
    statuses = result if isinstance(result, list) else [result]
    for st in statuses:
        state = "skipped (cached)" if st.skipped else "ok"
        click.echo(f"{st.name}: {state}" + (f" [{', '.join(st.outputs)}]" if st.outputs else ""))


@click.group()
@click.version_option(__version__, prog_name="ctf3d")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML config file; command-line options override it.")
@click.option("--out-dir", default=None, help="Output directory for all stage products.")
@click.option("--threads", type=int, default=None, help="Worker threads for region evaluation.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx, config_path, out_dir, threads, verbose):
    """Horizontal-resolution evaluation of 3D surface products against
    airborne lidar."""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = {"out_dir": out_dir, "threads": threads}


def _io_options(fn):
    fn = click.option("--reference", default=None, help="Reference file (LAS/LAZ or GeoTIFF).")(fn)
    fn = click.option("--reference-kind", default=None,
                      type=click.Choice(["pointcloud", "dsm"]), help="Reference input type.")(fn)
    fn = click.option("--reference-crs", default=None,
                      help="CRS of the reference when the file carries none (EPSG:xxxx).")(fn)
    fn = click.option("--crs", default=None, help="Working CRS (EPSG:xxxx).")(fn)
    fn = click.option("--gsd", type=float, default=None,
                      help="Grid size in meters (default: from reference point spacing).")(fn)
    return fn


@main.command()
@_io_options
@click.option("--conf-threshold", type=float, default=None,
              help="Minimum label confidence for the building mask.")
@click.pass_context
def prepare(ctx, reference, reference_kind, reference_crs, crs, gsd, conf_threshold):
    """Grid the reference into surface/terrain rasters and class masks."""
    _run_stage(ctx, "prepare", {
        "reference": reference, "reference_kind": reference_kind,
        "reference_crs": reference_crs, "crs": crs, "gsd": gsd,
        "conf_threshold": conf_threshold,
    })


@main.command()
@click.option("--test", default=None, help="Test file (LAS/LAZ, GeoTIFF, or OBJ mesh).")
@click.option("--test-kind", default=None, type=click.Choice(["pointcloud", "dsm", "mesh"]),
              help="Test input type.")
@click.option("--test-crs", default=None, help="CRS of the test data when the file carries none.")
@click.option("--window-px", type=int, default=None, help="Correlation window size in cells.")
@click.option("--valid-frac-min", type=float, default=None,
              help="Minimum valid-cell fraction for a correlation window.")
@click.option("--manual-dx", type=float, default=None, help="Skip correlation; shift east (m).")
@click.option("--manual-dy", type=float, default=None, help="Skip correlation; shift north (m).")
@click.option("--manual-dz", type=float, default=None, help="Skip correlation; shift up (m).")
@click.pass_context
def align(ctx, test, test_kind, test_crs, window_px, valid_frac_min,
          manual_dx, manual_dy, manual_dz):
    """Grid the test data onto the reference grid and register it."""
    _run_stage(ctx, "align", {
        "test": test, "test_kind": test_kind, "test_crs": test_crs,
        "window_px": window_px, "valid_frac_min": valid_frac_min,
        "manual_dx": manual_dx, "manual_dy": manual_dy, "manual_dz": manual_dz,
    })


@main.command()
@click.option("--source", "footprints_source", default=None,
              help="'lidar', 'osm', or a path to a GeoJSON file.")
@click.option("--min-area", "min_area_m2", type=float, default=None,
              help="Smallest building footprint to keep (m^2).")
@click.option("--dp-epsilon", type=float, default=None,
              help="Outline simplification tolerance in meters (default: one cell).")
@click.option("--no-align", "align_footprints", flag_value=False, default=None,
              help="Keep external footprints where they are.")
@click.option("--search-radius-px", type=int, default=None,
              help="Mask-alignment search radius in cells.")
@click.option("--osm-endpoint", default=None, help="Overpass API endpoint.")
@click.option("--osm-cache", default=None, help="Directory for cached Overpass responses.")
@click.pass_context
def footprints(ctx, footprints_source, min_area_m2, dp_epsilon, align_footprints,
               search_radius_px, osm_endpoint, osm_cache):
    """Produce building footprints from the masks, OSM, or a file."""
    _run_stage(ctx, "footprints", {
        "footprints_source": footprints_source, "min_area_m2": min_area_m2,
        "dp_epsilon": dp_epsilon, "align_footprints": align_footprints,
        "search_radius_px": search_radius_px, "osm_endpoint": osm_endpoint,
        "osm_cache": osm_cache,
    })


@main.command()
@click.option("--max-centroid-dist", type=float, default=None,
              help="Largest centroid separation for a building pair (m).")
@click.option("--angle-tol-deg", type=float, default=None,
              help="Largest wall-direction difference for a pair (deg).")
@click.option("--max-orth-dist", type=float, default=None, help="Largest wall gap evaluated (m).")
@click.option("--min-overlap", type=float, default=None, help="Shortest usable wall overlap (m).")
@click.pass_context
def regions(ctx, max_centroid_dist, angle_tol_deg, max_orth_dist, min_overlap):
    """Find parallel-wall evaluation regions between footprint pairs."""
    _run_stage(ctx, "regions", {
        "max_centroid_dist": max_centroid_dist, "angle_tol_deg": angle_tol_deg,
        "max_orth_dist": max_orth_dist, "min_overlap": min_overlap,
    })


@main.command()
@click.option("--min-region-samples", type=int, default=None,
              help="Fewest raster samples per rectangle.")
@click.option("--ref-ctf-min", type=float, default=None,
              help="Reference contrast a region must exceed to count.")
@click.pass_context
def ctf(ctx, min_region_samples, ref_ctf_min):
    """Measure test and reference contrast over every region."""
    _run_stage(ctx, "ctf", {
        "min_region_samples": min_region_samples, "ref_ctf_min": ref_ctf_min,
    })


@main.command()
@click.option("--threshold", type=float, default=None,
              help="Contrast level defining the resolved/unresolved boundary.")
@click.pass_context
def fit(ctx, threshold):
    """Fit the contrast falloff model and solve for the crossing distance."""
    _run_stage(ctx, "fit", {"threshold": threshold})


@main.command()
@click.option("--log-x", is_flag=True, default=None, help="Logarithmic gap-width axis.")
@click.pass_context
def report(ctx, log_x):
    """Render the contrast plot and summary files."""
    _run_stage(ctx, "report", {"log_x": log_x})


@main.command()
@_io_options
@click.option("--test", default=None, help="Test file (LAS/LAZ, GeoTIFF, or OBJ mesh).")
@click.option("--test-kind", default=None, type=click.Choice(["pointcloud", "dsm", "mesh"]))
@click.option("--test-crs", default=None)
@click.option("--source", "footprints_source", default=None,
              help="'lidar', 'osm', or a path to a GeoJSON file.")
@click.option("--threshold", type=float, default=None)
@click.option("--max-orth-dist", type=float, default=None)
@click.option("--log-x", is_flag=True, default=None)
@click.pass_context
def run(ctx, reference, reference_kind, reference_crs, crs, gsd, test, test_kind,
        test_crs, footprints_source, threshold, max_orth_dist, log_x):
    """Run every stage in order."""
    _run_stage(ctx, "run_all", {
        "reference": reference, "reference_kind": reference_kind,
        "reference_crs": reference_crs, "crs": crs, "gsd": gsd,
        "test": test, "test_kind": test_kind, "test_crs": test_crs,
        "footprints_source": footprints_source, "threshold": threshold,
        "max_orth_dist": max_orth_dist, "log_x": log_x,
    })


@main.command("synth-tribar")
@click.option("--out-dir", default="tribar_out", show_default=True)
@click.option("--gsd", type=float, default=0.25, show_default=True,
              help="Native grid size of the finest raster (m).")
@click.option("--levels", type=int, default=4, show_default=True,
              help="Number of successive 2x coarsenings to emit.")
@click.option("--gap", type=float, default=0.3, show_default=True,
              help="Smallest gap width (m); bars match the gap per group.")
@click.option("--gap-scale", type=float, default=1.32, show_default=True,
              help="Gap growth factor between groups.")
@click.option("--n-groups", type=int, default=13, show_default=True)
@click.option("--bar-height", type=float, default=10.0, show_default=True)
def synth_tribar_cmd(out_dir, gsd, levels, gap, gap_scale, n_groups, bar_height):
    """Write synthetic bar-target rasters plus exact footprints."""
    try:
        written = synth_tribar(
            out_dir, gsd=gsd, n_levels=levels, bar_width=gap, gap=gap,
            bar_height=bar_height, n_groups=n_groups, gap_scale=gap_scale,
        )
    except (RasterError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    for name in written["rasters"] + written["footprints"]:
        click.echo(f"wrote {out_dir}/{name}")


if __name__ == "__main__":
    main()
