"""Horizontal-resolution evaluation of 3D surface products against airborne
lidar, using elevation contrast across parallel building walls."""

__version__ = "0.1.0"

from .alignment import GlobalAlignment, global_align, apply_alignment, phase_correlate
from .ctf import (
    CtfModelFit,
    CtfRecord,
    FitError,
    MetricsError,
    compute_ctf,
    ctf_model,
    filter_records,
    fit_ctf_model,
    threshold_distance,
    vertical_accuracy,
)
from .footprints import Footprint, FootprintSet, build_masks, polygonize_mask
from .geom import OrientedRect, Point2, Polygon, Segment
from .geotiff import read_geotiff, write_geotiff
from .pointcloud import ClassifiedPointCloud, ClassLabel, load_point_cloud, save_point_cloud
from .raster import (
    Raster,
    TriangleMesh,
    downsample2,
    estimate_anps,
    generate_tribar,
    rasterize_max_dsm,
    rasterize_mesh,
    rasterize_min_dtm,
    resample_to_grid,
)
from .regions import EvaluationRegion, RegionConfig, build_all_regions
from .pipeline import Pipeline, PipelineConfig, load_config, synth_tribar

__all__ = [
    "__version__",
    "ClassLabel",
    "ClassifiedPointCloud",
    "CtfModelFit",
    "CtfRecord",
    "EvaluationRegion",
    "FitError",
    "Footprint",
    "FootprintSet",
    "GlobalAlignment",
    "MetricsError",
    "OrientedRect",
    "Pipeline",
    "PipelineConfig",
    "Point2",
    "Polygon",
    "Raster",
    "RegionConfig",
    "Segment",
    "TriangleMesh",
    "apply_alignment",
    "build_all_regions",
    "build_masks",
    "compute_ctf",
    "ctf_model",
    "downsample2",
    "estimate_anps",
    "filter_records",
    "fit_ctf_model",
    "generate_tribar",
    "global_align",
    "load_config",
    "load_point_cloud",
    "phase_correlate",
    "polygonize_mask",
    "rasterize_max_dsm",
    "rasterize_mesh",
    "rasterize_min_dtm",
    "read_geotiff",
    "resample_to_grid",
    "save_point_cloud",
    "synth_tribar",
    "threshold_distance",
    "vertical_accuracy",
    "write_geotiff",
]
