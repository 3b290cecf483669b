"""Shared builders for the synthetic scenes the tests run on."""

from __future__ import annotations

import numpy as np

from ctf3d.footprints import Footprint, FootprintSet
from ctf3d.geom import Point2, Polygon
from ctf3d.pointcloud import ClassifiedPointCloud, ClassLabel
from ctf3d.raster import Raster

ORIGIN = (500000.0, 3900000.0)
CRS = "EPSG:32611"


def rect_ring(x0: float, y0: float, x1: float, y1: float) -> tuple[Point2, ...]:
    return (Point2(x0, y0), Point2(x1, y0), Point2(x1, y1), Point2(x0, y1))


def make_raster(values, gsd=1.0, origin=ORIGIN, crs=CRS, nodata=-9999.0) -> Raster:
    vals = np.asarray(values, dtype=np.float64)
    return Raster(vals, origin[0], origin[1], gsd, -gsd, crs, nodata)


def make_cloud(xyz, labels=None, confidence=None, withheld=None, crs=CRS) -> ClassifiedPointCloud:
    xyz = np.asarray(xyz, dtype=np.float64)
    n = xyz.shape[0]
    if labels is None:
        labels = np.full(n, int(ClassLabel.GROUND), dtype=np.uint8)
    if confidence is None:
        confidence = np.ones(n)
    if withheld is None:
        withheld = np.zeros(n, dtype=bool)
    return ClassifiedPointCloud(
        xyz=xyz,
        labels=np.asarray(labels, dtype=np.uint8),
        confidence=np.asarray(confidence, dtype=np.float64),
        withheld=np.asarray(withheld, dtype=bool),
        crs_id=crs,
    )


def two_building_scene(
    d=6.0,
    gsd=0.5,
    h1=12.0,
    h2=9.0,
    wall_len=30.0,
    depth=10.0,
    noise=0.0,
    seed=0,
    floor=0.0,
    margin=6.0,
):
    """Two rectangular slabs whose long walls face each other across a gap of
    width d (slabs extended in y, separated along x). Returns (raster,
    footprints)."""
    rng = np.random.default_rng(seed)
    ox, oy = ORIGIN
    total_w = 2 * margin + 2 * depth + d
    total_h = 2 * margin + wall_len
    w = int(np.ceil(total_w / gsd))
    h = int(np.ceil(total_h / gsd))
    vals = np.zeros((h, w)) + (noise * rng.standard_normal((h, w)) if noise else 0.0) + floor
    xs = (np.arange(w) + 0.5) * gsd  # local east offset of cell centers
    ys = (np.arange(h) + 0.5) * gsd  # local south offset of cell centers
    xa0, xa1 = margin, margin + depth
    xb0, xb1 = xa1 + d, xa1 + d + depth
    y0, y1 = margin, margin + wall_len
    in_y = (ys >= y0) & (ys < y1)
    for (x0, x1, hgt) in ((xa0, xa1, h1), (xb0, xb1, h2)):
        in_x = (xs >= x0) & (xs < x1)
        block = floor + hgt
        if noise:
            block = block + noise * rng.standard_normal((int(in_y.sum()), int(in_x.sum())))
        vals[np.ix_(in_y, in_x)] = block
    ras = make_raster(vals, gsd)
    feats = [
        Footprint(0, Polygon(rect_ring(ox + xa0, oy - y1, ox + xa1, oy - y0))),
        Footprint(1, Polygon(rect_ring(ox + xb0, oy - y1, ox + xb1, oy - y0))),
    ]
    return ras, FootprintSet(features=feats, crs_id=CRS)


def one_region(fps, **cfg_kwargs):
    """The single evaluation region a two-building scene produces."""
    from ctf3d.regions import RegionConfig, build_all_regions

    regs = build_all_regions(fps, RegionConfig(**cfg_kwargs))
    assert len(regs) == 1, f"expected exactly one region, got {len(regs)}"
    return regs[0]
