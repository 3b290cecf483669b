"""Regular-grid elevation rasters and the operations that produce them:
max-z surface gridding, min-z ground gridding with Laplace infill, mesh
rasterization, bilinear resampling, 2x downsampling, and the synthetic
bar-pattern resolution target.

Grids are north-up: gsd_x > 0, gsd_y < 0, (origin_x, origin_y) is the outer
corner of cell (row 0, col 0). Cell (col c, row r) has center
(origin_x + (c+0.5)*gsd_x, origin_y + (r+0.5)*gsd_y). Values are float64 with
a finite nodata sentinel; rasters are treated as immutable once built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geom import OrientedRect, Point2, Polygon

log = logging.getLogger(__name__)

DEFAULT_NODATA = -9999.0


class RasterError(Exception):
    pass


@dataclass
class Raster:
    values: np.ndarray
    origin_x: float
    origin_y: float
    gsd_x: float
    gsd_y: float
    crs_id: str
    nodata: float = DEFAULT_NODATA

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise RasterError(f"raster values must be 2D and non-empty, got shape {v.shape}")
        if not (self.gsd_x > 0):
            raise RasterError("gsd_x must be positive")
        if not (self.gsd_y < 0):
            raise RasterError("gsd_y must be negative (north-up)")
        if not math.isfinite(self.nodata):
            raise RasterError("nodata must be finite")
        valid = v != self.nodata
        if not np.all(np.isfinite(v[valid])):
            raise RasterError("raster contains non-finite values outside nodata")
        v.setflags(write=False)
        self.values = v

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values != self.nodata

    def extent(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy) of the outer grid edges."""
        return (
            self.origin_x,
            self.origin_y + self.height * self.gsd_y,
            self.origin_x + self.width * self.gsd_x,
            self.origin_y,
        )

    def cell_center(self, col: float, row: float) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.gsd_x,
            self.origin_y + (row + 0.5) * self.gsd_y,
        )

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(col, row) of the cell containing (x, y); edges belong to the
        higher-index cell."""
        return (
            int(math.floor((x - self.origin_x) / self.gsd_x)),
            int(math.floor((y - self.origin_y) / self.gsd_y)),
        )

    def same_grid(self, other: "Raster", tol: float = 1e-9) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and abs(self.origin_x - other.origin_x) <= tol
            and abs(self.origin_y - other.origin_y) <= tol
            and abs(self.gsd_x - other.gsd_x) <= tol
            and abs(self.gsd_y - other.gsd_y) <= tol
        )

    def with_values(self, values: np.ndarray) -> "Raster":
        return Raster(
            np.array(values, dtype=np.float64),
            self.origin_x,
            self.origin_y,
            self.gsd_x,
            self.gsd_y,
            self.crs_id,
            self.nodata,
        )


def empty_grid(
    origin_x: float,
    origin_y: float,
    width: int,
    height: int,
    gsd: float,
    crs_id: str,
    nodata: float = DEFAULT_NODATA,
) -> Raster:
    vals = np.full((height, width), nodata, dtype=np.float64)
    return Raster(vals, origin_x, origin_y, gsd, -gsd, crs_id, nodata)


def grid_from_bounds(
    minx: float,
    miny: float,
    maxx: float,
    maxy: float,
    gsd: float,
    crs_id: str,
    pad_cells: int = 1,
) -> Raster:
    """Empty grid covering the bounds, origin snapped to gsd multiples."""
    if not (maxx > minx and maxy > miny):
        raise RasterError("degenerate bounds")
    ox = math.floor(minx / gsd) * gsd - pad_cells * gsd
    oy = math.ceil(maxy / gsd) * gsd + pad_cells * gsd
    width = int(math.ceil((maxx - ox) / gsd)) + pad_cells
    height = int(math.ceil((oy - miny) / gsd)) + pad_cells
    if width * height > 1e8:
        raise RasterError(f"grid too large: {width} x {height}")
    return empty_grid(ox, oy, width, height, gsd, crs_id)


# ---------------------------------------------------------------------------
# Point-cloud gridding
# ---------------------------------------------------------------------------


def estimate_anps(cloud) -> float:
    """Average nominal point spacing: sqrt(bbox area / point count), withheld
    points excluded."""
    xyz = cloud.xyz[~cloud.withheld]
    if xyz.shape[0] < 2:
        raise RasterError("too few points to estimate point spacing")
    dx = float(xyz[:, 0].max() - xyz[:, 0].min())
    dy = float(xyz[:, 1].max() - xyz[:, 1].min())
    area = dx * dy
    if area <= 0:
        raise RasterError("degenerate point extent (zero-area bounding box)")
    return math.sqrt(area / xyz.shape[0])


def _scatter_extreme(
    grid: Raster, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray, maximum: bool, corner_smear: bool
) -> np.ndarray:
    """Scatter z values into grid cells taking max (or min); optionally smear
    each point to the cells containing its four half-cell-offset corners."""
    h, w = grid.height, grid.width
    init = -np.inf if maximum else np.inf
    acc = np.full(h * w, init, dtype=np.float64)
    half = 0.5 * grid.gsd_x
    offs = (
        [(-half, -half), (-half, half), (half, -half), (half, half)]
        if corner_smear
        else [(0.0, 0.0)]
    )
    for ox, oy in offs:
        cols = np.floor((xs + ox - grid.origin_x) / grid.gsd_x).astype(np.int64)
        rows = np.floor((ys + oy - grid.origin_y) / grid.gsd_y).astype(np.int64)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        flat = rows[ok] * w + cols[ok]
        if maximum:
            np.maximum.at(acc, flat, zs[ok])
        else:
            np.minimum.at(acc, flat, zs[ok])
    return acc.reshape(h, w)


def rasterize_max_dsm(cloud, gsd: float, grid: Optional[Raster] = None) -> Raster:
    """Max-z surface gridding. Each point is evaluated at the four corners of
    a gsd-sized square centered on it, so a point also raises neighboring
    cells it half-overlaps; withheld points are excluded."""
    keep = ~cloud.withheld
    if not keep.any():
        raise RasterError("no usable points (all withheld)")
    xyz = cloud.xyz[keep]
    if grid is None:
        grid = grid_from_bounds(
            float(xyz[:, 0].min()),
            float(xyz[:, 1].min()),
            float(xyz[:, 0].max()),
            float(xyz[:, 1].max()),
            gsd,
            cloud.crs_id,
        )
    acc = _scatter_extreme(grid, xyz[:, 0], xyz[:, 1], xyz[:, 2], maximum=True, corner_smear=True)
    vals = np.where(np.isfinite(acc), acc, grid.nodata)
    return grid.with_values(vals)


def rasterize_min_dtm(
    cloud,
    gsd: float,
    grid: Optional[Raster] = None,
    fill: bool = True,
    fill_tol: float = 1e-4,
    fill_max_iter: int = 10000,
) -> Raster:
    """Min-z gridding of ground-labeled points (same four-corner window as the
    surface gridding) followed by iterative Laplace interpolation of the
    unsampled cells."""
    from .pointcloud import ClassLabel

    keep = (~cloud.withheld) & (cloud.labels == int(ClassLabel.GROUND))
    if not keep.any():
        raise RasterError("no ground-labeled points; cannot build a terrain model")
    xyz = cloud.xyz[keep]
    if grid is None:
        grid = grid_from_bounds(
            float(xyz[:, 0].min()),
            float(xyz[:, 1].min()),
            float(xyz[:, 0].max()),
            float(xyz[:, 1].max()),
            gsd,
            cloud.crs_id,
        )
    acc = _scatter_extreme(grid, xyz[:, 0], xyz[:, 1], xyz[:, 2], maximum=False, corner_smear=True)
    known = np.isfinite(acc)
    if fill and not known.all():
        filled = _laplace_fill(np.where(known, acc, np.nan), known, fill_tol, fill_max_iter)
        return grid.with_values(filled)
    vals = np.where(known, acc, grid.nodata)
    return grid.with_values(vals)


def _laplace_fill(vals: np.ndarray, known: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Fill NaN cells: first flood outward from known cells (each new cell set
    to the mean of its already-filled 4-neighbors), then Jacobi-relax the free
    cells with known cells held fixed and zero-gradient borders."""
    h, w = vals.shape
    cur = vals.copy()
    filled = known.copy()
    while not filled.all():
        p = np.pad(cur, 1, constant_values=np.nan)
        stack = np.stack(
            [p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]]
        )
        have = ~np.isnan(stack)
        cnt = have.sum(axis=0)
        total = np.where(have, stack, 0.0).sum(axis=0)
        frontier = (~filled) & (cnt > 0)
        if not frontier.any():
            break
        cur[frontier] = total[frontier] / cnt[frontier]
        filled |= frontier
    free = ~known
    if free.any():
        for _ in range(max_iter):
            p = np.pad(cur, 1, mode="edge")
            nb = 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
            delta = np.abs(nb[free] - cur[free]).max()
            cur[free] = nb[free]
            if delta < tol:
                break
    return cur


# ---------------------------------------------------------------------------
# Triangle meshes
# ---------------------------------------------------------------------------


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (M, 3) int64 indices into vertices
    crs_id: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise RasterError("mesh vertices must be (N, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise RasterError("mesh faces must be (M, 3)")
        if not np.all(np.isfinite(v)):
            raise RasterError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise RasterError("mesh face index out of range")
        self.vertices = v
        self.faces = f


def read_obj(path, crs_id: str = "") -> TriangleMesh:
    """Wavefront OBJ reader covering the subset we need: v and f statements,
    polygon faces fan-triangulated, v/vt/vn index forms and negative
    (relative) indices accepted. Everything else is ignored."""
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []

    def vidx(token: str) -> int:
        raw = token.split("/", 1)[0]
        i = int(raw)
        if i < 0:
            i = len(verts) + 1 + i
        if not (1 <= i <= len(verts)):
            raise RasterError(f"OBJ face references vertex {raw} out of range")
        return i - 1

    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise RasterError(f"OBJ line {lineno}: vertex needs 3 coordinates")
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                idx = [vidx(t) for t in parts[1:]]
                if len(idx) < 3:
                    raise RasterError(f"OBJ line {lineno}: face needs 3+ vertices")
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not tris:
        raise RasterError(f"{path}: no triangles found")
    return TriangleMesh(
        np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64), crs_id
    )


def rasterize_mesh(mesh: TriangleMesh, gsd: float, grid: Optional[Raster] = None) -> Raster:
    """Max-z rasterization of a triangle mesh: each cell center covered by a
    face gets the face's interpolated height; overlapping faces keep the max."""
    v = mesh.vertices
    if grid is None:
        if v.shape[0] == 0:
            raise RasterError("empty mesh")
        grid = grid_from_bounds(
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
            gsd,
            mesh.crs_id,
        )
    h, w = grid.height, grid.width
    acc = np.full((h, w), -np.inf, dtype=np.float64)
    n_degenerate = 0
    for face in mesh.faces:
        p0, p1, p2 = v[face[0]], v[face[1]], v[face[2]]
        denom = (p1[1] - p2[1]) * (p0[0] - p2[0]) + (p2[0] - p1[0]) * (p0[1] - p2[1])
        if abs(denom) < 1e-12:
            n_degenerate += 1
            continue
        minx = min(p0[0], p1[0], p2[0])
        maxx = max(p0[0], p1[0], p2[0])
        miny = min(p0[1], p1[1], p2[1])
        maxy = max(p0[1], p1[1], p2[1])
        c0 = max(0, int(math.floor((minx - grid.origin_x) / grid.gsd_x - 0.5)))
        c1 = min(w - 1, int(math.ceil((maxx - grid.origin_x) / grid.gsd_x - 0.5)))
        r0 = max(0, int(math.floor((maxy - grid.origin_y) / grid.gsd_y - 0.5)))
        r1 = min(h - 1, int(math.ceil((miny - grid.origin_y) / grid.gsd_y - 0.5)))
        if c1 < c0 or r1 < r0:
            continue
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        cx = grid.origin_x + (cols + 0.5) * grid.gsd_x
        cy = grid.origin_y + (rows + 0.5) * grid.gsd_y
        gx, gy = np.meshgrid(cx, cy)
        l0 = ((p1[1] - p2[1]) * (gx - p2[0]) + (p2[0] - p1[0]) * (gy - p2[1])) / denom
        l1 = ((p2[1] - p0[1]) * (gx - p2[0]) + (p0[0] - p2[0]) * (gy - p2[1])) / denom
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12)
        z = l0 * p0[2] + l1 * p1[2] + l2 * p2[2]
        win = acc[r0 : r1 + 1, c0 : c1 + 1]
        win[inside] = np.maximum(win[inside], z[inside])
    if not np.isfinite(acc).any():
        log.warning(
            "mesh rasterization produced no coverage (%d faces, %d degenerate)",
            len(mesh.faces),
            n_degenerate,
        )
    vals = np.where(np.isfinite(acc), acc, grid.nodata)
    return grid.with_values(vals)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def resample_to_grid(src: Raster, target: Raster) -> Raster:
    """Bilinear resample of src onto target's grid. Cells outside src's
    center lattice, or touching nodata with nonzero weight, become nodata.
    Resampling a raster onto its own grid reproduces it exactly."""
    sminx, sminy, smaxx, smaxy = src.extent()
    tminx, tminy, tmaxx, tmaxy = target.extent()
    if tminx >= smaxx or tmaxx <= sminx or tminy >= smaxy or tmaxy <= sminy:
        log.warning("resample target extent is disjoint from source; output is all nodata")
        return target.with_values(np.full((target.height, target.width), target.nodata))

    cols = np.arange(target.width)
    rows = np.arange(target.height)
    cx = target.origin_x + (cols + 0.5) * target.gsd_x
    cy = target.origin_y + (rows + 0.5) * target.gsd_y
    px = (cx - src.origin_x) / src.gsd_x - 0.5
    py = (cy - src.origin_y) / src.gsd_y - 0.5
    # Snap to the lattice so an identity resample is exact.
    rpx = np.round(px)
    px = np.where(np.abs(px - rpx) < 1e-9, rpx, px)
    rpy = np.round(py)
    py = np.where(np.abs(py - rpy) < 1e-9, rpy, py)
    PX, PY = np.meshgrid(px, py)

    i0 = np.floor(PX).astype(np.int64)
    j0 = np.floor(PY).astype(np.int64)
    fx = PX - i0
    fy = PY - j0
    in_lattice = (PX >= 0) & (PX <= src.width - 1) & (PY >= 0) & (PY <= src.height - 1)
    i0c = np.clip(i0, 0, src.width - 1)
    j0c = np.clip(j0, 0, src.height - 1)
    i1c = np.clip(i0 + 1, 0, src.width - 1)
    j1c = np.clip(j0 + 1, 0, src.height - 1)

    sv = np.where(src.valid_mask, src.values, np.nan)
    v00 = sv[j0c, i0c]
    v01 = sv[j0c, i1c]
    v10 = sv[j1c, i0c]
    v11 = sv[j1c, i1c]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    total = np.zeros_like(PX)
    bad = ~in_lattice
    for wgt, val in ((w00, v00), (w01, v01), (w10, v10), (w11, v11)):
        use = wgt > 0
        contrib = np.where(use, wgt * val, 0.0)
        bad |= use & ~np.isfinite(val)
        total += contrib
    out = np.where(bad, target.nodata, total)
    return target.with_values(out)


def downsample2(r: Raster) -> Raster:
    """Halve resolution by averaging valid cells in each 2x2 block; blocks
    with no valid cell become nodata. For an all-valid even-dimension raster
    the global mean is preserved. Requires at least 2 cells per axis."""
    if r.width < 2 or r.height < 2:
        raise RasterError("raster too small to downsample (needs >= 2 cells per axis)")
    h2 = (r.height + 1) // 2
    w2 = (r.width + 1) // 2
    v = np.full((h2 * 2, w2 * 2), np.nan)
    v[: r.height, : r.width] = np.where(r.valid_mask, r.values, np.nan)
    blocks = v.reshape(h2, 2, w2, 2)
    have = ~np.isnan(blocks)
    cnt = have.sum(axis=(1, 3))
    total = np.where(have, blocks, 0.0).sum(axis=(1, 3))
    out = np.where(cnt > 0, total / np.maximum(cnt, 1), r.nodata)
    return Raster(out, r.origin_x, r.origin_y, r.gsd_x * 2, r.gsd_y * 2, r.crs_id, r.nodata)


# ---------------------------------------------------------------------------
# Rectangle sampling
# ---------------------------------------------------------------------------


def sample_rect(r: Raster, rect: OrientedRect) -> np.ndarray:
    """Valid values at cell centers inside the closed rectangle, in row-major
    grid order."""
    xs = [c.x for c in rect.corners()]
    ys = [c.y for c in rect.corners()]
    c0 = max(0, int(math.floor((min(xs) - r.origin_x) / r.gsd_x)) - 1)
    c1 = min(r.width - 1, int(math.ceil((max(xs) - r.origin_x) / r.gsd_x)) + 1)
    r0 = max(0, int(math.floor((max(ys) - r.origin_y) / r.gsd_y)) - 1)
    r1 = min(r.height - 1, int(math.ceil((min(ys) - r.origin_y) / r.gsd_y)) + 1)
    if c1 < c0 or r1 < r0:
        return np.empty(0, dtype=np.float64)
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    cx = r.origin_x + (cols + 0.5) * r.gsd_x
    cy = r.origin_y + (rows + 0.5) * r.gsd_y
    gx, gy = np.meshgrid(cx, cy)
    vx = gx - rect.center.x
    vy = gy - rect.center.y
    ax, ay = rect.axis.x, rect.axis.y
    u = vx * ax + vy * ay
    wvec = vx * (-ay) + vy * ax
    inside = (np.abs(u) <= rect.half_length) & (np.abs(wvec) <= rect.half_width)
    window = r.values[r0 : r1 + 1, c0 : c1 + 1]
    valid = window != r.nodata
    return window[inside & valid].astype(np.float64)


# ---------------------------------------------------------------------------
# Synthetic resolution target
# ---------------------------------------------------------------------------


def generate_tribar(
    gsd: float,
    bar_width: float = 0.3,
    gap: float = 0.3,
    bar_height: float = 10.0,
    n_bars: int = 3,
    n_groups: int = 13,
    gap_scale: float = 1.32,
    bar_length: float = 20.0,
    margin: float = 8.0,
    group_spacing: float = 35.0,
    crs_id: str = "EPSG:32611",
    origin: tuple[float, float] = (300000.0, 4000000.0),
):
    """Synthetic bar-pattern resolution target on a zero-elevation floor.

    Each group holds n_bars rectangular slabs of height bar_height; within a
    group the bar width equals that group's gap width, and both scale by
    gap_scale per group (classic tri-bar target proportions). Returns the
    raster and the exact slab footprints. Raster dimensions are padded to a
    multiple of 16 so repeated 2x downsampling stays aligned.
    """
    from .footprints import Footprint, FootprintSet

    if gsd <= 0 or bar_width <= 0 or gap <= 0 or bar_height <= 0:
        raise RasterError("tribar arguments must be positive")
    if n_bars < 2 or n_groups < 1 or gap_scale <= 0:
        raise RasterError("tribar needs >= 2 bars per group, >= 1 group, gap_scale > 0")

    ox, oy = origin
    # Lay out groups left to right in local coordinates (y measured down from oy).
    bars: list[tuple[float, float]] = []  # (x_left, width) per bar
    x = margin
    for g in range(n_groups):
        wg = bar_width * gap_scale**g
        gg = gap * gap_scale**g
        for b in range(n_bars):
            bars.append((x + b * (wg + gg), wg))
        x += n_bars * wg + (n_bars - 1) * gg + group_spacing
    total_w = x - group_spacing + margin
    total_h = 2 * margin + bar_length

    width = int(math.ceil(total_w / gsd))
    height = int(math.ceil(total_h / gsd))
    width += (-width) % 16
    height += (-height) % 16
    if width * height > 1e8:
        raise RasterError(f"tribar raster too large: {width} x {height}")

    vals = np.zeros((height, width), dtype=np.float64)
    col_x = (np.arange(width) + 0.5) * gsd  # local x of cell centers
    row_y = (np.arange(height) + 0.5) * gsd  # local y (down) of cell centers
    row_mask = (row_y >= margin) & (row_y < margin + bar_length)
    for x_left, wgt in bars:
        col_mask = (col_x >= x_left) & (col_x < x_left + wgt)
        vals[np.ix_(row_mask, col_mask)] = bar_height

    ras = Raster(vals, ox, oy, gsd, -gsd, crs_id)

    y_top = oy - margin
    y_bot = oy - margin - bar_length
    feats = []
    for i, (x_left, wgt) in enumerate(bars):
        xa = ox + x_left
        xb = ox + x_left + wgt
        ring = (
            Point2(xa, y_bot),
            Point2(xb, y_bot),
            Point2(xb, y_top),
            Point2(xa, y_top),
        )
        feats.append(Footprint(id=i, polygon=Polygon(ring), source="provided"))
    return ras, FootprintSet(features=feats, crs_id=crs_id)
