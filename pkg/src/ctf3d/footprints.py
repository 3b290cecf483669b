"""Building footprints: raster masks from labeled points, mask polygonization
(boundary tracing + ring simplification), footprint-to-mask alignment by
integer-shift scoring, and RFC 7946 GeoJSON round-tripping (coordinates are
written in lon/lat and converted to/from the working CRS).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .crs import transform_points
from .geom import Point2, Polygon, ring_signed_area, simplify_dp
from .raster import Raster

log = logging.getLogger(__name__)

FootprintId = Union[int, str]


class FootprintError(Exception):
    pass


@dataclass
class Footprint:
    id: FootprintId
    polygon: Polygon
    source: str = "provided"  # 'lidar' | 'osm' | 'provided'
    alignment_shift: tuple[float, float] = (0.0, 0.0)
    flag: Optional[str] = None


@dataclass
class FootprintSet:
    features: list[Footprint]
    crs_id: str = ""

    def __post_init__(self) -> None:
        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise FootprintError("footprint ids must be unique")

    def __len__(self) -> int:
        return len(self.features)

    def by_id(self, fid: FootprintId) -> Footprint:
        for f in self.features:
            if f.id == fid:
                return f
        raise KeyError(fid)


@dataclass
class MaskPair:
    building: Raster
    ground: Raster


# ---------------------------------------------------------------------------
# Masks from labeled points
# ---------------------------------------------------------------------------


def build_masks(cloud, grid: Raster, conf_threshold: float = 0.5) -> MaskPair:
    """Binary building/ground cell masks on the given grid. Building cells
    come from building-labeled points at or above the confidence threshold
    and are cleaned with a 3x3 morphological closing then opening; ground
    cells are used as-is (no confidence gate, no morphology). Withheld points
    are excluded from both."""
    from .pointcloud import ClassLabel

    h, w = grid.height, grid.width

    def cells_of(mask: np.ndarray) -> np.ndarray:
        out = np.zeros((h, w), dtype=bool)
        if not mask.any():
            return out
        xyz = cloud.xyz[mask]
        cols = np.floor((xyz[:, 0] - grid.origin_x) / grid.gsd_x).astype(np.int64)
        rows = np.floor((xyz[:, 1] - grid.origin_y) / grid.gsd_y).astype(np.int64)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        out[rows[ok], cols[ok]] = True
        return out

    keep = ~cloud.withheld
    bsel = keep & (cloud.labels == int(ClassLabel.BUILDING)) & (cloud.confidence >= conf_threshold)
    gsel = keep & (cloud.labels == int(ClassLabel.GROUND))
    if not bsel.any():
        log.warning("no building-labeled points above confidence %.2f; building mask is empty",
                    conf_threshold)
    braw = cells_of(bsel)
    if braw.any():
        padded = np.pad(braw, 2, constant_values=False)
        st = np.ones((3, 3), dtype=bool)
        cleaned = ndimage.binary_opening(ndimage.binary_closing(padded, structure=st), structure=st)
        braw = cleaned[2:-2, 2:-2]
    ground = cells_of(gsel)
    return MaskPair(
        building=grid.with_values(braw.astype(np.float64)),
        ground=grid.with_values(ground.astype(np.float64)),
    )


# ---------------------------------------------------------------------------
# Mask polygonization
# ---------------------------------------------------------------------------


def _component_rings(comp: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed corner-coordinate rings of a 4-connected pixel component.

    Directed boundary edges keep the filled region on the left in world
    orientation (rows increase southward), so exterior rings come out
    counter-clockwise and hole rings clockwise in world coordinates. At
    corners where two loop passes meet, the leftmost turn relative to the
    incoming direction is taken.
    """
    h, w = comp.shape
    # edge: (start corner) -> list of end corners; corner = (col, row)
    outgoing: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(a: tuple[int, int], b: tuple[int, int]) -> None:
        outgoing.setdefault(a, []).append(b)

    rs, cs = np.nonzero(comp)
    up = np.zeros_like(comp)
    up[1:, :] = comp[:-1, :]
    down = np.zeros_like(comp)
    down[:-1, :] = comp[1:, :]
    left = np.zeros_like(comp)
    left[:, 1:] = comp[:, :-1]
    right = np.zeros_like(comp)
    right[:, :-1] = comp[:, 1:]
    for r, c in zip(rs.tolist(), cs.tolist()):
        if not down[r, c]:  # south side exposed: west -> east
            add((c, r + 1), (c + 1, r + 1))
        if not right[r, c]:  # east side exposed: south -> north
            add((c + 1, r + 1), (c + 1, r))
        if not up[r, c]:  # north side exposed: east -> west
            add((c + 1, r), (c, r))
        if not left[r, c]:  # west side exposed: north -> south
            add((c, r), (c, r + 1))

    for ends in outgoing.values():
        ends.sort()
    used: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    rings: list[list[tuple[int, int]]] = []
    for start in sorted(outgoing.keys()):
        for first_end in outgoing[start]:
            if (start, first_end) in used:
                continue
            ring = [start]
            cur, nxt = start, first_end
            while True:
                used.add((cur, nxt))
                ring.append(nxt)
                din = (nxt[0] - cur[0], nxt[1] - cur[1])
                cands = [e for e in outgoing.get(nxt, ()) if (nxt, e) not in used]
                if not cands:
                    break
                if len(cands) == 1:
                    cur, nxt = nxt, cands[0]
                    continue
                # Leftmost turn in world orientation (world y = -row).
                def turn(e: tuple[int, int]) -> float:
                    dout = (e[0] - nxt[0], e[1] - nxt[1])
                    cross = -(din[0] * dout[1] - din[1] * dout[0])
                    dot = din[0] * dout[0] + din[1] * dout[1]
                    return math.atan2(cross, dot)

                best = max(cands, key=turn)
                cur, nxt = nxt, best
            assert ring[0] == ring[-1], "boundary trace did not close"
            rings.append(ring[:-1])
    return rings


def polygonize_mask(
    mask: Raster, min_area: float = 25.0, dp_epsilon: Optional[float] = None
) -> FootprintSet:
    """Vectorize the 1-cells of a binary mask into footprints.

    4-connected components are traced into exterior/hole rings, simplified
    with tolerance dp_epsilon (default: one cell), and dropped when their
    pixel area is below min_area (square meters). Ids are sequential in
    component discovery order (row-major)."""
    if dp_epsilon is None:
        dp_epsilon = mask.gsd_x
    cell_area = mask.gsd_x * (-mask.gsd_y)
    binary = mask.values == 1
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labeled, n = ndimage.label(binary, structure=structure)
    feats: list[Footprint] = []
    next_id = 0
    slices = ndimage.find_objects(labeled)
    for k in range(1, n + 1):
        sl = slices[k - 1]
        if sl is None:
            continue
        comp = labeled[sl] == k
        npx = int(comp.sum())
        if npx * cell_area < min_area:
            continue
        r_off, c_off = sl[0].start, sl[1].start
        rings = _component_rings(comp)
        world_rings: list[list[Point2]] = []
        for ring in rings:
            world_rings.append(
                [
                    Point2(
                        mask.origin_x + (c + c_off) * mask.gsd_x,
                        mask.origin_y + (r + r_off) * mask.gsd_y,
                    )
                    for (c, r) in ring
                ]
            )
        # Exterior is the ring with the largest absolute area.
        areas = [abs(ring_signed_area(rg)) for rg in world_rings]
        ext_i = int(np.argmax(areas))
        exterior = simplify_dp(world_rings[ext_i], dp_epsilon)
        holes = []
        for i, rg in enumerate(world_rings):
            if i == ext_i:
                continue
            try:
                holes.append(tuple(simplify_dp(rg, dp_epsilon)))
            except ValueError:
                continue  # hole collapsed to nothing
        feats.append(
            Footprint(id=next_id, polygon=Polygon(tuple(exterior), tuple(holes)), source="lidar")
        )
        next_id += 1
    return FootprintSet(features=feats, crs_id=mask.crs_id)


def trace_mask_rings(mask: Raster) -> list[list[Point2]]:
    """Exact (unsimplified) boundary rings of all 1-components, in world
    coordinates. Exposed for verification: the traced exterior minus holes
    area equals the pixel count times the cell area."""
    binary = mask.values == 1
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labeled, n = ndimage.label(binary, structure=structure)
    out: list[list[Point2]] = []
    slices = ndimage.find_objects(labeled)
    for k in range(1, n + 1):
        sl = slices[k - 1]
        comp = labeled[sl] == k
        r_off, c_off = sl[0].start, sl[1].start
        for ring in _component_rings(comp):
            out.append(
                [
                    Point2(
                        mask.origin_x + (c + c_off) * mask.gsd_x,
                        mask.origin_y + (r + r_off) * mask.gsd_y,
                    )
                    for (c, r) in ring
                ]
            )
    return out


# ---------------------------------------------------------------------------
# Footprint-to-mask alignment
# ---------------------------------------------------------------------------


def cells_in_polygon(grid: Raster, poly: Polygon) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of cells whose centers fall inside the polygon (even-odd
    rule, holes excluded)."""
    minx, miny, maxx, maxy = poly.bounds()
    r0 = max(0, int(math.floor((grid.origin_y - maxy) / -grid.gsd_y)))
    r1 = min(grid.height - 1, int(math.ceil((grid.origin_y - miny) / -grid.gsd_y)))
    edges = []
    for ring in (poly.exterior, *poly.holes):
        nv = len(ring)
        for i in range(nv):
            p, q = ring[i], ring[(i + 1) % nv]
            if p.y != q.y:
                edges.append((p.x, p.y, q.x, q.y))
    rows_out: list[np.ndarray] = []
    cols_out: list[np.ndarray] = []
    for r in range(r0, r1 + 1):
        y = grid.origin_y + (r + 0.5) * grid.gsd_y
        xs = []
        for x1, y1, x2, y2 in edges:
            if (y1 > y) != (y2 > y):
                xs.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
        if not xs:
            continue
        xs.sort()
        cols_row: list[int] = []
        for i in range(0, len(xs) - 1, 2):
            xa, xb = xs[i], xs[i + 1]
            c0 = int(math.ceil((xa - grid.origin_x) / grid.gsd_x - 0.5))
            c1 = int(math.ceil((xb - grid.origin_x) / grid.gsd_x - 0.5)) - 1
            c0 = max(0, c0)
            c1 = min(grid.width - 1, c1)
            if c1 >= c0:
                cols_row.extend(range(c0, c1 + 1))
        if cols_row:
            cols_arr = np.array(cols_row, dtype=np.int64)
            rows_out.append(np.full(cols_arr.shape, r, dtype=np.int64))
            cols_out.append(cols_arr)
    if not rows_out:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(rows_out), np.concatenate(cols_out)


def align_footprints(
    fps: FootprintSet, masks: MaskPair, search_radius_px: int = 10
) -> FootprintSet:
    """Translate each footprint by the integer cell shift that minimizes
    (ground cells covered) - (building cells covered). Ties prefer the
    smallest shift magnitude, then row-major order. Footprints with no cells
    on the mask grid are flagged and left in place."""
    if not masks.building.same_grid(masks.ground):
        raise FootprintError("building and ground masks must share a grid")
    grid = masks.building
    bvals = grid.values == 1
    gvals = masks.ground.values == 1
    h, w = grid.height, grid.width
    out: list[Footprint] = []
    for fp in fps.features:
        rows, cols = cells_in_polygon(grid, fp.polygon)
        if rows.size == 0:
            out.append(
                Footprint(fp.id, fp.polygon, fp.source, (0.0, 0.0), flag="outside_mask_extent")
            )
            continue
        best_score = None
        best_t2 = 0
        best = (0, 0)
        rad = int(search_radius_px)
        for di in range(-rad, rad + 1):
            rr = rows + di
            for dj in range(-rad, rad + 1):
                cc = cols + dj
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                if ok.any():
                    rs, cs2 = rr[ok], cc[ok]
                    score = int(gvals[rs, cs2].sum()) - int(bvals[rs, cs2].sum())
                else:
                    score = 0
                t2 = di * di + dj * dj
                if best_score is None or score < best_score or (score == best_score and t2 < best_t2):
                    best_score = score
                    best_t2 = t2
                    best = (di, dj)
        di, dj = best
        dx = dj * grid.gsd_x
        dy = di * grid.gsd_y
        out.append(
            Footprint(fp.id, fp.polygon.translated(dx, dy), fp.source, (dx, dy), flag=fp.flag)
        )
    return FootprintSet(features=out, crs_id=fps.crs_id)


# ---------------------------------------------------------------------------
# GeoJSON I/O (RFC 7946: lon/lat on disk, working CRS in memory)
# ---------------------------------------------------------------------------


def _ring_to_lonlat(ring: Sequence[Point2], crs_id: str) -> list[list[float]]:
    arr = np.array([[p.x, p.y] for p in ring], dtype=np.float64)
    ll = transform_points(arr, crs_id, "EPSG:4326")
    coords = [[float(x), float(y)] for x, y in ll]
    coords.append(coords[0])
    return coords


def _ring_from_lonlat(coords: Sequence[Sequence[float]], target_crs: str) -> list[Point2]:
    pts = [(float(c[0]), float(c[1])) for c in coords]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    arr = np.array(pts, dtype=np.float64)
    xy = transform_points(arr, "EPSG:4326", target_crs)
    return [Point2(x, y) for x, y in xy]


def polygon_to_geojson_geometry(poly: Polygon, crs_id: str) -> dict:
    rings = [_ring_to_lonlat(poly.exterior, crs_id)]
    for h in poly.holes:
        rings.append(_ring_to_lonlat(h, crs_id))
    return {"type": "Polygon", "coordinates": rings}


def save_footprints_geojson(fps: FootprintSet, path) -> None:
    features = []
    for fp in fps.features:
        props = {
            "source": fp.source,
            "shift_dx_m": fp.alignment_shift[0],
            "shift_dy_m": fp.alignment_shift[1],
        }
        if fp.flag:
            props["flag"] = fp.flag
        features.append(
            {
                "type": "Feature",
                "id": fp.id,
                "geometry": polygon_to_geojson_geometry(fp.polygon, fps.crs_id),
                "properties": props,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def load_footprints_geojson(path, target_crs: str) -> FootprintSet:
    """Read a FeatureCollection of (Multi)Polygons in lon/lat into the target
    CRS. MultiPolygons split into one footprint per part; missing ids are
    assigned sequentially after the largest integer id present."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("type") != "FeatureCollection":
        raise FootprintError(f"{path}: expected a FeatureCollection")
    raw: list[tuple[Optional[FootprintId], Polygon, dict]] = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        fid = feat.get("id", feat.get("properties", {}).get("id"))
        props = feat.get("properties") or {}
        if gtype == "Polygon":
            polys = [geom.get("coordinates", [])]
        elif gtype == "MultiPolygon":
            polys = list(geom.get("coordinates", []))
        else:
            log.warning("skipping feature with geometry type %r", gtype)
            continue
        for part_i, rings in enumerate(polys):
            if not rings:
                continue
            try:
                ext = _ring_from_lonlat(rings[0], target_crs)
                holes = tuple(tuple(_ring_from_lonlat(r, target_crs)) for r in rings[1:])
                poly = Polygon(tuple(ext), holes)
            except ValueError as e:
                log.warning("skipping degenerate polygon in feature %r: %s", fid, e)
                continue
            part_id = fid if (fid is None or len(polys) == 1) else f"{fid}/{part_i}"
            raw.append((part_id, poly, props))

    taken = {pid for pid, _, _ in raw if pid is not None}
    next_id = 0
    for pid in taken:
        if isinstance(pid, int):
            next_id = max(next_id, pid + 1)
    feats: list[Footprint] = []
    for pid, poly, props in raw:
        if pid is None:
            while next_id in taken:
                next_id += 1
            pid = next_id
            taken.add(pid)
        shift = (float(props.get("shift_dx_m", 0.0)), float(props.get("shift_dy_m", 0.0)))
        feats.append(
            Footprint(
                id=pid,
                polygon=poly,
                source=str(props.get("source", "provided")),
                alignment_shift=shift,
                flag=props.get("flag"),
            )
        )
    return FootprintSet(features=feats, crs_id=target_crs)
