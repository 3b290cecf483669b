"""Evaluation-region construction: pair nearby buildings, find their facing
roughly-parallel wall edges, span the gap with an oriented center rectangle,
and attach a sampling rectangle on each building side. Candidates whose gap
rectangle is crossed by any other wall are rejected as obstructed; the
surviving candidate with the smallest separation d wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from .footprints import FootprintSet
from .geom import (
    OrientedRect,
    Point2,
    Segment,
    polygon_centroid,
    rect_between_edges,
    rect_intersects_segments,
    segments_approx_parallel,
)
from .util import parallel_map

log = logging.getLogger(__name__)

_OBSTRUCTION_EPS = 1e-7


@dataclass(frozen=True)
class RegionConfig:
    max_centroid_dist: float = 150.0
    angle_tol_deg: float = 10.0
    max_orth_dist: float = 30.0
    min_overlap: float = 2.0
    depth_floor: float = 1.0  # meters; also the minimum accepted separation


@dataclass(frozen=True)
class BuildingPair:
    id_a: object
    id_b: object
    centroid_distance: float


@dataclass(frozen=True)
class EvaluationRegion:
    pair: BuildingPair
    center: OrientedRect
    region_a: OrientedRect  # on the id_a side
    region_b: OrientedRect  # on the id_b side
    d: float
    overlap: float


def pair_buildings(fps: FootprintSet, max_centroid_dist: float = 150.0) -> list[BuildingPair]:
    """All footprint pairs with centroid distance below max_centroid_dist,
    ordered by position in the set (id_a is the earlier feature)."""
    cents = [polygon_centroid(f.polygon) for f in fps.features]
    out: list[BuildingPair] = []
    n = len(fps.features)
    for i in range(n):
        for j in range(i + 1, n):
            dist = (cents[i] - cents[j]).norm()
            if dist < max_centroid_dist:
                out.append(
                    BuildingPair(fps.features[i].id, fps.features[j].id, dist)
                )
    return out


def _interior_extent(
    vertices: tuple[Point2, ...], origin: Point2, perp: Point2, sign: float, t_edge: float
) -> float:
    """How far the footprint extends beyond its edge (at cross-coordinate
    t_edge) in the `sign` direction along perp."""
    best = 0.0
    for v in vertices:
        t = (v - origin).dot(perp)
        best = max(best, sign * (t - t_edge))
    return best


def find_evaluation_region(
    pair: BuildingPair, fps: FootprintSet, config: RegionConfig = RegionConfig()
) -> Optional[EvaluationRegion]:
    """Best evaluation region for a building pair, or None.

    Every (edge of A, edge of B) combination within the angle tolerance
    produces a candidate center rectangle between the edges; candidates are
    rejected when the separation d exceeds max_orth_dist or falls below the
    depth floor, or when any other wall edge (of any footprint, holes
    included) crosses the slightly deflated rectangle. The surviving
    candidate with the smallest d (ties: largest overlap, then edge index
    order) is returned with a sampling rectangle on each building side, deep
    as the gap but clipped to the footprint's own extent and floored at
    depth_floor.
    """
    fa = fps.by_id(pair.id_a)
    fb = fps.by_id(pair.id_b)
    edges_a = fa.polygon.exterior_edges()
    edges_b = fb.polygon.exterior_edges()

    # Obstruction set: every wall edge of every footprint (holes included);
    # the two participating edges are removed per candidate.
    all_edges: list[tuple[object, int, Segment]] = []
    for f in fps.features:
        for k, e in enumerate(f.polygon.all_edges()):
            all_edges.append((f.id, k, e))

    best_key = None
    best: Optional[tuple[int, int, OrientedRect, float, float, Segment, Segment]] = None
    for i, ea in enumerate(edges_a):
        for j, eb in enumerate(edges_b):
            if not segments_approx_parallel(ea, eb, config.angle_tol_deg):
                continue
            res = rect_between_edges(ea, eb, config.min_overlap)
            if res is None:
                continue
            rect, d, overlap = res
            if d > config.max_orth_dist or d < config.depth_floor:
                continue
            probe = rect.deflated(_OBSTRUCTION_EPS)
            others = [
                seg
                for fid, k, seg in all_edges
                if not (fid == pair.id_a and k == i) and not (fid == pair.id_b and k == j)
            ]
            if rect_intersects_segments(probe, others):
                continue
            key = (d, -overlap, i, j)
            if best_key is None or key < best_key:
                best_key = key
                best = (i, j, rect, d, overlap, ea, eb)
    if best is None:
        return None

    i, j, rect, d, overlap, ea, eb = best
    perp = rect.axis.perp()

    def side_rect(edge: Segment, vertices: tuple[Point2, ...]) -> OrientedRect:
        # Cross-coordinate of the wall line where it passes the rect center
        # (relative to the center this is +/- d/2).
        av = edge.a - rect.center
        bv = edge.b - rect.center
        sa, sb = av.dot(rect.axis), bv.dot(rect.axis)
        ta, tb = av.dot(perp), bv.dot(perp)
        if abs(sb - sa) < 1e-12:
            t_edge = 0.5 * (ta + tb)
        else:
            t_edge = ta + (0.0 - sa) / (sb - sa) * (tb - ta)
        sign = 1.0 if t_edge > 0 else -1.0
        extent = _interior_extent(vertices, rect.center, perp, sign, t_edge)
        depth = max(min(d, extent), config.depth_floor)
        center = rect.center + perp.scaled(t_edge + sign * depth / 2.0)
        return OrientedRect(center, rect.axis, rect.half_length, depth / 2.0)

    region_a = side_rect(ea, fa.polygon.exterior)
    region_b = side_rect(eb, fb.polygon.exterior)
    return EvaluationRegion(
        pair=pair, center=rect, region_a=region_a, region_b=region_b, d=d, overlap=overlap
    )


def build_all_regions(
    fps: FootprintSet, config: RegionConfig = RegionConfig(), threads: int = 1
) -> list[EvaluationRegion]:
    """Evaluation regions for every qualifying pair, in pair order."""
    pairs = pair_buildings(fps, config.max_centroid_dist)
    results = parallel_map(lambda p: find_evaluation_region(p, fps, config), pairs, threads)
    return [r for r in results if r is not None]
