"""Planar geometry primitives: points, segments, polygons with holes, oriented
rectangles, Douglas-Peucker ring simplification, and the edge-pair constructions
used to place evaluation rectangles between building walls.

Coordinates are planar map coordinates in meters unless noted. Polygons are
stored un-closed (no repeated last vertex), exterior counter-clockwise and
holes clockwise; constructors normalize orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

_EPS = 1e-12


@dataclass(frozen=True)
class Point2:
    """A 2D point (or free vector) with finite coordinates."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def scaled(self, s: float) -> "Point2":
        return Point2(self.x * s, self.y * s)

    def dot(self, other: "Point2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Point2") -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def unit(self) -> "Point2":
        n = self.norm()
        if n < _EPS:
            raise ValueError("cannot normalize a zero-length vector")
        return Point2(self.x / n, self.y / n)

    def perp(self) -> "Point2":
        """Counter-clockwise perpendicular."""
        return Point2(-self.y, self.x)


@dataclass(frozen=True)
class Segment:
    """A directed line segment of positive length."""

    a: Point2
    b: Point2

    def __post_init__(self) -> None:
        if (self.b - self.a).norm() < _EPS:
            raise ValueError("segment endpoints coincide")

    @property
    def length(self) -> float:
        return (self.b - self.a).norm()

    def direction(self) -> Point2:
        return (self.b - self.a).unit()

    def midpoint(self) -> Point2:
        return Point2(0.5 * (self.a.x + self.b.x), 0.5 * (self.a.y + self.b.y))


def ring_signed_area(ring: Sequence[Point2]) -> float:
    """Shoelace signed area (positive for counter-clockwise)."""
    n = len(ring)
    acc = 0.0
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        acc += p.x * q.y - q.x * p.y
    return 0.5 * acc


def _validate_ring(ring: Sequence[Point2], what: str) -> tuple[Point2, ...]:
    if len(ring) < 3:
        raise ValueError(f"{what} needs at least 3 vertices, got {len(ring)}")
    if abs(ring_signed_area(ring)) < _EPS:
        raise ValueError(f"{what} has zero area")
    return tuple(ring)


@dataclass(frozen=True)
class Polygon:
    """Polygon with optional holes.

    Exterior is normalized counter-clockwise and holes clockwise on
    construction; rings must not repeat the first vertex at the end.
    """

    exterior: tuple[Point2, ...]
    holes: tuple[tuple[Point2, ...], ...] = ()

    def __post_init__(self) -> None:
        ext = _validate_ring(self.exterior, "exterior ring")
        if ring_signed_area(ext) < 0:
            ext = tuple(reversed(ext))
        norm_holes = []
        for h in self.holes:
            hv = _validate_ring(h, "hole ring")
            if ring_signed_area(hv) > 0:
                hv = tuple(reversed(hv))
            norm_holes.append(hv)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", tuple(norm_holes))

    def exterior_edges(self) -> list[Segment]:
        return _ring_edges(self.exterior)

    def all_edges(self) -> list[Segment]:
        out = _ring_edges(self.exterior)
        for h in self.holes:
            out.extend(_ring_edges(h))
        return out

    def translated(self, dx: float, dy: float) -> "Polygon":
        mv = lambda r: tuple(Point2(p.x + dx, p.y + dy) for p in r)
        return Polygon(mv(self.exterior), tuple(mv(h) for h in self.holes))

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)


def _ring_edges(ring: Sequence[Point2]) -> list[Segment]:
    n = len(ring)
    out = []
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        if (q - p).norm() >= _EPS:
            out.append(Segment(p, q))
    return out


def polygon_area(poly: Polygon) -> float:
    """Area with holes subtracted (exterior CCW positive, holes CW negative)."""
    a = ring_signed_area(poly.exterior)
    for h in poly.holes:
        a += ring_signed_area(h)
    return a


def polygon_centroid(poly: Polygon) -> Point2:
    """Area-weighted centroid over exterior minus holes."""
    a_total = 0.0
    cx = 0.0
    cy = 0.0
    for ring in (poly.exterior, *poly.holes):
        n = len(ring)
        for i in range(n):
            p, q = ring[i], ring[(i + 1) % n]
            w = p.x * q.y - q.x * p.y
            a_total += w
            cx += (p.x + q.x) * w
            cy += (p.y + q.y) * w
    a_total *= 0.5
    if abs(a_total) < _EPS:
        raise ValueError("degenerate polygon: zero net area")
    return Point2(cx / (6.0 * a_total), cy / (6.0 * a_total))


def point_segment_distance(p: Point2, seg: Segment) -> float:
    d = seg.b - seg.a
    v = p - seg.a
    t = v.dot(d) / d.dot(d)
    t = max(0.0, min(1.0, t))
    closest = Point2(seg.a.x + t * d.x, seg.a.y + t * d.y)
    return (p - closest).norm()


def point_in_ring(pt: Point2, ring: Sequence[Point2]) -> bool:
    """Even-odd ray cast; boundary points are implementation-defined."""
    inside = False
    n = len(ring)
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        if (p.y > pt.y) != (q.y > pt.y):
            xcross = p.x + (pt.y - p.y) * (q.x - p.x) / (q.y - p.y)
            if pt.x < xcross:
                inside = not inside
    return inside


def point_in_polygon(pt: Point2, poly: Polygon) -> bool:
    if not point_in_ring(pt, poly.exterior):
        return False
    for h in poly.holes:
        if point_in_ring(pt, h):
            return False
    return True


# ---------------------------------------------------------------------------
# Ring simplification
# ---------------------------------------------------------------------------


def _dp_keep(pts: Sequence[Point2], eps: float) -> list[bool]:
    """Douglas-Peucker on an open chain; endpoints always kept.

    Deviation is measured to the chord segment, so every dropped vertex ends
    up within eps of some retained edge.
    """
    n = len(pts)
    keep = [False] * n
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        chord = Segment(pts[i], pts[j]) if (pts[j] - pts[i]).norm() >= _EPS else None
        best = -1.0
        bi = -1
        for k in range(i + 1, j):
            if chord is None:
                d = (pts[k] - pts[i]).norm()
            else:
                d = point_segment_distance(pts[k], chord)
            if d > best:
                best = d
                bi = k
        if best > eps:
            keep[bi] = True
            stack.append((i, bi))
            stack.append((bi, j))
    return keep


def simplify_dp(ring: Sequence[Point2], epsilon: float) -> list[Point2]:
    """Simplify a closed ring, keeping a subset of its vertices.

    epsilon = 0 returns the ring unchanged. If simplification would collapse
    the ring below a valid triangle, the farthest-spread non-degenerate
    triangle of original vertices is returned instead.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if len(ring) < 3:
        raise ValueError("ring needs at least 3 vertices")
    pts = list(ring)
    if epsilon == 0.0:
        return pts

    # Split the closed ring at vertex 0 and its farthest vertex, then run
    # Douglas-Peucker on the two open chains.
    far = max(range(1, len(pts)), key=lambda k: (pts[k] - pts[0]).norm())
    chain1 = pts[: far + 1]
    chain2 = pts[far:] + [pts[0]]
    keep = [False] * len(pts)
    k1 = _dp_keep(chain1, epsilon)
    for idx, k in enumerate(k1):
        if k:
            keep[idx] = True
    k2 = _dp_keep(chain2, epsilon)
    for off, k in enumerate(k2[:-1]):
        if k:
            keep[far + off] = True
    out = [p for p, k in zip(pts, keep) if k]
    if len(out) >= 3 and abs(ring_signed_area(out)) > _EPS:
        return out

    # Collapsed: rebuild a minimal triangle from the original vertices.
    v0 = pts[0]
    v1 = pts[far]
    if (v1 - v0).norm() < _EPS:
        raise ValueError("ring is degenerate (all vertices coincide)")
    chord = Segment(v0, v1)
    v2 = max(pts, key=lambda p: point_segment_distance(p, chord))
    tri = [v0, v1, v2]
    if abs(ring_signed_area(tri)) < _EPS:
        raise ValueError("ring is degenerate (collinear vertices)")
    i0, i1, i2 = sorted(pts.index(v) for v in (v0, v1, v2))
    return [pts[i0], pts[i1], pts[i2]]


# ---------------------------------------------------------------------------
# Oriented rectangles and edge-pair construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle given by center, unit long-axis direction, and half extents."""

    center: Point2
    axis: Point2
    half_length: float
    half_width: float

    def __post_init__(self) -> None:
        if abs(self.axis.norm() - 1.0) > 1e-9:
            raise ValueError("axis must be a unit vector")
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValueError("rectangle half extents must be positive")

    def corners(self) -> list[Point2]:
        """Counter-clockwise corners starting at +axis,+perp."""
        a = self.axis.scaled(self.half_length)
        p = self.axis.perp().scaled(self.half_width)
        c = self.center
        return [c + a + p, c - a + p, c - a - p, c + a - p]

    def contains(self, pt: Point2) -> bool:
        v = pt - self.center
        return (
            abs(v.dot(self.axis)) <= self.half_length
            and abs(v.dot(self.axis.perp())) <= self.half_width
        )

    def deflated(self, eps: float) -> "OrientedRect":
        return OrientedRect(
            self.center,
            self.axis,
            max(self.half_length - eps, _EPS),
            max(self.half_width - eps, _EPS),
        )

    def translated(self, dx: float, dy: float) -> "OrientedRect":
        return OrientedRect(
            Point2(self.center.x + dx, self.center.y + dy),
            self.axis,
            self.half_length,
            self.half_width,
        )


def segments_approx_parallel(s1: Segment, s2: Segment, tol_deg: float) -> bool:
    """True when the acute angle between the segment directions is <= tol_deg."""
    d1 = s1.direction()
    d2 = s2.direction()
    c = min(1.0, abs(d1.dot(d2)))
    return math.degrees(math.acos(c)) <= tol_deg + 1e-12


class EdgePairRect(NamedTuple):
    rect: OrientedRect
    d: float
    overlap: float


def rect_between_edges(
    e1: Segment, e2: Segment, min_overlap: float = 2.0
) -> Optional[EdgePairRect]:
    """Rectangle spanning the gap between two roughly parallel edges.

    The long axis is the normalized mean of the two edge directions (the
    second flipped if anti-parallel). Both edges are projected onto that axis;
    the rectangle covers the overlap of their projection intervals along the
    axis and the mean perpendicular separation d across it. Returns None when
    the projections overlap less than min_overlap, when the edges cross, or
    when the configuration is degenerate (d ~ 0 or an edge is nearly
    perpendicular to the axis).
    """
    d1 = e1.direction()
    d2 = e2.direction()
    if d1.dot(d2) < 0:
        d2 = d2.scaled(-1.0)
    axis = (d1 + d2).unit()
    perp = axis.perp()
    origin = e1.a

    def proj(p: Point2) -> tuple[float, float]:
        v = p - origin
        return v.dot(axis), v.dot(perp)

    s1a, t1a = proj(e1.a)
    s1b, t1b = proj(e1.b)
    s2a, t2a = proj(e2.a)
    s2b, t2b = proj(e2.b)
    if s1a > s1b:
        s1a, s1b, t1a, t1b = s1b, s1a, t1b, t1a
    if s2a > s2b:
        s2a, s2b, t2a, t2b = s2b, s2a, t2b, t2a
    if s1b - s1a < _EPS or s2b - s2a < _EPS:
        return None  # edge nearly perpendicular to the shared axis

    lo = max(s1a, s2a)
    hi = min(s1b, s2b)
    overlap = hi - lo
    if overlap < max(min_overlap, _EPS):
        return None

    def t_at(s: float, sa: float, sb: float, ta: float, tb: float) -> float:
        return ta + (s - sa) * (tb - ta) / (sb - sa)

    t1_lo = t_at(lo, s1a, s1b, t1a, t1b)
    t1_hi = t_at(hi, s1a, s1b, t1a, t1b)
    t2_lo = t_at(lo, s2a, s2b, t2a, t2b)
    t2_hi = t_at(hi, s2a, s2b, t2a, t2b)
    g_lo = t2_lo - t1_lo
    g_hi = t2_hi - t1_hi
    if g_lo * g_hi < 0:
        return None  # edges cross within the overlap
    d = 0.5 * (abs(g_lo) + abs(g_hi))
    if d < _EPS:
        return None

    s_c = 0.5 * (lo + hi)
    t_c = 0.25 * (t1_lo + t1_hi + t2_lo + t2_hi)
    center = origin + axis.scaled(s_c) + perp.scaled(t_c)
    rect = OrientedRect(center, axis, overlap / 2.0, d / 2.0)
    return EdgePairRect(rect, d, overlap)


def rect_intersects_segments(rect: OrientedRect, segments: Iterable[Segment]) -> bool:
    """True if any segment touches the closed rectangle (boundary counts)."""
    c = rect.center
    ax = rect.axis
    pp = ax.perp()
    hl = rect.half_length
    hw = rect.half_width
    for seg in segments:
        v1 = seg.a - c
        v2 = seg.b - c
        u1, w1 = v1.dot(ax), v1.dot(pp)
        u2, w2 = v2.dot(ax), v2.dot(pp)
        du = u2 - u1
        dw = w2 - w1
        t0, t1 = 0.0, 1.0
        ok = True
        for delta, start, lim in ((du, u1, hl), (dw, w1, hw)):
            if abs(delta) < _EPS:
                if start < -lim or start > lim:
                    ok = False
                    break
            else:
                ta = (-lim - start) / delta
                tb = (lim - start) / delta
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
                if t0 > t1:
                    ok = False
                    break
        if ok:
            return True
    return False
