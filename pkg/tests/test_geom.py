import math

import numpy as np
import pytest

from ctf3d.geom import (
    OrientedRect,
    Point2,
    Polygon,
    Segment,
    point_segment_distance,
    polygon_area,
    polygon_centroid,
    rect_between_edges,
    rect_intersects_segments,
    ring_signed_area,
    segments_approx_parallel,
    simplify_dp,
)

from helpers import rect_ring


def test_polygon_area_unit_square():
    assert polygon_area(Polygon(rect_ring(0, 0, 1, 1))) == pytest.approx(1.0)


def test_polygon_area_with_centered_hole():
    hole = rect_ring(0.25, 0.25, 0.75, 0.75)
    p = Polygon(rect_ring(0, 0, 1, 1), holes=(hole,))
    assert polygon_area(p) == pytest.approx(0.75)


def test_polygon_area_triangle():
    p = Polygon((Point2(0, 0), Point2(2, 0), Point2(0, 2)))
    assert polygon_area(p) == pytest.approx(2.0)


def test_centroid_unit_square():
    c = polygon_centroid(Polygon(rect_ring(0, 0, 1, 1)))
    assert c.x == pytest.approx(0.5) and c.y == pytest.approx(0.5)


def test_centroid_square_with_symmetric_hole():
    p = Polygon(rect_ring(0, 0, 1, 1), holes=(rect_ring(0.4, 0.4, 0.6, 0.6),))
    c = polygon_centroid(p)
    assert c.x == pytest.approx(0.5) and c.y == pytest.approx(0.5)


def test_centroid_l_shape_matches_rectangle_decomposition():
    # union of (0,0)-(2,1) and (0,1)-(1,2): areas 2 and 1,
    # centroids (1.0, 0.5) and (0.5, 1.5) -> weighted (5/6, 5/6)
    ring = (Point2(0, 0), Point2(2, 0), Point2(2, 1), Point2(1, 1), Point2(1, 2), Point2(0, 2))
    c = polygon_centroid(Polygon(ring))
    assert c.x == pytest.approx(5 / 6, abs=1e-12)
    assert c.y == pytest.approx(5 / 6, abs=1e-12)


def test_centroid_degenerate_raises():
    with pytest.raises(ValueError):
        # 3 distinct but nearly collinear points squeezed to ~zero area fail
        # at the Polygon constructor already
        Polygon((Point2(0, 0), Point2(1, 0), Point2(2, 0)))


def test_simplify_epsilon_zero_is_identity():
    ring = [Point2(0, 0), Point2(1, 0), Point2(1, 1), Point2(0.5, 1.01), Point2(0, 1)]
    out = simplify_dp(ring, 0.0)
    assert out == list(ring)


def test_simplify_removes_collinear_midpoint():
    ring = [Point2(0, 0), Point2(0.5, 0), Point2(1, 0), Point2(1, 1), Point2(0, 1)]
    out = simplify_dp(ring, 0.01)
    assert Point2(0.5, 0) not in out
    assert len(out) == 4


def test_simplify_staircase_deviation_bound():
    # staircase with 0.1 m steps along the top edge of a square
    steps = []
    x = 0.0
    y = 1.0
    while x < 1.0 - 1e-9:
        steps.append(Point2(x, y))
        x += 0.1
        steps.append(Point2(x, y))
        y += 0.1 if y == 1.0 else -0.1
    ring = [Point2(0, 0), Point2(1, 0), Point2(1, 1)] + steps[::-1]
    eps = 0.2
    out = simplify_dp(ring, eps)
    kept = set(out)
    removed = [p for p in ring if p not in kept]
    assert removed, "expected the staircase to lose vertices"
    # brute force: every removed vertex within eps of the simplified chain
    for p in removed:
        dmin = min(
            point_segment_distance(p, Segment(out[i], out[(i + 1) % len(out)]))
            for i in range(len(out))
        )
        assert dmin <= eps + 1e-9


def test_simplify_random_rings_subset_and_deviation():
    rng = np.random.default_rng(7)
    for trial in range(25):
        n = int(rng.integers(6, 64))
        ang = np.sort(rng.uniform(0, 2 * math.pi, n))
        if np.unique(ang).size < n:
            continue
        rad = rng.uniform(5.0, 10.0, n)
        ring = [Point2(r * math.cos(a), r * math.sin(a)) for a, r in zip(ang, rad)]
        eps = float(rng.uniform(0.05, 1.5))
        out = simplify_dp(ring, eps)
        assert len(out) >= 3
        assert set(out) <= set(ring)  # vertex subset
        chain = [Segment(out[i], out[(i + 1) % len(out)]) for i in range(len(out))]
        for p in ring:
            if p in set(out):
                continue
            dmin = min(point_segment_distance(p, s) for s in chain)
            assert dmin <= eps + 1e-9


def test_simplify_area_change_bounded_by_perimeter_times_eps():
    rng = np.random.default_rng(11)
    for trial in range(10):
        n = int(rng.integers(8, 40))
        ang = np.sort(rng.uniform(0, 2 * math.pi, n))
        rad = rng.uniform(8.0, 12.0, n)
        pts = [Point2(r * math.cos(a), r * math.sin(a)) for a, r in zip(ang, rad)]
        if abs(ring_signed_area(pts)) < 1.0:
            continue
        eps = float(rng.uniform(0.01, 0.5))
        out = simplify_dp(pts, eps)
        per = sum(
            math.hypot(pts[i].x - pts[(i + 1) % n].x, pts[i].y - pts[(i + 1) % n].y)
            for i in range(n)
        )
        assert abs(abs(ring_signed_area(out)) - abs(ring_signed_area(pts))) <= per * eps + 1e-9


def test_parallel_identical_direction_any_tol():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    e2 = Segment(Point2(0, 5), Point2(4, 5))
    assert segments_approx_parallel(e1, e2, 0.001)


def test_parallel_orthogonal_false():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    e2 = Segment(Point2(0, 0), Point2(0, 10))
    assert not segments_approx_parallel(e1, e2, 10.0)


def test_parallel_eight_degrees():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    a = math.radians(8.0)
    e2 = Segment(Point2(0, 2), Point2(10 * math.cos(a), 2 + 10 * math.sin(a)))
    assert segments_approx_parallel(e1, e2, 10.0)
    assert not segments_approx_parallel(e1, e2, 5.0)


def test_parallel_rotation_invariant():
    rng = np.random.default_rng(3)
    base1 = (Point2(0, 0), Point2(7, 0))
    a = math.radians(6.0)
    base2 = (Point2(1, 3), Point2(1 + 5 * math.cos(a), 3 + 5 * math.sin(a)))
    for _ in range(20):
        th = float(rng.uniform(0, 2 * math.pi))
        c, s = math.cos(th), math.sin(th)

        def rot(p):
            return Point2(c * p.x - s * p.y, s * p.x + c * p.y)

        e1 = Segment(rot(base1[0]), rot(base1[1]))
        e2 = Segment(rot(base2[0]), rot(base2[1]))
        assert segments_approx_parallel(e1, e2, 10.0)
        assert not segments_approx_parallel(e1, e2, 5.0)


def test_rect_between_edges_axis_aligned():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    e2 = Segment(Point2(0, 4), Point2(10, 4))
    got = rect_between_edges(e1, e2)
    assert got is not None
    assert got.d == pytest.approx(4.0)
    assert got.overlap == pytest.approx(10.0)
    assert got.rect.center.x == pytest.approx(5.0)
    assert got.rect.center.y == pytest.approx(2.0)


def test_rect_between_edges_partial_overlap():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    e2 = Segment(Point2(8, 4), Point2(20, 4))
    got = rect_between_edges(e1, e2)
    assert got is not None
    assert got.overlap == pytest.approx(2.0)


def test_rect_between_edges_short_overlap_rejected():
    e1 = Segment(Point2(0, 0), Point2(10, 0))
    e2 = Segment(Point2(9.5, 4), Point2(20, 4))
    assert rect_between_edges(e1, e2, min_overlap=2.0) is None


def test_rect_between_edges_three_degree_tilt_dense_sampling():
    # d must equal the mean of the perpendicular gaps at the overlap ends,
    # which for straight lines equals the dense-sample average
    a = math.radians(3.0)
    e1 = Segment(Point2(0, 0), Point2(12, 0))
    e2 = Segment(Point2(0, 5), Point2(12 * math.cos(a), 5 + 12 * math.sin(a)))
    got = rect_between_edges(e1, e2)
    assert got is not None
    axis = got.rect.axis
    perp = axis.perp()

    def t_of(p):
        return (p - e1.a).dot(perp)

    def s_of(p):
        return (p - e1.a).dot(axis)

    # dense sampling of the inter-line distance over the overlap interval
    s1, s2 = sorted((s_of(e1.a), s_of(e1.b)))
    s3, s4 = sorted((s_of(e2.a), s_of(e2.b)))
    lo, hi = max(s1, s3), min(s2, s4)
    ss = np.linspace(lo, hi, 2001)

    def t_line(pa, pb, s):
        sa, sb = s_of(pa), s_of(pb)
        ta, tb = t_of(pa), t_of(pb)
        return ta + (tb - ta) * (s - sa) / (sb - sa)

    gaps = [abs(t_line(e2.a, e2.b, s) - t_line(e1.a, e1.b, s)) for s in ss]
    # trapezoid mean == endpoint mean for linear gap profiles
    assert got.d == pytest.approx(float(np.mean([gaps[0], gaps[-1]])), abs=1e-9)
    assert got.d == pytest.approx(float(np.trapezoid(gaps, ss) / (hi - lo)), rel=1e-6)


def test_rect_between_edges_symmetric_in_arguments():
    rng = np.random.default_rng(5)
    for _ in range(30):
        p = rng.uniform(-10, 10, size=(2, 2))
        ang = float(rng.uniform(0, 2 * math.pi))
        tilt = float(rng.uniform(-0.05, 0.05))
        ln1, ln2 = rng.uniform(4, 12, size=2)
        off = float(rng.uniform(2, 8))
        c, s = math.cos(ang), math.sin(ang)
        e1 = Segment(Point2(*p[0]), Point2(p[0][0] + ln1 * c, p[0][1] + ln1 * s))
        c2, s2 = math.cos(ang + tilt), math.sin(ang + tilt)
        start2 = Point2(p[0][0] - off * s, p[0][1] + off * c)
        e2 = Segment(start2, Point2(start2.x + ln2 * c2, start2.y + ln2 * s2))
        r12 = rect_between_edges(e1, e2)
        r21 = rect_between_edges(e2, e1)
        if r12 is None or r21 is None:
            assert r12 is None and r21 is None
            continue
        assert r12.d == pytest.approx(r21.d, abs=1e-9)
        assert r12.overlap == pytest.approx(r21.overlap, abs=1e-9)
        assert r12.rect.center.x == pytest.approx(r21.rect.center.x, abs=1e-9)
        assert r12.rect.center.y == pytest.approx(r21.rect.center.y, abs=1e-9)
        # same rectangle up to axis sign
        assert abs(r12.rect.axis.dot(r21.rect.axis)) == pytest.approx(1.0, abs=1e-9)


def test_rect_intersects_far_segment_false():
    r = OrientedRect(Point2(0, 0), Point2(1, 0), 2.0, 1.0)
    assert not rect_intersects_segments(r, [Segment(Point2(10, 10), Point2(11, 10))])


def test_rect_intersects_crossing_segment_true():
    r = OrientedRect(Point2(0, 0), Point2(1, 0), 2.0, 1.0)
    assert rect_intersects_segments(r, [Segment(Point2(-5, 0), Point2(5, 0))])


def test_rect_intersects_corner_touch_true():
    r = OrientedRect(Point2(0, 0), Point2(1, 0), 2.0, 1.0)
    # corner at (2, 1); segment ends exactly there
    assert rect_intersects_segments(r, [Segment(Point2(2, 1), Point2(5, 5))])


def test_rect_contains_interior_segment():
    r = OrientedRect(Point2(0, 0), Point2(1, 0), 2.0, 1.0)
    assert rect_intersects_segments(r, [Segment(Point2(-0.5, 0.2), Point2(0.5, -0.2))])


def test_oriented_rect_requires_unit_axis():
    with pytest.raises(ValueError):
        OrientedRect(Point2(0, 0), Point2(2, 0), 1.0, 1.0)
    with pytest.raises(ValueError):
        OrientedRect(Point2(0, 0), Point2(1, 0), 0.0, 1.0)


def test_polygon_normalizes_orientation():
    # clockwise input exterior is flipped to CCW; hole flipped to CW
    ring = tuple(reversed(rect_ring(0, 0, 4, 4)))
    hole = rect_ring(1, 1, 2, 2)
    p = Polygon(ring, holes=(hole,))
    assert ring_signed_area(p.exterior) > 0
    assert ring_signed_area(p.holes[0]) < 0
    assert polygon_area(p) == pytest.approx(15.0)
