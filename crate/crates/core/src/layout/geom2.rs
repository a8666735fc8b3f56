//! Planar predicates shared by contour construction, placement and routing.

use nalgebra::Vector2;

pub type Point2 = Vector2<f64>;

pub fn cross(a: &Point2, b: &Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Counter-clockwise perpendicular.
pub fn perp(v: &Point2) -> Point2 {
    Point2::new(-v.y, v.x)
}

fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    cross(&(b - a), &(c - a))
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// True when closed segments `ab` and `cd` share at least one point.
pub fn segments_intersect(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

pub fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

pub fn segment_segment_distance(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Even-odd point-in-polygon test; the polygon is implicitly closed.
pub fn point_in_polygon(p: &Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross(&poly[i], &poly[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Number of chords needed so that a circular arc of `radius` and
/// `sweep` radians deviates from its chords by at most `tolerance`.
pub fn arc_chord_count(radius: f64, sweep: f64, tolerance: f64) -> usize {
    if radius <= tolerance {
        return 1;
    }
    let max_step = 2.0 * (1.0 - tolerance / radius).acos();
    ((sweep.abs() / max_step).ceil() as usize).max(1)
}

/// Brute-force check over all non-adjacent edge pairs of a closed polygon.
pub fn polygon_is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(&a, &b, &c, &d) {
                return false;
            }
        }
    }
    true
}

/// Arc-length interpolation along a polyline at `fraction` of its length.
pub fn polyline_point_at(points: &[Point2], fraction: f64) -> Point2 {
    let total: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let mut remaining = fraction.clamp(0.0, 1.0) * total;
    for w in points.windows(2) {
        let len = (w[1] - w[0]).norm();
        if remaining <= len && len > 0.0 {
            return w[0] + (w[1] - w[0]) * (remaining / len);
        }
        remaining -= len;
    }
    *points.last().expect("non-empty polyline")
}
