//! 2D convex hulls and convex polygon clipping.

use crate::geom::Vec2;

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (Andrew's monotone chain). Collinear points
/// on the boundary are dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.iter().filter(|p| p.x.is_finite() && p.y.is_finite()).copied().collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Signed area (positive for counter-clockwise polygons).
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a.x * b.y - a.y * b.x;
    }
    s / 2.0
}

/// Intersection of two counter-clockwise convex polygons
/// (Sutherland–Hodgman).
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(&a, &b, &p);
            let dq = cross(&a, &b, &q);
            if dp >= 0.0 {
                output.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let s = dp / (dp - dq);
                output.push(p + (q - p) * s);
            }
        }
    }
    output
}

/// Intersection area over the smaller polygon's area, in `[0, 1]`.
pub fn overlap_ratio(a: &[Vec2], b: &[Vec2]) -> f64 {
    let smaller = polygon_area(a).min(polygon_area(b));
    if smaller <= 0.0 {
        return 0.0;
    }
    (polygon_area(&clip_convex(a, b)) / smaller).clamp(0.0, 1.0)
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

/// Distance from `p` to a counter-clockwise convex polygon; zero inside.
pub fn distance_to_convex(poly: &[Vec2], p: &Vec2) -> f64 {
    match poly.len() {
        0 => f64::INFINITY,
        1 => (p - poly[0]).norm(),
        2 => segment_distance(p, &poly[0], &poly[1]),
        n => {
            let inside = (0..n).all(|i| cross(&poly[i], &poly[(i + 1) % n], p) >= 0.0);
            if inside {
                return 0.0;
            }
            (0..n)
                .map(|i| segment_distance(p, &poly[i], &poly[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}
