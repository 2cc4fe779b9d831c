//! Small 2D polygon kit: convex hull, point-in-convex-polygon and polyline
//! simplification. Shared by the plane-extraction and foothold paths.

use nalgebra::Vector2;

/// Twice the signed area of triangle (a, b, c). Positive for a left turn.
#[inline]
pub fn cross2(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, starting from
/// the lexicographically smallest vertex.
///
/// Strict turns only: collinear boundary points are dropped. Duplicate input
/// points are removed first. Returns fewer than 3 vertices for degenerate
/// input (all points collinear).
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    let n = pts.len();
    if n < 3 {
        return pts;
    }

    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * n);
    // Lower hull.
    for p in &pts {
        while hull.len() >= 2
            && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    // Upper hull.
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        // All points collinear.
        hull.truncate(2);
    }
    hull
}

/// True if `p` lies inside or on the boundary of a counter-clockwise convex
/// polygon. `tol` expands the boundary outward; pass 0 for the strict test.
pub fn point_in_convex(hull: &[Vector2<f64>], p: &Vector2<f64>, tol: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for i in 0..hull.len() {
        let a = &hull[i];
        let b = &hull[(i + 1) % hull.len()];
        let edge_len = (b - a).norm();
        // cross2 scales with edge length; compare as a distance.
        if cross2(a, b, p) < -tol * edge_len.max(1e-300) {
            return false;
        }
    }
    true
}

/// Douglas-Peucker simplification of a closed polygon.
///
/// Splits the ring at its two mutually farthest vertices, simplifies both
/// open halves, and rejoins them. Vertices farther than `tol` from the chord
/// are always kept.
pub fn simplify_closed(polygon: &[Vector2<f64>], tol: f64) -> Vec<Vector2<f64>> {
    let n = polygon.len();
    if n <= 3 || tol <= 0.0 {
        return polygon.to_vec();
    }
    // Anchor on the two farthest-apart vertices for a stable split.
    let (mut ia, mut ib, mut best) = (0usize, 1usize, -1.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (polygon[i] - polygon[j]).norm_squared();
            if d > best {
                best = d;
                ia = i;
                ib = j;
            }
        }
    }
    let half1: Vec<Vector2<f64>> = (ia..=ib).map(|i| polygon[i]).collect();
    let half2: Vec<Vector2<f64>> = (ib..n).chain(0..=ia).map(|i| polygon[i]).collect();
    let mut out = simplify_open(&half1, tol);
    let tail = simplify_open(&half2, tol);
    out.extend_from_slice(&tail[1..tail.len().saturating_sub(1)]);
    out
}

/// Douglas-Peucker on an open polyline; endpoints always survive.
pub fn simplify_open(line: &[Vector2<f64>], tol: f64) -> Vec<Vector2<f64>> {
    if line.len() <= 2 {
        return line.to_vec();
    }
    let (mut idx, mut dmax) = (0usize, 0.0f64);
    let (a, b) = (line[0], line[line.len() - 1]);
    for (i, p) in line.iter().enumerate().skip(1).take(line.len() - 2) {
        let d = point_segment_distance(p, &a, &b);
        if d > dmax {
            dmax = d;
            idx = i;
        }
    }
    if dmax <= tol {
        return vec![a, b];
    }
    let mut left = simplify_open(&line[..=idx], tol);
    let right = simplify_open(&line[idx..], tol);
    left.pop();
    left.extend(right);
    left
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn hull_of_triangle_is_itself() {
        let tri = vec![v(0.0, 0.0), v(1.0, 0.0), v(0.0, 1.0)];
        let hull = convex_hull(&tri);
        assert_eq!(hull.len(), 3);
        for p in &tri {
            assert!(hull.iter().any(|h| h == p));
        }
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = vec![
            v(0.0, 0.0),
            v(2.0, 0.0),
            v(2.0, 2.0),
            v(0.0, 2.0),
            v(1.0, 1.0), // interior
            v(1.0, 0.0), // edge-collinear
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
    }

    #[test]
    fn hull_is_counter_clockwise() {
        let pts = vec![v(0.0, 0.0), v(3.0, 1.0), v(2.0, 4.0), v(-1.0, 2.0), v(1.0, 1.5)];
        let hull = convex_hull(&pts);
        let mut area2 = 0.0;
        for i in 0..hull.len() {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            area2 += a.x * b.y - b.x * a.y;
        }
        assert!(area2 > 0.0);
    }

    #[test]
    fn collinear_input_degenerates() {
        let pts = vec![v(0.0, 0.0), v(1.0, 1.0), v(2.0, 2.0), v(3.0, 3.0)];
        assert!(convex_hull(&pts).len() < 3);
    }

    #[test]
    fn point_in_convex_includes_boundary() {
        let hull = convex_hull(&[v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)]);
        assert!(point_in_convex(&hull, &v(0.5, 0.5), 0.0));
        assert!(point_in_convex(&hull, &v(0.0, 0.5), 0.0));
        assert!(point_in_convex(&hull, &v(1.0, 1.0), 0.0));
        assert!(!point_in_convex(&hull, &v(1.0 + 1e-9, 0.5), 0.0));
        assert!(!point_in_convex(&hull, &v(-0.1, 0.5), 0.0));
    }

    #[test]
    fn simplify_removes_near_collinear_chain() {
        let line: Vec<_> = (0..=10).map(|i| v(i as f64 * 0.1, 0.0005 * ((i % 2) as f64))).collect();
        let out = simplify_open(&line, 0.01);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], line[0]);
        assert_eq!(out[1], line[10]);
    }

    #[test]
    fn simplify_keeps_true_corners() {
        let square = vec![
            v(0.0, 0.0),
            v(0.5, 0.001),
            v(1.0, 0.0),
            v(1.0, 1.0),
            v(0.0, 1.0),
        ];
        let out = simplify_closed(&square, 0.01);
        assert_eq!(out.len(), 4);
    }
}
