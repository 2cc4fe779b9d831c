//! Rotated-rectangle foot footprint and separating-axis overlap test.

use nalgebra::Vector2;

/// Rectangle with center, full side lengths and rotation. `width` runs along
/// the rotated x axis (the foot's long axis), `height` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRectangle {
    pub center: Vector2<f64>,
    pub width: f64,
    pub height: f64,
    pub theta: f64,
}

impl OrientedRectangle {
    pub fn new(center: Vector2<f64>, width: f64, height: f64, theta: f64) -> Self {
        Self {
            center,
            width,
            height,
            theta,
        }
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.theta.sin_cos();
        let ex = Vector2::new(c, s) * (self.width * 0.5);
        let ey = Vector2::new(-s, c) * (self.height * 0.5);
        [
            self.center + ex + ey,
            self.center - ex + ey,
            self.center - ex - ey,
            self.center + ex - ey,
        ]
    }

    /// True if `p` is inside or on the boundary.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let (s, c) = self.theta.sin_cos();
        let d = p - self.center;
        let local_x = c * d.x + s * d.y;
        let local_y = -s * d.x + c * d.y;
        local_x.abs() <= self.width * 0.5 && local_y.abs() <= self.height * 0.5
    }
}

/// Closed-rectangle overlap via the separating axis theorem over both
/// rectangles' edge normals. Touching boundaries count as overlap.
pub fn rect_intersect(a: &OrientedRectangle, b: &OrientedRectangle) -> bool {
    separation_margin(a, b) >= 0.0
}

/// Signed overlap along the tightest separating axis: negative means the
/// rectangles are separated by that distance, non-negative is the
/// penetration depth.
pub fn separation_margin(a: &OrientedRectangle, b: &OrientedRectangle) -> f64 {
    let ca = a.corners();
    let cb = b.corners();
    let mut margin = f64::INFINITY;
    for rect in [&ca, &cb] {
        for i in 0..2 {
            let edge = rect[(i + 1) % 4] - rect[i];
            let axis = Vector2::new(-edge.y, edge.x).normalize();
            let (min_a, max_a) = project(&ca, &axis);
            let (min_b, max_b) = project(&cb, &axis);
            let overlap = max_a.min(max_b) - min_a.max(min_b);
            margin = margin.min(overlap);
        }
    }
    margin
}

fn project(corners: &[Vector2<f64>; 4], axis: &Vector2<f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for c in corners {
        let q = c.dot(axis);
        min = min.min(q);
        max = max.max(q);
    }
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: f64, y: f64, w: f64, h: f64, theta: f64) -> OrientedRectangle {
        OrientedRectangle::new(Vector2::new(x, y), w, h, theta)
    }

    #[test]
    fn identical_rectangles_intersect() {
        let a = rect(0.3, -0.2, 0.26, 0.096, 0.4);
        assert!(rect_intersect(&a, &a));
    }

    #[test]
    fn distant_rectangles_do_not() {
        let a = rect(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = rect(10.0, 0.0, 1.0, 1.0, 0.7);
        assert!(!rect_intersect(&a, &b));
    }

    #[test]
    fn rotation_matters() {
        // Axis-aligned these are separated; rotated 45 degrees they cross.
        let a = rect(0.0, 0.0, 2.0, 0.2, 0.0);
        let b = rect(0.0, 0.5, 2.0, 0.2, 0.0);
        assert!(!rect_intersect(&a, &b));
        let b_rot = rect(0.0, 0.5, 2.0, 0.2, std::f64::consts::FRAC_PI_2);
        assert!(rect_intersect(&a, &b_rot));
    }

    #[test]
    fn touching_edges_count_as_overlap() {
        let a = rect(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = rect(1.0, 0.0, 1.0, 1.0, 0.0);
        assert!(rect_intersect(&a, &b));
    }

    #[test]
    fn contains_boundary_inclusive() {
        let a = rect(0.0, 0.0, 2.0, 1.0, 0.0);
        assert!(a.contains(&Vector2::new(1.0, 0.5)));
        assert!(a.contains(&Vector2::new(0.0, 0.0)));
        assert!(!a.contains(&Vector2::new(1.0 + 1e-9, 0.0)));
    }

    #[test]
    fn matches_dense_sampling_oracle() {
        // 500 random pairs against a 200x200 point-sampling containment
        // oracle; disagreement is tolerated only within one sample pitch of
        // the boundary (measured by the SAT margin).
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(77);
        let mut checked = 0;
        for _ in 0..500 {
            let a = rect(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.05..0.8),
                rng.random_range(0.05..0.8),
                rng.random_range(-3.2..3.2),
            );
            let b = rect(
                a.center.x + rng.random_range(-0.8..0.8),
                a.center.y + rng.random_range(-0.8..0.8),
                rng.random_range(0.05..0.8),
                rng.random_range(0.05..0.8),
                rng.random_range(-3.2..3.2),
            );
            let sat = rect_intersect(&a, &b);
            let sampled = sampling_oracle(&a, &b, 200);
            let pitch = (a.width / 199.0)
                .max(a.height / 199.0)
                .max(b.width / 199.0)
                .max(b.height / 199.0);
            if separation_margin(&a, &b).abs() <= pitch {
                continue; // too close to the boundary for the oracle
            }
            assert_eq!(sat, sampled, "rects {a:?} {b:?}");
            checked += 1;
        }
        assert!(checked > 400, "only {checked} decisive cases");
    }

    fn sampling_oracle(a: &OrientedRectangle, b: &OrientedRectangle, n: usize) -> bool {
        let grid_hits = |src: &OrientedRectangle, dst: &OrientedRectangle| {
            let (s, c) = src.theta.sin_cos();
            for i in 0..n {
                for j in 0..n {
                    let lx = (i as f64 / (n - 1) as f64 - 0.5) * src.width;
                    let ly = (j as f64 / (n - 1) as f64 - 0.5) * src.height;
                    let p = Vector2::new(
                        src.center.x + c * lx - s * ly,
                        src.center.y + s * lx + c * ly,
                    );
                    if dst.contains(&p) {
                        return true;
                    }
                }
            }
            false
        };
        grid_hits(a, b) || grid_hits(b, a)
    }
}
