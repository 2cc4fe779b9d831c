//! Seeded RANSAC plane fitting with a least-squares refinement pass.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PipelineError, PlaneModel, RansacParams};

/// Plane fit result: model plus the indices of its inliers.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub model: PlaneModel,
    pub inliers: Vec<usize>,
}

/// Fit a plane to `points`, maximizing the inlier count over random 3-point
/// hypotheses and refitting the winner by least squares on its inliers.
///
/// Deterministic for a fixed `params.seed`. Iteration stops early once the
/// current inlier ratio makes a better hypothesis overwhelmingly unlikely
/// (0.999 confidence), still capped at `params.max_iterations`. Returns
/// `None` when fewer than 3 points are given or no hypothesis reaches
/// `params.min_inliers`.
pub fn fit_plane_ransac(
    points: &[Vector3<f64>],
    params: &RansacParams,
) -> Result<Option<PlaneFit>, PipelineError> {
    params.validate()?;
    let n = points.len();
    if n < 3 {
        return Ok(None);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best_count = 0usize;
    let mut best_plane: Option<(Vector3<f64>, f64)> = None;
    let mut iter = 0u32;
    let mut required = params.max_iterations;
    while iter < required {
        iter += 1;
        let (i, j, k) = distinct_triple(&mut rng, n);
        let a = points[i];
        let normal = (points[j] - a).cross(&(points[k] - a));
        let norm = normal.norm();
        if norm < 1e-12 {
            continue;
        }
        let normal = normal / norm;
        let d = -normal.dot(&a);
        let count = points
            .iter()
            .filter(|p| (normal.dot(p) + d).abs() <= params.inlier_threshold)
            .count();
        if count > best_count {
            best_count = count;
            best_plane = Some((normal, d));
            // Standard adaptive stopping rule on the inlier ratio.
            let w = count as f64 / n as f64;
            let p_all = w * w * w;
            if p_all >= 1.0 - 1e-12 {
                break;
            }
            let needed = ((1.0f64 - 0.999).ln() / (1.0 - p_all).ln()).ceil();
            required = required.min(needed.max(1.0) as u32).max(iter);
        }
    }

    let Some((normal, d)) = best_plane else {
        return Ok(None);
    };
    if best_count < params.min_inliers {
        return Ok(None);
    }

    // Least-squares refit, then one inlier recount with the refined model.
    let inliers = collect_inliers(points, &normal, d, params.inlier_threshold);
    let (normal, d) = least_squares_plane(points, &inliers).unwrap_or((normal, d));
    let inliers = collect_inliers(points, &normal, d, params.inlier_threshold);
    if inliers.len() < params.min_inliers {
        return Ok(None);
    }
    let (normal, d) = least_squares_plane(points, &inliers).unwrap_or((normal, d));
    let (normal, d) = canonicalize(normal, d);

    let mut ss = 0.0;
    for &i in &inliers {
        ss += (normal.dot(&points[i]) + d).powi(2);
    }
    let rms = (ss / inliers.len() as f64).sqrt();
    Ok(Some(PlaneFit {
        model: PlaneModel {
            normal,
            d,
            inlier_count: inliers.len(),
            rms_residual: rms,
        },
        inliers,
    }))
}

fn collect_inliers(
    points: &[Vector3<f64>],
    normal: &Vector3<f64>,
    d: f64,
    threshold: f64,
) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (normal.dot(p) + d).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Orthogonal-distance least squares: the plane normal is the eigenvector of
/// the centered covariance with the smallest eigenvalue.
pub fn least_squares_plane(
    points: &[Vector3<f64>],
    indices: &[usize],
) -> Option<(Vector3<f64>, f64)> {
    if indices.len() < 3 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for &i in indices {
        centroid += points[i];
    }
    centroid /= indices.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let q = points[i] - centroid;
        cov += q * q.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    let norm = normal.norm();
    if norm < 1e-12 {
        return None;
    }
    let normal = normal / norm;
    Some((normal, -normal.dot(&centroid)))
}

/// Fix the sign ambiguity: non-negative offset, ties broken by the first
/// non-negative normal component.
fn canonicalize(normal: Vector3<f64>, d: f64) -> (Vector3<f64>, f64) {
    let flip = if d != 0.0 {
        d < 0.0
    } else if normal.x != 0.0 {
        normal.x < 0.0
    } else if normal.y != 0.0 {
        normal.y < 0.0
    } else {
        normal.z < 0.0
    };
    if flip {
        (-normal, -d)
    } else {
        (normal, d)
    }
}

fn distinct_triple(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n);
    while j == i {
        j = rng.random_range(0..n);
    }
    let mut k = rng.random_range(0..n);
    while k == i || k == j {
        k = rng.random_range(0..n);
    }
    (i, j, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn params(seed: u64) -> RansacParams {
        RansacParams {
            max_iterations: 200,
            inlier_threshold: 0.01,
            min_inliers: 50,
            seed,
        }
    }

    #[test]
    fn exactly_coplanar_points_fit_with_zero_residual() {
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|i| {
                let x = (i % 10) as f64 * 0.1;
                let y = (i / 10) as f64 * 0.1;
                Vector3::new(x, y, 0.3 + 0.5 * x - 0.2 * y)
            })
            .collect();
        let fit = fit_plane_ransac(&points, &params(1)).unwrap().unwrap();
        assert_eq!(fit.inliers.len(), 100);
        assert!(fit.model.rms_residual < 1e-12);
    }

    #[test]
    fn too_few_points_is_no_plane() {
        let points = vec![Vector3::zeros(), Vector3::x()];
        assert!(fit_plane_ransac(&points, &params(1)).unwrap().is_none());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = StdRng::seed_from_u64(10);
        let points: Vec<Vector3<f64>> = (0..200)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.002..0.002),
                )
            })
            .collect();
        let a = fit_plane_ransac(&points, &params(7)).unwrap().unwrap();
        let b = fit_plane_ransac(&points, &params(7)).unwrap().unwrap();
        assert_eq!(a.model.normal, b.model.normal);
        assert_eq!(a.model.d, b.model.d);
        assert_eq!(a.inliers, b.inliers);
    }

    #[test]
    fn outliers_do_not_move_the_plane() {
        // 70 plane points with 2 mm noise plus 30 uniform outliers; the
        // oracle is the least-squares fit on the true inlier set.
        let mut rng = StdRng::seed_from_u64(20);
        let true_normal = Vector3::new(0.1, -0.2, 1.0).normalize();
        let true_d = -0.4;
        let mut points = Vec::new();
        for _ in 0..70 {
            let x = rng.random_range(-1.0..1.0);
            let y = rng.random_range(-1.0..1.0);
            // Solve n.p + d = noise for z.
            let noise: f64 = rng.random_range(-0.002..0.002);
            let z = (noise - true_d - true_normal.x * x - true_normal.y * y) / true_normal.z;
            points.push(Vector3::new(x, y, z));
        }
        for _ in 0..30 {
            points.push(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-2.0..2.0),
            ));
        }
        let oracle_indices: Vec<usize> = (0..70).collect();
        let (on, od) = least_squares_plane(&points, &oracle_indices).unwrap();

        let fit = fit_with_seed(&points, 3).unwrap();
        let angle = fit.model.normal.dot(&on).abs().clamp(-1.0, 1.0).acos();
        assert!(angle < 1f64.to_radians(), "normal off by {} deg", angle.to_degrees());
        let od_c = if od * fit.model.d < 0.0 { -od } else { od };
        assert!((fit.model.d - od_c).abs() < 0.003, "offset error {}", fit.model.d - od_c);
    }

    fn fit_with_seed(points: &[Vector3<f64>], seed: u64) -> Option<PlaneFit> {
        fit_plane_ransac(
            points,
            &RansacParams {
                max_iterations: 500,
                inlier_threshold: 0.01,
                min_inliers: 40,
                seed,
            },
        )
        .unwrap()
    }
}
