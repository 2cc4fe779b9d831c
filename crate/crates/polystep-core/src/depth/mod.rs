//! Per-frame polygonal plane extraction from depth images.
//!
//! One depth frame plus a camera pose in the world turns into a set of
//! world-frame polygonal plane segments: diffuse the depth, compute normals,
//! split the frame into contour-bounded regions, fit planes per region with
//! RANSAC, and trace each inlier set's footprint as a simplified convex
//! polygon. Near-horizontal segments are flagged as tread candidates.
//!
//! The whole path is a pure per-frame transformation; frames may be
//! processed in parallel by callers.

mod diffusion;
mod normals;
mod ransac;
mod regions;

pub use diffusion::diffuse;
pub use normals::{compute_normals, compute_normals_strided, inpaint_small_holes, NormalMap};
pub use ransac::{fit_plane_ransac, least_squares_plane, PlaneFit};
pub use regions::{detect_plane_regions, PixelRegion, RegionParams};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_to_point, CameraIntrinsics, DepthImage, Pose};
use crate::poly2d;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("diffusion config: {0}")]
    BadDiffusionParams(String),
    #[error("ransac config: {0}")]
    BadRansacParams(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Anisotropic diffusion parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    /// Step weight; explicit 4-neighborhood stability needs 0 < lambda <= 0.25.
    pub lambda: f64,
    pub iterations: u32,
    /// Conduction scale in meters of depth gradient.
    pub kappa: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            iterations: 3,
            kappa: 0.03,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.lambda > 0.0 && self.lambda <= 0.25) {
            return Err(PipelineError::BadDiffusionParams(format!(
                "lambda {} outside (0, 0.25]",
                self.lambda
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(PipelineError::BadDiffusionParams(format!(
                "kappa {} must be positive",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// RANSAC plane fitting parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: u32,
    /// Point-to-plane inlier distance in meters.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            inlier_threshold: 0.010,
            min_inliers: 50,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.inlier_threshold > 0.0) {
            return Err(PipelineError::BadRansacParams(format!(
                "inlier_threshold {} must be positive",
                self.inlier_threshold
            )));
        }
        if self.min_inliers < 3 {
            return Err(PipelineError::BadRansacParams(format!(
                "min_inliers {} must be at least 3",
                self.min_inliers
            )));
        }
        if self.max_iterations == 0 {
            return Err(PipelineError::BadRansacParams(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Plane `n . p + d = 0` with fit quality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub d: f64,
    pub inlier_count: usize,
    pub rms_residual: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) + self.d).abs()
    }
}

/// Planar polygon in the world frame with its plane model.
#[derive(Debug, Clone)]
pub struct PolygonSegment {
    /// Ordered vertices, world frame, meters. All lie on `plane`.
    pub vertices: Vec<Vector3<f64>>,
    pub plane: PlaneModel,
    /// Frame timestamp in seconds.
    pub stamp: f64,
    /// Near-horizontal in the world (step tread candidate).
    pub tread: bool,
}

impl PolygonSegment {
    /// Mean height of the vertices; the tread height for flat segments.
    pub fn mean_height(&self) -> f64 {
        self.vertices.iter().map(|v| v.z).sum::<f64>() / self.vertices.len() as f64
    }
}

/// Full extraction configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub diffusion: DiffusionParams,
    pub ransac: RansacParams,
    pub regions: RegionParams,
    /// Segments with |world normal z| >= cos(max_tilt) are tread-flagged.
    pub max_tilt_deg: f64,
    /// Douglas-Peucker tolerance for polygon boundaries, meters.
    pub simplify_tolerance: f64,
    /// Planes extracted per region before moving on (regions may merge more
    /// than one surface when contours have holes).
    pub max_planes_per_region: u32,
    /// Growth accepts pixels up to this multiple of the inlier threshold
    /// off-plane: diffusion rounds crease corners, and the rounded band
    /// still belongs to the surface footprint.
    pub growth_band: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionParams::default(),
            ransac: RansacParams::default(),
            regions: RegionParams::default(),
            max_tilt_deg: 15.0,
            simplify_tolerance: 0.01,
            max_planes_per_region: 3,
            growth_band: 2.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.diffusion.validate()?;
        self.ransac.validate()?;
        Ok(())
    }
}

/// Extract world-frame polygonal plane segments from one depth frame.
///
/// Per contour-bounded region: RANSAC proposes a plane, the inlier set is
/// grown across connected on-plane pixels of the whole frame (contour bands
/// are conservative, and the pixels they shaved off still belong to the
/// surface), the grown footprint becomes a simplified convex polygon, and
/// its pixels are claimed so overlapping regions of the same surface do not
/// produce duplicates. Regions that fail plane fitting are dropped (with a
/// debug log), never propagated as errors. Output order is deterministic.
pub fn extract_polygon_map(
    img: &DepthImage,
    intr: &CameraIntrinsics,
    camera_pose_w: &Pose,
    stamp: f64,
    cfg: &PipelineConfig,
) -> Result<Vec<PolygonSegment>, PipelineError> {
    cfg.validate()?;
    let diffused = diffuse(img, &cfg.diffusion)?;
    // Small dropout holes are bridged for the normal stencils only; plane
    // fitting below still uses the (unfilled) diffused depths.
    let support = inpaint_small_holes(&diffused, 1);
    let normal_map = compute_normals_strided(&support, intr, cfg.regions.normal_stride);
    let regions = detect_plane_regions(&normal_map, &diffused, &cfg.regions);

    let w = img.width() as usize;
    let cos_max_tilt = cfg.max_tilt_deg.to_radians().cos();
    // One shared backprojection of the diffused frame.
    let mut frame_points = vec![Vector3::zeros(); w * img.height() as usize];
    for v in 0..img.height() {
        for u in 0..img.width() {
            let d = diffused.raw(u, v);
            if d > 0.0 {
                frame_points[v as usize * w + u as usize] =
                    pixel_to_point(intr, u as f64, v as f64, d);
            }
        }
    }
    let mut claimed = vec![false; w * img.height() as usize];
    let mut segments = Vec::new();
    for (region_idx, region) in regions.iter().enumerate() {
        let mut active: Vec<(u32, u32)> = region
            .pixels
            .iter()
            .filter(|&&(u, v)| !claimed[v as usize * w + u as usize])
            .copied()
            .collect();

        for round in 0..cfg.max_planes_per_region {
            if active.len() < cfg.ransac.min_inliers.max(3) {
                break;
            }
            let points: Vec<Vector3<f64>> = active
                .iter()
                .map(|&(u, v)| frame_points[v as usize * w + u as usize])
                .collect();
            let sub_params = RansacParams {
                // Distinct deterministic stream per region and round.
                seed: cfg
                    .ransac
                    .seed
                    .wrapping_add(region_idx as u64)
                    .wrapping_add((round as u64) << 32),
                ..cfg.ransac
            };
            let Some(fit) = fit_plane_ransac(&points, &sub_params)? else {
                break;
            };

            let seeds: Vec<(u32, u32)> = fit.inliers.iter().map(|&i| active[i]).collect();
            let grown = grow_plane(&diffused, &frame_points, &fit.model, &seeds, cfg);
            if grown.len() >= cfg.ransac.min_inliers {
                // Image rows and columns intersect the plane in straight
                // lines, so per-row / per-column extremes are the only hull
                // candidates; the refit uses a uniform subsample.
                let boundary = scanline_extremes(&grown);
                let hull_points: Vec<Vector3<f64>> = boundary
                    .iter()
                    .map(|&(u, v)| frame_points[v as usize * w + u as usize])
                    .collect();
                // Unbiased area subsample for the plane refit; the boundary
                // alone over-weights the bleed bands at the perimeter.
                let fit_points: Vec<Vector3<f64>> = grown
                    .iter()
                    .step_by(8)
                    .map(|&(u, v)| frame_points[v as usize * w + u as usize])
                    .collect();
                match polygon_from_points(
                    &fit_points,
                    &hull_points,
                    grown.len(),
                    camera_pose_w,
                    stamp,
                    cfg,
                    cos_max_tilt,
                ) {
                    Some(segment) => {
                        // Claim only the strict core: the wider crease band
                        // belongs to both adjoining surfaces and must stay
                        // available to them.
                        let strict = cfg.ransac.inlier_threshold;
                        for &(u, v) in &grown {
                            let idx = v as usize * w + u as usize;
                            if fit.model.distance(&frame_points[idx]) <= strict {
                                claimed[idx] = true;
                            }
                        }
                        segments.push(segment);
                    }
                    None => log::debug!(
                        "region {region_idx}: degenerate footprint dropped ({} pixels)",
                        grown.len()
                    ),
                }
            }
            // Keep only pixels this plane did not consume for another pass.
            let threshold = cfg.ransac.inlier_threshold;
            active.retain(|&(u, v)| {
                if claimed[v as usize * w + u as usize] {
                    return false;
                }
                fit.model.distance(&frame_points[v as usize * w + u as usize]) > threshold
            });
        }
    }
    Ok(segments)
}

/// Flood outward from the seed pixels over valid on-plane pixels
/// (4-connected) within the seeds' dilated bounding box. Claimed pixels are
/// deliberately not excluded: claims deduplicate regions of one surface,
/// while adjoining surfaces legitimately share their corner bands.
fn grow_plane(
    img: &DepthImage,
    frame_points: &[Vector3<f64>],
    model: &PlaneModel,
    seeds: &[(u32, u32)],
    cfg: &PipelineConfig,
) -> Vec<(u32, u32)> {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let dilate = (4 * cfg.regions.normal_stride + 8) as i64;
    let (mut u0, mut u1, mut v0, mut v1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for &(u, v) in seeds {
        u0 = u0.min(u as i64);
        u1 = u1.max(u as i64);
        v0 = v0.min(v as i64);
        v1 = v1.max(v as i64);
    }
    let u0 = (u0 - dilate).max(0);
    let u1 = (u1 + dilate).min(w - 1);
    let v0 = (v0 - dilate).max(0);
    let v1 = (v1 + dilate).min(h - 1);

    let data = img.data();
    let accept = cfg.ransac.inlier_threshold * cfg.growth_band.max(1.0);
    let on_plane = |u: i64, v: i64| -> bool {
        let idx = v as usize * w as usize + u as usize;
        if data[idx] <= 0.0 {
            return false;
        }
        model.distance(&frame_points[idx]) <= accept
    };

    let bw = (u1 - u0 + 1) as usize;
    let bh = (v1 - v0 + 1) as usize;
    let mut visited = vec![false; bw * bh];
    let local = |u: i64, v: i64| (v - v0) as usize * bw + (u - u0) as usize;
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for &(u, v) in seeds {
        let (u, v) = (u as i64, v as i64);
        if !visited[local(u, v)] && on_plane(u, v) {
            visited[local(u, v)] = true;
            stack.push((u, v));
        }
    }
    // Stack-order flood is deterministic for identical inputs; no sort.
    while let Some((u, v)) = stack.pop() {
        out.push((u as u32, v as u32));
        for (nu, nv) in [(u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)] {
            if nu < u0 || nu > u1 || nv < v0 || nv > v1 {
                continue;
            }
            if !visited[local(nu, nv)] && on_plane(nu, nv) {
                visited[local(nu, nv)] = true;
                stack.push((nu, nv));
            }
        }
    }
    out
}

/// Per-row and per-column extreme pixels of a pixel set.
fn scanline_extremes(pixels: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let (mut umax, mut vmax) = (0u32, 0u32);
    for &(u, v) in pixels {
        umax = umax.max(u);
        vmax = vmax.max(v);
    }
    let mut by_u = vec![(u32::MAX, 0u32); umax as usize + 1];
    let mut by_v = vec![(u32::MAX, 0u32); vmax as usize + 1];
    for &(u, v) in pixels {
        let eu = &mut by_u[u as usize];
        eu.0 = eu.0.min(v);
        eu.1 = eu.1.max(v);
        let ev = &mut by_v[v as usize];
        ev.0 = ev.0.min(u);
        ev.1 = ev.1.max(u);
    }
    let mut out = Vec::with_capacity(2 * (by_u.len() + by_v.len()));
    for (u, &(v0, v1)) in by_u.iter().enumerate() {
        if v0 != u32::MAX {
            out.push((u as u32, v0));
            out.push((u as u32, v1));
        }
    }
    for (v, &(u0, u1)) in by_v.iter().enumerate() {
        if u0 != u32::MAX {
            out.push((u0, v as u32));
            out.push((u1, v as u32));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Least-squares plane through the grown footprint, projected hull, and the
/// world-frame polygon segment.
fn polygon_from_points(
    points: &[Vector3<f64>],
    hull_points: &[Vector3<f64>],
    support: usize,
    camera_pose_w: &Pose,
    stamp: f64,
    cfg: &PipelineConfig,
    cos_max_tilt: f64,
) -> Option<PolygonSegment> {
    let all: Vec<usize> = (0..points.len()).collect();
    let (mut n, mut d) = least_squares_plane(points, &all)?;
    // Trimmed refit: growth admits a band up to the inlier threshold thick,
    // which brushes adjoining surfaces (a riser's bottom centimeter) and
    // tilts a plain least-squares fit. Iterate the fit on the well-fitting
    // core until it settles.
    let trim = 0.5 * cfg.ransac.inlier_threshold;
    for _ in 0..3 {
        let core: Vec<usize> = (0..points.len())
            .filter(|&i| (n.dot(&points[i]) + d).abs() <= trim)
            .collect();
        if core.len() < 3.max(points.len() / 4) {
            break;
        }
        let (n2, d2) = least_squares_plane(points, &core)?;
        let moved = (n2 - n).norm() + (d2 - d).abs();
        n = n2;
        d = d2;
        if moved < 1e-9 {
            break;
        }
    }

    let mut ss = 0.0;
    for p in points {
        ss += (n.dot(p) + d).powi(2);
    }
    let rms = (ss / points.len() as f64).sqrt();

    // In-plane orthonormal basis, anchored at the projected centroid.
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = helper.cross(&n).normalize();
    let e2 = n.cross(&e1);
    let mut origin = Vector3::zeros();
    for p in points {
        origin += p;
    }
    origin /= points.len() as f64;
    origin -= (n.dot(&origin) + d) * n;

    let plane_2d: Vec<Vector2<f64>> = hull_points
        .iter()
        .map(|p| {
            let q = p - (n.dot(p) + d) * n;
            Vector2::new((q - origin).dot(&e1), (q - origin).dot(&e2))
        })
        .collect();

    let hull = poly2d::convex_hull(&plane_2d);
    if hull.len() < 3 {
        return None;
    }
    let simplified = poly2d::simplify_closed(&hull, cfg.simplify_tolerance);
    if simplified.len() < 3 {
        return None;
    }

    let vertices: Vec<Vector3<f64>> = simplified
        .iter()
        .map(|q| camera_pose_w.transform_point(&(origin + e1 * q.x + e2 * q.y)))
        .collect();

    // Plane model expressed in the world frame.
    let n_world = camera_pose_w.rotation * n;
    let d_world = d - n_world.dot(&camera_pose_w.translation);
    let tread = n_world.z.abs() >= cos_max_tilt;
    Some(PolygonSegment {
        vertices,
        plane: PlaneModel {
            normal: n_world,
            d: d_world,
            inlier_count: support,
            rms_residual: rms,
        },
        stamp,
        tread,
    })
}

/// JSON Lines wire form of a polygon segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolygonRecord {
    pub stamp: f64,
    pub vertices: Vec<[f64; 3]>,
    pub normal: [f64; 3],
    pub d: f64,
    pub inliers: usize,
    pub rms: f64,
    pub tread: bool,
}

impl From<&PolygonSegment> for PolygonRecord {
    fn from(seg: &PolygonSegment) -> Self {
        Self {
            stamp: seg.stamp,
            vertices: seg.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            normal: [seg.plane.normal.x, seg.plane.normal.y, seg.plane.normal.z],
            d: seg.plane.d,
            inliers: seg.plane.inlier_count,
            rms: seg.plane.rms_residual,
            tread: seg.tread,
        }
    }
}

impl From<&PolygonRecord> for PolygonSegment {
    fn from(rec: &PolygonRecord) -> Self {
        Self {
            vertices: rec
                .vertices
                .iter()
                .map(|v| Vector3::new(v[0], v[1], v[2]))
                .collect(),
            plane: PlaneModel {
                normal: Vector3::new(rec.normal[0], rec.normal[1], rec.normal[2]),
                d: rec.d,
                inlier_count: rec.inliers,
                rms_residual: rec.rms,
            },
            stamp: rec.stamp,
            tread: rec.tread,
        }
    }
}
