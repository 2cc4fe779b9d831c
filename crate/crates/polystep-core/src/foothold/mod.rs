//! Safe foothold generation from a polygon map.
//!
//! The polygon map is densified into a world-frame point cloud (one lattice
//! point per grid cell inside each polygon's convex hull), moved into the
//! base frame, range- and height-filtered into per-cell maxima, split into
//! height layers, eroded per layer to strip unstable edge cells, and finally
//! scanned for the nearest cell the robot may step on.

mod morph;

pub use morph::{erode_once, layer_and_erode};

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::PolygonSegment;
use crate::geometry::{Frame, GeometryError, PointCloud, Pose};
use crate::poly2d;

#[derive(Debug, Error)]
pub enum FootholdError {
    #[error("invalid foothold parameter: {0}")]
    BadParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Grid and filtering parameters. Defaults are sized so a 26 x 9.6 cm foot
/// fits the eroded interior of a 28 cm tread.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FootholdParams {
    /// Grid resolution in meters.
    pub g_res: f64,
    /// Half-range of the XY acceptance box around the base, meters.
    pub g_range: f64,
    /// Max step-up above the current sole height, meters.
    pub g_z: f64,
    /// Height-layer thickness, meters.
    pub h_layer: f64,
    /// Erosion passes per layer.
    pub n_erosion: u32,
    /// Half-width of the sole-height band that gets one extra erosion pass,
    /// and the minimum climb for candidate eligibility, meters.
    pub delta_foot: f64,
}

impl Default for FootholdParams {
    fn default() -> Self {
        // One-centimeter cells: at 2 cm the grid quantization of the eroded
        // window biases foot placement by up to a full cell, which a 26 cm
        // foot on a 28 cm tread cannot afford.
        Self {
            g_res: 0.01,
            g_range: 1.0,
            g_z: 0.18,
            h_layer: 0.05,
            n_erosion: 2,
            delta_foot: 0.02,
        }
    }
}

impl FootholdParams {
    pub fn validate(&self) -> Result<(), FootholdError> {
        let positives = [
            ("g_res", self.g_res),
            ("g_range", self.g_range),
            ("g_z", self.g_z),
            ("h_layer", self.h_layer),
            ("delta_foot", self.delta_foot),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(FootholdError::BadParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.g_res >= self.g_range {
            return Err(FootholdError::BadParams(format!(
                "g_res {} must be below g_range {}",
                self.g_res, self.g_range
            )));
        }
        Ok(())
    }
}

/// Sole heights of both feet's toe and heel markers, base frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FootState {
    pub left_toe_z: f64,
    pub right_toe_z: f64,
    pub left_heel_z: f64,
    pub right_heel_z: f64,
}

impl FootState {
    pub fn level(z: f64) -> Self {
        Self {
            left_toe_z: z,
            right_toe_z: z,
            left_heel_z: z,
            right_heel_z: z,
        }
    }

    /// Minimum sole height over toes and heels.
    pub fn z_foot(&self) -> f64 {
        self.left_toe_z
            .min(self.right_toe_z)
            .min(self.left_heel_z)
            .min(self.right_heel_z)
    }
}

/// One occupied grid cell: the max-height point that fell into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    /// Position of the retained point, base frame.
    pub pos: Vector3<f64>,
    /// Height layer index, `floor(z / h_layer)`.
    pub layer: i64,
}

/// Sparse XY grid of per-cell maximum-height points, base frame.
///
/// Cells are keyed by nearest-multiple binning, `(i, j) =
/// (round(x / g_res), round(y / g_res))`, so the lattice points emitted by
/// [`build_dense_cloud`] sit at bin centers instead of bin boundaries
/// (boundary binning lets float noise collide neighbors into one key and
/// punch holes that erosion then amplifies). Cells are stored in sorted
/// order so output is canonical regardless of how callers parallelize the
/// rasterization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridCloud {
    pub cells: BTreeMap<(i64, i64), GridCell>,
}

/// Grid key of an XY position at pitch `g_res` (nearest-multiple binning).
#[inline]
pub fn grid_key(x: f64, y: f64, g_res: f64) -> (i64, i64) {
    (
        (x / g_res).round() as i64,
        (y / g_res).round() as i64,
    )
}

impl GridCloud {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells mapped through a rigid transform and re-binned at pitch
    /// `g_res`. Re-binning collisions keep the higher point.
    pub fn transformed(&self, pose: &Pose, g_res: f64) -> GridCloud {
        let mut out = GridCloud::default();
        for cell in self.cells.values() {
            let p = pose.transform_point(&cell.pos);
            let key = grid_key(p.x, p.y, g_res);
            let moved = GridCell {
                pos: p,
                layer: cell.layer,
            };
            match out.cells.get_mut(&key) {
                Some(existing) if existing.pos.z >= p.z => {}
                Some(existing) => *existing = moved,
                None => {
                    out.cells.insert(key, moved);
                }
            }
        }
        out
    }
}

/// Selected foothold: the nearest eligible cell, the optional next-step cell
/// above it, and its bearing relative to the base heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootholdCandidate {
    pub p_star: Vector3<f64>,
    pub p_star2: Option<Vector3<f64>>,
    /// Bearing of `p_star`, wrapped to [-π, π].
    pub theta_rel: f64,
}

/// Rasterize polygons into a dense world-frame cloud.
///
/// Per polygon: the XY-flattened vertices give a 2D convex hull; lattice
/// points at pitch `g_res` (anchored at multiples of `g_res`, boundary
/// inclusive) inside the hull are emitted with z set to the mean of the
/// original vertex heights. Polygons with degenerate hulls are skipped with
/// a debug log. The result is the union over all polygons.
pub fn build_dense_cloud(polygons: &[PolygonSegment], g_res: f64) -> PointCloud {
    let mut points = Vec::new();
    for (idx, poly) in polygons.iter().enumerate() {
        if poly.vertices.len() < 3 {
            log::debug!("polygon {idx}: fewer than 3 vertices, skipped");
            continue;
        }
        let flat: Vec<Vector2<f64>> = poly
            .vertices
            .iter()
            .map(|v| Vector2::new(v.x, v.y))
            .collect();
        let hull = poly2d::convex_hull(&flat);
        if hull.len() < 3 {
            log::debug!("polygon {idx}: collinear footprint, skipped");
            continue;
        }
        let z_mean = poly.vertices.iter().map(|v| v.z).sum::<f64>() / poly.vertices.len() as f64;

        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        let i0 = ((xmin / g_res) - 1e-9).ceil() as i64;
        let i1 = ((xmax / g_res) + 1e-9).floor() as i64;
        let j0 = ((ymin / g_res) - 1e-9).ceil() as i64;
        let j1 = ((ymax / g_res) + 1e-9).floor() as i64;
        for i in i0..=i1 {
            for j in j0..=j1 {
                let p = Vector2::new(i as f64 * g_res, j as f64 * g_res);
                if poly2d::point_in_convex(&hull, &p, 1e-9) {
                    points.push(Vector3::new(p.x, p.y, z_mean));
                }
            }
        }
    }
    PointCloud::new(points, Frame::World)
}

/// Range filter, per-cell max and step-up cut, producing the base-frame grid.
pub fn filter_cloud(
    cloud: &PointCloud,
    base_pose: &Pose,
    foot: &FootState,
    params: &FootholdParams,
) -> Result<GridCloud, FootholdError> {
    params.validate()?;
    cloud.expect_frame(Frame::World)?;
    let world_to_base = base_pose.inverse();

    let mut cells: BTreeMap<(i64, i64), GridCell> = BTreeMap::new();
    for p_world in &cloud.points {
        let p = world_to_base.transform_point(p_world);
        if p.x.abs() > params.g_range || p.y.abs() > params.g_range {
            continue;
        }
        let key = grid_key(p.x, p.y, params.g_res);
        match cells.get_mut(&key) {
            Some(cell) if cell.pos.z >= p.z => {}
            slot => {
                let cell = GridCell { pos: p, layer: 0 };
                match slot {
                    Some(existing) => *existing = cell,
                    None => {
                        cells.insert(key, cell);
                    }
                }
            }
        }
    }

    // Cut everything above the reachable step-up height.
    let z_cut = foot.z_foot() + params.g_z;
    cells.retain(|_, cell| cell.pos.z <= z_cut);
    Ok(GridCloud { cells })
}

/// Pick the primary (and optional next-step) foothold from an eroded grid.
///
/// Eligible cells satisfy `z > z_foot + delta_foot`; the primary candidate
/// is the one nearest the base in XY (ties broken lexicographically on
/// (x, y)), and the next-step candidate repeats the argmin over cells at
/// least half a layer above the primary. Returns `None` when nothing is
/// eligible — the robot must not step.
pub fn select_candidates(
    grid: &GridCloud,
    base_pose: &Pose,
    foot: &FootState,
    params: &FootholdParams,
) -> Option<FootholdCandidate> {
    let z_min = foot.z_foot() + params.delta_foot;
    let nearest = |floor_z: f64| -> Option<Vector3<f64>> {
        grid.cells
            .values()
            .filter(|c| c.pos.z > floor_z)
            .min_by(|a, b| {
                let da = a.pos.x * a.pos.x + a.pos.y * a.pos.y;
                let db = b.pos.x * b.pos.x + b.pos.y * b.pos.y;
                da.partial_cmp(&db)
                    .unwrap()
                    .then_with(|| a.pos.x.partial_cmp(&b.pos.x).unwrap())
                    .then_with(|| a.pos.y.partial_cmp(&b.pos.y).unwrap())
            })
            .map(|c| c.pos)
    };

    let p_star = nearest(z_min)?;
    // Half-layer hysteresis keeps the next-step pick off the primary's plane.
    let p_star2 = nearest(p_star.z + params.h_layer * 0.5);

    let theta_rel = wrap_angle(p_star.y.atan2(p_star.x) - base_pose.yaw());
    Some(FootholdCandidate {
        p_star,
        p_star2,
        theta_rel,
    })
}

/// Wrap an angle into [-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r == -std::f64::consts::PI {
        r = std::f64::consts::PI;
    }
    r
}

/// JSON Lines wire form of a foothold candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub stamp: f64,
    pub p_star: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_star2: Option<[f64; 3]>,
    pub theta_rel: f64,
    /// Cells surviving erosion when the candidate was picked.
    pub n_cells: usize,
}

impl CandidateRecord {
    pub fn new(stamp: f64, candidate: &FootholdCandidate, n_cells: usize) -> Self {
        Self {
            stamp,
            p_star: candidate.p_star.into(),
            p_star2: candidate.p_star2.map(Into::into),
            theta_rel: candidate.theta_rel,
            n_cells,
        }
    }
}

/// Debug dump of a grid for plotting: `i, j, x, y, z, k, eroded_flag` per
/// pre-erosion cell, flag 1 when erosion removed it.
pub fn write_grid_csv<W: std::io::Write>(
    mut w: W,
    pre: &GridCloud,
    post: &GridCloud,
    h_layer: f64,
) -> std::io::Result<()> {
    writeln!(w, "i,j,x,y,z,k,eroded_flag")?;
    for (key, cell) in &pre.cells {
        let k = (cell.pos.z / h_layer).floor() as i64;
        let eroded = !post.cells.contains_key(key);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            key.0,
            key.1,
            cell.pos.x,
            cell.pos.y,
            cell.pos.z,
            k,
            u8::from(eroded)
        )?;
    }
    Ok(())
}
