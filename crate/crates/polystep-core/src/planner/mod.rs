//! Footstep planning: torso waypoints plus foothold candidates in, timed
//! collision-checked foot trajectories out.
//!
//! Foot targets come from the torso pose through a yaw-rotated lateral
//! offset, then snap onto the nearest foothold candidate whose eroded cell
//! neighborhood admits the whole foot rectangle. Consecutive footprints are
//! collision-checked with the rotating-rectangle test; conflicts shrink the
//! stride up to three times before the plan truncates. Vertical swing is a
//! lift/landing sinusoid pair, horizontal motion is linear, and every
//! timestamp sits on the `dt_plan` grid.

mod rect;

pub use rect::{rect_intersect, separation_margin, OrientedRectangle};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foothold::{FootholdCandidate, GridCloud};
use crate::geometry::Rotation;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid gait parameter: {0}")]
    BadParams(String),
    #[error("swing time {t} outside [0, {t_total}]")]
    OutOfRange { t: f64, t_total: f64 },
    #[error("torso path is empty")]
    EmptyPath,
}

/// Torso position and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorsoPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
}

impl TorsoPose {
    pub fn new(x: f64, y: f64, z: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            z,
            phi: crate::foothold::wrap_angle(phi),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.phi]
    }
}

/// Which foot swings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// Double Step (both feet reach a level before advancing, replanning at
/// stable stance) vs Single Step (alternating feet on successive levels,
/// replanning while walking).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitMode {
    Ds,
    Ss,
}

/// Gait timing and geometry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    /// Lateral foot offset from the torso centerline, meters.
    pub y_b: f64,
    /// Torso height above the feet, meters.
    pub z_t: f64,
    /// Swing apex height above the starting sole, meters.
    pub z_max: f64,
    /// Lift-off phase duration, seconds.
    pub t_lift: f64,
    /// Landing phase duration, seconds.
    pub t_land: f64,
    /// Full swing duration; must equal `t_lift + t_land` so the horizontal
    /// and vertical phases share one clock.
    pub t_step: f64,
    /// Discretization interval for timestamps and swing samples, seconds.
    pub dt_plan: f64,
    pub gait_mode: GaitMode,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            y_b: 0.1,
            z_t: 0.8,
            z_max: 0.18,
            t_lift: 0.4,
            t_land: 0.4,
            t_step: 0.8,
            dt_plan: 0.01,
            gait_mode: GaitMode::Ds,
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        for (name, v) in [
            ("y_b", self.y_b),
            ("z_t", self.z_t),
            ("z_max", self.z_max),
            ("t_lift", self.t_lift),
            ("t_land", self.t_land),
            ("t_step", self.t_step),
            ("dt_plan", self.dt_plan),
        ] {
            if !(v > 0.0) {
                return Err(PlannerError::BadParams(format!("{name} must be > 0, got {v}")));
            }
        }
        let t = self.t_lift + self.t_land;
        if (self.t_step - t).abs() > 1e-9 {
            return Err(PlannerError::BadParams(format!(
                "t_step {} must equal t_lift + t_land = {t}",
                self.t_step
            )));
        }
        Ok(())
    }

    /// Swing duration.
    pub fn total_swing(&self) -> f64 {
        self.t_lift + self.t_land
    }

    /// Plan ticks per step: the swing duration rounded up to the grid.
    pub fn ticks_per_step(&self) -> u64 {
        ((self.t_step / self.dt_plan) - 1e-9).ceil().max(1.0) as u64
    }
}

/// Foot footprint dimensions (long axis first).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FootGeometry {
    pub length: f64,
    pub width: f64,
}

impl Default for FootGeometry {
    fn default() -> Self {
        Self {
            length: 0.26,
            width: 0.096,
        }
    }
}

impl FootGeometry {
    pub fn rect_at(&self, x: f64, y: f64, theta: f64) -> OrientedRectangle {
        OrientedRectangle::new(Vector2::new(x, y), self.length, self.width, theta)
    }
}

/// Eroded terrain cells the planner may place feet on, keyed like
/// [`GridCloud`] at pitch `g_res`, in the same frame as the torso path.
///
/// `margin` is the erosion safety margin already applied to the cells
/// (`n_erosion * g_res`): containment checks shrink the foot rectangle by it
/// per side, since the eroded set vouches for that much surrounding surface.
#[derive(Debug, Clone, Copy)]
pub struct Terrain<'a> {
    pub grid: &'a GridCloud,
    pub g_res: f64,
    pub h_layer: f64,
    pub margin: f64,
}

/// One planned footstep.
#[derive(Debug, Clone)]
pub struct PlannedStep {
    pub index: usize,
    /// Start time of the swing, seconds from plan start, on the grid.
    pub t: f64,
    pub side: Side,
    /// Foot landing target.
    pub foot: Vector3<f64>,
    /// Torso pose at step completion.
    pub torso: TorsoPose,
    /// Swing profile samples `(t_rel, along_track, height)` relative to the
    /// swing start position.
    pub swing: Vec<(f64, f64, f64)>,
}

/// How a plan ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlanStatus {
    Complete,
    NoFootholds,
    Truncated { at_step: usize, reason: String },
}

/// Timed footstep sequence.
#[derive(Debug, Clone)]
pub struct FootstepPlan {
    pub steps: Vec<PlannedStep>,
    pub status: PlanStatus,
    pub dt_plan: f64,
}

/// Foot position from the torso pose: `p_f = p_t + R_z(phi) * b_f` with
/// `b_f = [0, +/-y_b, -z_t]`.
pub fn foot_from_torso(torso: &TorsoPose, side: Side, g: &GaitParams) -> Vector3<f64> {
    let offset = Vector3::new(0.0, side.sign() * g.y_b, -g.z_t);
    torso.position() + Rotation::rot_z(torso.phi) * offset
}

/// Swing sample at time `t` into the step.
///
/// Vertical: `z_max * sin(pi t / (2 t_lift))` while lifting, then
/// `z0 + (z_max - z0) * cos(pi (t - t_lift) / (2 t_land))` while landing —
/// continuous at the hand-off and exactly `z0` at touchdown. Horizontal:
/// linear from `x_start` to `x_end` over the full swing.
pub fn swing_profile(
    t: f64,
    x_start: f64,
    x_end: f64,
    z0: f64,
    g: &GaitParams,
) -> Result<(f64, f64), PlannerError> {
    g.validate()?;
    let t_total = g.total_swing();
    if !(0.0..=t_total + 1e-12).contains(&t) {
        return Err(PlannerError::OutOfRange { t, t_total });
    }
    let z = if t <= g.t_lift {
        g.z_max * (std::f64::consts::PI * t / (2.0 * g.t_lift)).sin()
    } else {
        z0 + (g.z_max - z0)
            * (std::f64::consts::PI * (t - g.t_lift) / (2.0 * g.t_land)).cos()
    };
    let x = x_start + (x_end - x_start) * t / g.t_step;
    Ok((x, z))
}

/// Maximum XY adjustment of a foot target away from its nominal torso-offset
/// position while snapping onto safe cells.
const SNAP_RADIUS: f64 = 0.05;
/// Stride shrink factors tried when a placement is infeasible.
const STRIDE_ATTEMPTS: [f64; 3] = [1.0, 0.66, 0.33];

/// Plan alternating-side footsteps along the torso waypoints.
///
/// Every waypoint after the first is one stance advance: DS mode lands both
/// feet on it (two steps), SS mode one. With `terrain` present each target
/// snaps (within 5 cm) onto the candidate level whose eroded cells contain
/// the full foot rectangle; without it the plan runs in open-floor mode
/// straight from the torso geometry. Infeasible placements shrink the stride
/// toward the previous waypoint up to three times, then the plan truncates.
pub fn plan_steps(
    torso_path: &[TorsoPose],
    candidates: &[FootholdCandidate],
    terrain: Option<Terrain<'_>>,
    foot_geom: &FootGeometry,
    g: &GaitParams,
    first_side: Side,
) -> Result<FootstepPlan, PlannerError> {
    g.validate()?;
    let Some(start) = torso_path.first() else {
        return Err(PlannerError::EmptyPath);
    };
    if terrain.is_some() && candidates.is_empty() {
        return Ok(FootstepPlan {
            steps: Vec::new(),
            status: PlanStatus::NoFootholds,
            dt_plan: g.dt_plan,
        });
    }

    let mut left = foot_from_torso(start, Side::Left, g);
    let mut right = foot_from_torso(start, Side::Right, g);
    let mut prev_rect: Option<OrientedRectangle> = None;
    let mut steps: Vec<PlannedStep> = Vec::new();
    let mut status = PlanStatus::Complete;
    let ticks = g.ticks_per_step();
    let mut side = first_side;

    'waypoints: for w in 1..torso_path.len() {
        let from = torso_path[w - 1];
        let to = torso_path[w];
        let per_level: &[Side] = match g.gait_mode {
            GaitMode::Ds => &[side, side.other()],
            GaitMode::Ss => &[side],
        };
        for &step_side in per_level {
            let mut committed = false;
            for &scale in &STRIDE_ATTEMPTS {
                let torso_target = lerp_torso(&from, &to, scale);
                let nominal = foot_from_torso(&torso_target, step_side, g);
                let target = match terrain {
                    None => Some(nominal),
                    Some(ref terr) => {
                        snap_to_candidates(&nominal, candidates, terr, foot_geom, torso_target.phi)
                    }
                };
                let Some(target) = target else {
                    continue; // no contained placement at this stride
                };
                let start_pos = match step_side {
                    Side::Left => left,
                    Side::Right => right,
                };
                let rise = target.z - start_pos.z;
                if rise > g.z_max + 1e-12 || rise < -1e-9 {
                    continue; // cannot clear, or stepping down (unsupported)
                }
                let rect = foot_geom.rect_at(target.x, target.y, torso_target.phi);
                if let Some(prev) = &prev_rect {
                    if rect_intersect(&rect, prev) {
                        continue;
                    }
                }

                // Commit.
                let t = (steps.len() as u64 + 1).wrapping_mul(ticks) as f64 * g.dt_plan;
                let swing = sample_swing(&start_pos, &target, g);
                match step_side {
                    Side::Left => left = target,
                    Side::Right => right = target,
                }
                let mid = (left + right) * 0.5;
                let torso = TorsoPose::new(mid.x, mid.y, mid.z + g.z_t, torso_target.phi);
                steps.push(PlannedStep {
                    index: steps.len(),
                    t,
                    side: step_side,
                    foot: target,
                    torso,
                    swing,
                });
                prev_rect = Some(rect);
                committed = true;
                break;
            }
            if !committed {
                status = PlanStatus::Truncated {
                    at_step: steps.len(),
                    reason: format!(
                        "no feasible {:?} placement at waypoint {w} after {} stride attempts",
                        step_side,
                        STRIDE_ATTEMPTS.len()
                    ),
                };
                break 'waypoints;
            }
        }
        if g.gait_mode == GaitMode::Ss {
            side = side.other();
        }
    }

    Ok(FootstepPlan {
        steps,
        status,
        dt_plan: g.dt_plan,
    })
}

fn lerp_torso(from: &TorsoPose, to: &TorsoPose, s: f64) -> TorsoPose {
    TorsoPose::new(
        from.x + (to.x - from.x) * s,
        from.y + (to.y - from.y) * s,
        from.z + (to.z - from.z) * s,
        to.phi,
    )
}

/// Find the closest placement to `nominal` (within [`SNAP_RADIUS`]) whose
/// foot rectangle is fully contained in eroded cells of some candidate's
/// level. Candidates are tried nearest-first.
fn snap_to_candidates(
    nominal: &Vector3<f64>,
    candidates: &[FootholdCandidate],
    terrain: &Terrain<'_>,
    foot_geom: &FootGeometry,
    heading: f64,
) -> Option<Vector3<f64>> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let dist = |i: usize| {
        let c = &candidates[i].p_star;
        (c.x - nominal.x).powi(2) + (c.y - nominal.y).powi(2)
    };
    order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap());

    // Half-pitch snap lattice halves the placement quantization error.
    let pitch = terrain.g_res * 0.5;
    let max_cells = (SNAP_RADIUS / pitch).ceil() as i64;
    let mut offsets: Vec<(i64, i64)> = Vec::new();
    for di in -max_cells..=max_cells {
        for dj in -max_cells..=max_cells {
            let dx = di as f64 * pitch;
            let dy = dj as f64 * pitch;
            if dx * dx + dy * dy <= SNAP_RADIUS * SNAP_RADIUS {
                offsets.push((di, dj));
            }
        }
    }
    offsets.sort_by(|a, b| {
        let da = a.0 * a.0 + a.1 * a.1;
        let db = b.0 * b.0 + b.1 * b.1;
        da.cmp(&db).then(a.cmp(b))
    });

    for idx in order {
        let level_z = candidates[idx].p_star.z;
        let contained: Vec<(i64, i64)> = offsets
            .iter()
            .copied()
            .filter(|&(di, dj)| {
                let x = nominal.x + di as f64 * pitch;
                let y = nominal.y + dj as f64 * pitch;
                rect_contained(&foot_geom.rect_at(x, y, heading), terrain, level_z)
            })
            .collect();
        if contained.is_empty() {
            continue;
        }
        // Nearest contained placement: callers aim the nominal at the safe
        // middle of the target surface, so staying close to it is the
        // margin-preserving choice.
        let best = contained
            .iter()
            .min_by(|a, b| {
                let da = a.0 * a.0 + a.1 * a.1;
                let db = b.0 * b.0 + b.1 * b.1;
                da.cmp(&db).then_with(|| a.cmp(b))
            })
            .unwrap();
        return Some(Vector3::new(
            nominal.x + best.0 as f64 * pitch,
            nominal.y + best.1 as f64 * pitch,
            level_z,
        ));
    }
    None
}

/// Every grid cell whose center falls inside the rectangle (shrunk by the
/// erosion margin, since eroded survivors vouch for that much surface around
/// them) must exist and sit within half a layer of the target level. The
/// core never shrinks below 1.5 cells so at least one center row remains.
fn rect_contained(rect: &OrientedRectangle, terrain: &Terrain<'_>, level_z: f64) -> bool {
    let rect = OrientedRectangle::new(
        rect.center,
        (rect.width - 2.0 * terrain.margin).max(1.5 * terrain.g_res),
        (rect.height - 2.0 * terrain.margin).max(1.5 * terrain.g_res),
        rect.theta,
    );
    let corners = rect.corners();
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in corners {
        xmin = xmin.min(c.x);
        xmax = xmax.max(c.x);
        ymin = ymin.min(c.y);
        ymax = ymax.max(c.y);
    }
    let res = terrain.g_res;
    // Keys follow the grid's nearest-multiple binning; a cell's nominal
    // position is (i * res, j * res).
    let i0 = (xmin / res).round() as i64;
    let i1 = (xmax / res).round() as i64;
    let j0 = (ymin / res).round() as i64;
    let j1 = (ymax / res).round() as i64;
    // A center is supported when any nearby cell within about one pitch
    // matches the level; transforms may re-bin cells by one key.
    let supported = |center: &Vector2<f64>| {
        let ci = (center.x / res).round() as i64;
        let cj = (center.y / res).round() as i64;
        for di in -1..=1i64 {
            for dj in -1..=1i64 {
                if let Some(cell) = terrain.grid.cells.get(&(ci + di, cj + dj)) {
                    let dx = cell.pos.x - center.x;
                    let dy = cell.pos.y - center.y;
                    if dx * dx + dy * dy <= (0.85 * res).powi(2)
                        && (cell.pos.z - level_z).abs() <= terrain.h_layer * 0.5 + 1e-9
                    {
                        return true;
                    }
                }
            }
        }
        false
    };
    let mut covered = 0usize;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let center = Vector2::new(i as f64 * res, j as f64 * res);
            if !rect.contains(&center) {
                continue;
            }
            covered += 1;
            if !supported(&center) {
                return false;
            }
        }
    }
    covered > 0
}

fn sample_swing(start: &Vector3<f64>, target: &Vector3<f64>, g: &GaitParams) -> Vec<(f64, f64, f64)> {
    let along = ((target.x - start.x).powi(2) + (target.y - start.y).powi(2)).sqrt();
    let z0 = target.z - start.z;
    let t_total = g.total_swing();
    let ticks = g.ticks_per_step();
    let mut samples = Vec::with_capacity(ticks as usize + 1);
    for j in 0..=ticks {
        let t = (j as f64 * g.dt_plan).min(t_total);
        // Parameters are pre-validated; the range is clamped.
        let (x, z) = swing_profile(t, 0.0, along, z0, g).expect("validated swing sample");
        samples.push((t, x, z));
    }
    samples
}

/// JSON Lines wire form: one step per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub i: usize,
    pub t: f64,
    pub side: Side,
    pub p_f: [f64; 3],
    pub p_t: [f64; 4],
    pub swing: Vec<[f64; 3]>,
}

impl From<&PlannedStep> for StepRecord {
    fn from(s: &PlannedStep) -> Self {
        Self {
            i: s.index,
            t: s.t,
            side: s.side,
            p_f: s.foot.into(),
            p_t: s.torso.as_array(),
            swing: s.swing.iter().map(|&(t, x, z)| [t, x, z]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn foot_offset_is_lateral_at_zero_yaw() {
        let g = GaitParams::default();
        let torso = TorsoPose::new(0.0, 0.0, 0.8, 0.0);
        let f = foot_from_torso(&torso, Side::Left, &g);
        assert_relative_eq!(f, Vector3::new(0.0, 0.1, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn foot_offset_rotates_with_yaw() {
        let g = GaitParams::default();
        let torso = TorsoPose::new(0.0, 0.0, 0.8, FRAC_PI_2);
        let f = foot_from_torso(&torso, Side::Left, &g);
        assert_relative_eq!(f, Vector3::new(-0.1, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn foot_offset_matches_matrix_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let g = GaitParams::default();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let torso = TorsoPose::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                0.8,
                rng.random_range(-3.1..3.1),
            );
            let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
            let f = foot_from_torso(&torso, side, &g);
            // Explicit 3x3 matrix product.
            let (s, c) = torso.phi.sin_cos();
            let b = Vector3::new(0.0, side.sign() * g.y_b, -g.z_t);
            let oracle = torso.position()
                + Vector3::new(c * b.x - s * b.y, s * b.x + c * b.y, b.z);
            assert_relative_eq!(f, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn swing_profile_boundary_values() {
        let g = GaitParams::default();
        let (x0, z0) = swing_profile(0.0, 1.0, 2.0, 0.13, &g).unwrap();
        assert_eq!(z0, 0.0);
        assert_eq!(x0, 1.0);
        let (_, z_peak) = swing_profile(g.t_lift, 1.0, 2.0, 0.13, &g).unwrap();
        assert_relative_eq!(z_peak, g.z_max, epsilon = 1e-12);
        let (x_end, z_end) = swing_profile(g.total_swing(), 1.0, 2.0, 0.13, &g).unwrap();
        assert_relative_eq!(z_end, 0.13, epsilon = 1e-12);
        assert_relative_eq!(x_end, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn swing_profile_is_continuous_at_handoff() {
        let g = GaitParams::default();
        let before = swing_profile(g.t_lift - 1e-9, 0.0, 1.0, 0.13, &g).unwrap().1;
        let after = swing_profile(g.t_lift + 1e-9, 0.0, 1.0, 0.13, &g).unwrap().1;
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn swing_profile_rejects_out_of_range_time() {
        let g = GaitParams::default();
        assert!(matches!(
            swing_profile(-0.1, 0.0, 1.0, 0.0, &g),
            Err(PlannerError::OutOfRange { .. })
        ));
        assert!(matches!(
            swing_profile(g.total_swing() + 0.1, 0.0, 1.0, 0.0, &g),
            Err(PlannerError::OutOfRange { .. })
        ));
    }

    #[test]
    fn gait_params_require_consistent_total() {
        let g = GaitParams {
            t_step: 0.9,
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }

    fn straight_path(n: usize, stride: f64) -> Vec<TorsoPose> {
        (0..n)
            .map(|i| TorsoPose::new(i as f64 * stride, 0.0, 0.8, 0.0))
            .collect()
    }

    #[test]
    fn open_floor_alternates_sides_about_the_path() {
        let g = GaitParams {
            gait_mode: GaitMode::Ss,
            ..Default::default()
        };
        let plan = plan_steps(
            &straight_path(6, 0.25),
            &[],
            None,
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        assert_eq!(plan.status, PlanStatus::Complete);
        assert_eq!(plan.steps.len(), 5);
        for pair in plan.steps.windows(2) {
            assert_ne!(pair[0].side, pair[1].side, "sides must alternate in SS");
            let a = &pair[0];
            let b = &pair[1];
            let ra = FootGeometry::default().rect_at(a.foot.x, a.foot.y, a.torso.phi);
            let rb = FootGeometry::default().rect_at(b.foot.x, b.foot.y, b.torso.phi);
            assert!(!rect_intersect(&ra, &rb));
        }
        for s in &plan.steps {
            assert_relative_eq!(s.foot.y.abs(), 0.1, epsilon = 1e-12);
            assert_relative_eq!(s.foot.z, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ds_mode_lands_both_feet_per_waypoint() {
        let g = GaitParams::default();
        let plan = plan_steps(
            &straight_path(3, 0.25),
            &[],
            None,
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 4);
        assert_eq!(plan.steps[0].side, Side::Left);
        assert_eq!(plan.steps[1].side, Side::Right);
        // Both feet share the level before the next waypoint.
        assert_eq!(plan.steps[0].foot.z, plan.steps[1].foot.z);
        assert_eq!(plan.steps[0].foot.x, plan.steps[1].foot.x);
    }

    #[test]
    fn timestamps_sit_on_the_grid() {
        let g = GaitParams {
            dt_plan: 1.0 / 128.0, // power of two: bit-exact grid
            ..Default::default()
        };
        let plan = plan_steps(
            &straight_path(5, 0.2),
            &[],
            None,
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        let ticks = g.ticks_per_step();
        for (i, s) in plan.steps.iter().enumerate() {
            let expected = ((i as u64 + 1) * ticks) as f64 * g.dt_plan;
            assert_eq!(s.t, expected, "step {i} timestamp off the grid");
        }
    }

    #[test]
    fn empty_path_is_an_error() {
        assert!(matches!(
            plan_steps(
                &[],
                &[],
                None,
                &FootGeometry::default(),
                &GaitParams::default(),
                Side::Left
            ),
            Err(PlannerError::EmptyPath)
        ));
    }

    #[test]
    fn no_candidates_with_terrain_is_no_footholds() {
        let grid = GridCloud::default();
        let terrain = Terrain {
            grid: &grid,
            g_res: 0.02,
            h_layer: 0.05,
            margin: 0.04,
        };
        let plan = plan_steps(
            &straight_path(3, 0.2),
            &[],
            Some(terrain),
            &FootGeometry::default(),
            &GaitParams::default(),
            Side::Left,
        )
        .unwrap();
        assert_eq!(plan.status, PlanStatus::NoFootholds);
        assert!(plan.steps.is_empty());
    }

    fn tread_grid(x0: f64, x1: f64, y0: f64, y1: f64, z: f64, g_res: f64) -> GridCloud {
        let mut grid = GridCloud::default();
        let i0 = (x0 / g_res).round() as i64;
        let i1 = (x1 / g_res).round() as i64;
        let j0 = (y0 / g_res).round() as i64;
        let j1 = (y1 / g_res).round() as i64;
        for i in i0..=i1 {
            for j in j0..=j1 {
                grid.cells.insert(
                    (i, j),
                    crate::foothold::GridCell {
                        pos: Vector3::new(i as f64 * g_res, j as f64 * g_res, z),
                        layer: (z / 0.05).floor() as i64,
                    },
                );
            }
        }
        grid
    }

    #[test]
    fn snapping_respects_containment() {
        // Tread covers y > 0.02 only: the nominal left-foot position fits,
        // but the right foot (y = -0.1) has to fail: no placement within
        // 5 cm reaches the tread.
        let grid = tread_grid(0.1, 0.6, 0.02, 0.5, 0.13, 0.02);
        let terrain = Terrain {
            grid: &grid,
            g_res: 0.02,
            h_layer: 0.05,
            margin: 0.04,
        };
        let cand = FootholdCandidate {
            p_star: Vector3::new(0.35, 0.1, 0.13),
            p_star2: None,
            theta_rel: 0.0,
        };
        let g = GaitParams::default();
        let plan = plan_steps(
            &[
                TorsoPose::new(0.0, 0.0, 0.8, 0.0),
                TorsoPose::new(0.35, 0.0, 0.93, 0.0),
            ],
            &[cand],
            Some(terrain),
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        // Left step lands inside the tread; right truncates.
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].side, Side::Left);
        assert!(matches!(plan.status, PlanStatus::Truncated { .. }));
        let foot = plan.steps[0].foot;
        assert_eq!(foot.z, 0.13);
        let rect = FootGeometry::default().rect_at(foot.x, foot.y, 0.0);
        for c in rect.corners() {
            assert!(c.y >= 0.0, "corner {c:?} off the tread");
        }
    }

    #[test]
    fn swing_samples_cover_the_step() {
        let g = GaitParams::default();
        let plan = plan_steps(
            &straight_path(2, 0.3),
            &[],
            None,
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        let s = &plan.steps[0];
        assert_eq!(s.swing.len() as u64, g.ticks_per_step() + 1);
        let first = s.swing.first().unwrap();
        let last = s.swing.last().unwrap();
        assert_eq!(first.1, 0.0);
        assert_eq!(first.2, 0.0);
        assert_relative_eq!(last.1, 0.3, epsilon = 1e-12);
        assert_relative_eq!(last.2, 0.0, epsilon = 1e-12);
        let peak = s.swing.iter().map(|p| p.2).fold(f64::MIN, f64::max);
        assert_relative_eq!(peak, g.z_max, epsilon = 1e-9);
    }

    #[test]
    fn step_record_wire_form() {
        let g = GaitParams::default();
        let plan = plan_steps(
            &straight_path(2, 0.3),
            &[],
            None,
            &FootGeometry::default(),
            &g,
            Side::Left,
        )
        .unwrap();
        let json = serde_json::to_string(&StepRecord::from(&plan.steps[0])).unwrap();
        assert!(json.contains("\"side\":\"L\""));
        assert!(json.contains("\"p_t\""));
        let back: StepRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.i, 0);
    }
}
