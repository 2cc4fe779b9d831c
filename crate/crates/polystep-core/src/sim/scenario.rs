//! The closed perceive-estimate-plan-execute loop on the synthetic world.
//!
//! One master clock ticks at the estimator rate. Each tick advances the true
//! robot state, feeds the contact Kalman filter with synthesized
//! proprioception (drift enters as a stance-velocity bias, the way real leg
//! odometry drifts), fuses LIO samples when the stance has been stable long
//! enough, renders and maps depth frames at the perception rate, and drives
//! the gait state machine. Foot placements execute kinematically: the
//! planned target, expressed in the estimated world, lands displaced by the
//! estimation error at touchdown plus actuation noise.
//!
//! DS replans at settled double support (LIO re-anchors the estimate first);
//! SS replans immediately at touchdown and never settles, so the estimate
//! runs on drifting kinematics for the whole climb. That asymmetry is the
//! mechanism behind the DS/SS footstep-error contrast.

use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{extract_polygon_map, PolygonRecord, PolygonSegment};
use crate::estimator::{
    kf_predict, kf_update, lio_to_base, ObservationVector, OdomSample, OdomSource, StateVector,
    StreamFuser, NUM_CONTACTS,
};
use crate::foothold::{
    build_dense_cloud, filter_cloud, layer_and_erode, select_candidates, CandidateRecord,
    FootState, FootholdCandidate, GridCloud,
};
use crate::geometry::Pose;
use crate::planner::{
    plan_steps, FootstepPlan, GaitMode, PlanStatus, PlannedStep, Side, StepRecord, Terrain,
    TorsoPose,
};

use super::config::ScenarioConfig;
use super::noise::{gaussian3, random_unit, NoiseModel, RngStream};
use super::scene::render_depth;
use super::SimError;

/// How a scenario ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScenarioStatus {
    /// All stair levels climbed.
    Completed,
    /// Perception produced no usable foothold for too long.
    NoFootholds { at_time: f64 },
    /// The planner gave up mid-climb.
    PlanTruncated { at_time: f64, reason: String },
    /// An executed foot left its tread or hit a riser.
    FootFault { step: usize, reason: String },
    /// Ran past the configured simulation time limit.
    TimedOut,
}

impl ScenarioStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, ScenarioStatus::Completed)
    }
}

/// Wall-clock measurements. The one part of a report that is not
/// deterministic; comparisons use [`RunReport::deterministic_json`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub detection_hz_mean: f64,
    pub detection_hz_min: f64,
    pub wall_seconds: f64,
}

/// Scenario outcome and metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub status: ScenarioStatus,
    /// Simulated duration, seconds.
    pub t_total: f64,
    pub levels_completed: u32,
    /// Foot placements executed.
    pub steps_completed: usize,
    /// Foot placements planned (including never-executed ones).
    pub steps_planned: usize,
    /// Max planned-vs-executed foothold error, millimeters.
    pub e_m_mm: f64,
    /// Per-step planned-vs-executed XY errors, millimeters.
    pub per_step_error_mm: Vec<f64>,
    pub frames_processed: u64,
    pub timing: TimingReport,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Report JSON with the wall-clock block zeroed; byte-identical across
    /// reruns of the same config and seed.
    pub fn deterministic_json(&self) -> String {
        let mut copy = self.clone();
        copy.timing = TimingReport::default();
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }
}

/// One desired-vs-executed trajectory sample (foot tracking curves).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub x_des: f64,
    pub z_des: f64,
    pub x_exec: f64,
    pub z_exec: f64,
}

/// Everything a run produces besides the report, for file emitters.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub traces: Vec<TraceRow>,
    pub odometry: Vec<OdomSample>,
    pub plans: Vec<StepRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub last_polygons: Vec<PolygonRecord>,
    pub grid_pre: GridCloud,
    pub grid_post: GridCloud,
}

/// Write the tracking trace CSV (`step,t,x_des,z_des,x_exec,z_exec`).
pub fn write_traces_csv<W: std::io::Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "step,t,x_des,z_des,x_exec,z_exec")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.t, r.x_des, r.z_des, r.x_exec, r.z_exec
        )?;
    }
    Ok(())
}

/// Replay a finished plan through the actuation noise model alone.
///
/// Executed footholds are the planned targets plus iid Gaussian XY error;
/// per-step error is the XY distance. With a scene attached, each executed
/// rectangle is checked against the true tread geometry. `pace_s_per_step`
/// converts step count to total time.
pub fn execute_plan(
    plan: &FootstepPlan,
    noise: &NoiseModel,
    pace_s_per_step: f64,
    scene: Option<&super::scene::StaircaseScene>,
    foot: &crate::planner::FootGeometry,
    rng: &mut ChaCha12Rng,
) -> ExecutionResult {
    let mut executed = Vec::with_capacity(plan.steps.len());
    let mut errors = Vec::with_capacity(plan.steps.len());
    let mut fault = None;
    for step in &plan.steps {
        let jitter = gaussian3(rng, noise.actuation_sigma);
        let landed = Vector3::new(step.foot.x + jitter.x, step.foot.y + jitter.y, step.foot.z);
        let err_mm = ((landed.x - step.foot.x).powi(2) + (landed.y - step.foot.y).powi(2))
            .sqrt()
            * 1000.0;
        if fault.is_none() {
            if let Some(scene) = scene {
                let level = level_of(scene, step.foot.z - scene.origin[2]);
                let rect = foot.rect_at(landed.x, landed.y, step.torso.phi);
                if let Err(reason) = scene.rect_on_tread(&rect.corners(), level) {
                    fault = Some(format!("step {}: {reason}", step.index));
                }
            }
        }
        executed.push(landed);
        errors.push(err_mm);
    }
    let e_m_mm = errors.iter().cloned().fold(0.0, f64::max);
    ExecutionResult {
        t_total: plan.steps.len() as f64 * pace_s_per_step,
        executed,
        per_step_error_mm: errors,
        e_m_mm,
        fault,
    }
}

/// Output of [`execute_plan`].
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub executed: Vec<Vector3<f64>>,
    pub per_step_error_mm: Vec<f64>,
    pub e_m_mm: f64,
    pub t_total: f64,
    pub fault: Option<String>,
}

fn level_of(scene: &super::scene::StaircaseScene, z_local: f64) -> u32 {
    ((z_local / scene.rise).round().max(0.0) as u32).min(scene.n_steps)
}

enum Phase {
    Settle { until: f64 },
    Plan,
    Swing(SwingState),
    Done,
}

struct SwingState {
    plan: FootstepPlan,
    step_idx: usize,
    /// When the swing actually lifts off; before this the robot dwells in
    /// double support (and LIO keeps re-anchoring the estimate).
    start_t: f64,
    foot_from: Vector3<f64>,
    torso_from: Vector3<f64>,
    /// Estimation error frozen at swing start: the robot converts the
    /// est-frame targets into body-relative motions once and executes them
    /// open loop within the step.
    est_err: Vector3<f64>,
    activated: bool,
}

struct Robot {
    base_pos: Vector3<f64>,
    base_vel: Vector3<f64>,
    yaw: f64,
    left: Vector3<f64>,
    right: Vector3<f64>,
    heading: f64,
    both_planted_since: f64,
    swing_side: Option<Side>,
}

impl Robot {
    fn base_pose(&self) -> Pose {
        Pose::new(crate::geometry::Rotation::rot_z(self.yaw), self.base_pos)
    }

    fn foot(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    fn contact_corners(&self, foot: &crate::planner::FootGeometry) -> [Vector3<f64>; NUM_CONTACTS] {
        let mut out = [Vector3::zeros(); NUM_CONTACTS];
        let (s, c) = self.heading.sin_cos();
        let dir = Vector3::new(c, s, 0.0) * (foot.length * 0.5);
        let lat = Vector3::new(-s, c, 0.0) * (foot.width * 0.5);
        for (f, base) in [(0usize, self.left), (4usize, self.right)] {
            out[f] = base + dir + lat;
            out[f + 1] = base + dir - lat;
            out[f + 2] = base - dir + lat;
            out[f + 3] = base - dir - lat;
        }
        out
    }
}

/// Run one full scenario. Deterministic (except wall-clock timing) for a
/// fixed config, including the seed inside `cfg.noise`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(RunReport, RunArtifacts), SimError> {
    cfg.validate()?;
    let wall_start = Instant::now();
    let scene = cfg.scene;
    let intr = cfg.camera.intrinsics()?;
    let mount = cfg.camera.mount();
    let lidar_mount = cfg.estimator.lidar_mount();
    let est_dt = 1.0 / cfg.ticks.estimator_hz;
    let est_params = cfg.estimator.params(est_dt);
    let perception_period = 1.0 / cfg.ticks.perception_hz;
    let lio_period = 1.0 / cfg.ticks.lio_hz;

    let mut rng_render = cfg.noise.stream(RngStream::Render);
    let mut rng_odom = cfg.noise.stream(RngStream::Odometry);
    let mut rng_act = cfg.noise.stream(RngStream::Actuation);

    // Drift enters as a constant stance-velocity bias along a fixed random
    // direction, integrating to rate * t like raw leg odometry.
    let drift_vel = if cfg.noise.kinematic_drift_rate > 0.0 {
        random_unit(&mut rng_odom) * cfg.noise.kinematic_drift_rate
    } else {
        Vector3::zeros()
    };

    // True initial state: standing `start_standoff` before the first riser.
    let scene_pose = scene.pose();
    let start_local = Vector3::new(-cfg.start_standoff, 0.0, cfg.gait.z_t);
    let mut robot = Robot {
        base_pos: scene_pose.transform_point(&start_local),
        base_vel: Vector3::zeros(),
        yaw: scene.yaw,
        left: Vector3::zeros(),
        right: Vector3::zeros(),
        heading: scene.yaw,
        both_planted_since: 0.0,
        swing_side: None,
    };
    let start_torso = TorsoPose::new(robot.base_pos.x, robot.base_pos.y, robot.base_pos.z, scene.yaw);
    robot.left = crate::planner::foot_from_torso(&start_torso, Side::Left, &cfg.gait);
    robot.right = crate::planner::foot_from_torso(&start_torso, Side::Right, &cfg.gait);

    // Filter state starts at the truth.
    let mut kf_x = StateVector::from_parts(
        robot.base_pos,
        Vector3::zeros(),
        &robot.contact_corners(&cfg.foot),
    );
    let mut kf_p = crate::estimator::StateCovariance::identity() * 1e-4;
    let mut fuser = StreamFuser::new(cfg.estimator.fusion());

    let mut report = RunReport {
        status: ScenarioStatus::TimedOut,
        t_total: 0.0,
        levels_completed: 0,
        steps_completed: 0,
        steps_planned: 0,
        e_m_mm: 0.0,
        per_step_error_mm: Vec::new(),
        frames_processed: 0,
        timing: TimingReport::default(),
    };
    let mut artifacts = RunArtifacts::default();

    // Rolling polygonal map: per-frame tread segments accumulate and age
    // out, so treads that slip under the robot's nose stay plannable.
    let mut latest_frame_stamp: Option<f64> = None;
    let mut map_polygons: Vec<PolygonSegment> = Vec::new();
    let mut detection_times: Vec<f64> = Vec::new();
    let mut next_perception = 0.0f64;
    let mut next_lio = 0.0f64;
    let mut no_foothold_since: Option<f64> = None;
    let mut ss_side = Side::Left;
    let mut phase = Phase::Settle { until: 0.5 };

    let mut t = 0.0f64;
    let max_ticks = (cfg.ticks.max_sim_time / est_dt).ceil() as u64;
    for _ in 0..max_ticks {
        // --- true dynamics -------------------------------------------------
        let prev_base = robot.base_pos;
        if let Phase::Swing(sw) = &mut phase {
            if !sw.activated && t + 1e-9 >= sw.start_t {
                // Lift-off: freeze the estimation error and the start pose.
                sw.activated = true;
                sw.est_err = estimation_error(&fuser, &robot);
                sw.foot_from = robot.foot(sw.plan.steps[sw.step_idx].side);
                sw.torso_from = robot.base_pos;
                robot.swing_side = Some(sw.plan.steps[sw.step_idx].side);
            }
        }
        if let Phase::Swing(sw) = &phase {
            if sw.activated {
            let step = &sw.plan.steps[sw.step_idx];
            let phase_t = (t - sw.start_t).clamp(0.0, cfg.gait.t_step);
            // The target lives in the estimated world; executing it
            // body-relative lands it displaced by the estimation error at
            // swing start.
            let target_true = step.foot - sw.est_err;
            let frac = phase_t / cfg.gait.t_step;
            let along = target_true - sw.foot_from;
            let (_, z_rel) = crate::planner::swing_profile(
                phase_t,
                0.0,
                along.xy().norm(),
                target_true.z - sw.foot_from.z,
                &cfg.gait,
            )
            .unwrap_or((0.0, 0.0));
            let foot_pos = Vector3::new(
                sw.foot_from.x + along.x * frac,
                sw.foot_from.y + along.y * frac,
                sw.foot_from.z + z_rel,
            );
            match step.side {
                Side::Left => robot.left = foot_pos,
                Side::Right => robot.right = foot_pos,
            }
            let torso_true = step.torso.position() - sw.est_err;
            robot.base_pos = sw.torso_from + (torso_true - sw.torso_from) * frac;
            }
        }
        robot.base_vel = (robot.base_pos - prev_base) / est_dt;

        // --- estimator tick -----------------------------------------------
        let rot = robot.base_pose().rotation;
        let rot_inv = rot.inverse();
        let corners = robot.contact_corners(&cfg.foot);
        let mut p_rel = [Vector3::zeros(); NUM_CONTACTS];
        let mut v_rel = [Vector3::zeros(); NUM_CONTACTS];
        let mut heights = [0.0f64; NUM_CONTACTS];
        let mut flags = [true; NUM_CONTACTS];
        let drift_offset = drift_vel * t;
        for i in 0..NUM_CONTACTS {
            let swing_foot = match robot.swing_side {
                Some(Side::Left) => i < 4,
                Some(Side::Right) => i >= 4,
                None => false,
            };
            flags[i] = !swing_foot;
            p_rel[i] =
                rot_inv * (corners[i] - robot.base_pos) + gaussian3(&mut rng_odom, cfg.noise.proprio_sigma);
            // Stance feet are world-static; the bias -drift_vel is what the
            // filter integrates into cumulative drift.
            let contact_world_vel = if swing_foot { robot.base_vel } else { Vector3::zeros() };
            v_rel[i] = rot_inv * (contact_world_vel - robot.base_vel - drift_vel)
                + gaussian3(&mut rng_odom, cfg.noise.proprio_sigma);
            heights[i] =
                corners[i].z + drift_offset.z + gaussian3(&mut rng_odom, cfg.noise.proprio_sigma).z;
        }
        let obs = ObservationVector::from_parts(&p_rel, &v_rel, &heights);
        let (xp, pp) = kf_predict(&kf_x, &kf_p, &Vector3::zeros(), &est_params)
            .map_err(|e| SimError::Estimator(e.to_string()))?;
        let upd = kf_update(&xp, &pp, &obs, &flags, &rot, &est_params)
            .map_err(|e| SimError::Estimator(e.to_string()))?;
        kf_x = upd.x;
        kf_p = upd.p;

        if std::env::var("POLYSTEP_DEBUG").is_ok() && (t * 100.0).round() % 10.0 == 0.0 {
            let est = fused_pose(&fuser, &robot).translation;
            eprintln!(
                "t={:.2} true=({:.3},{:.3},{:.3}) kf=({:.3},{:.3},{:.3}) fused=({:.3},{:.3},{:.3}) vel={:.3} phase_swing={:?}",
                t,
                robot.base_pos.x, robot.base_pos.y, robot.base_pos.z,
                kf_x.p_base().x, kf_x.p_base().y, kf_x.p_base().z,
                est.x, est.y, est.z,
                robot.base_vel.norm(),
                robot.swing_side,
            );
        }
        let kin_sample = OdomSample::new(t, OdomSource::Kinematic, Pose::new(rot, kf_x.p_base()));
        fuser
            .push_kinematic(&kin_sample)
            .map_err(|e| SimError::Estimator(e.to_string()))?;
        artifacts.odometry.push(kin_sample);

        // --- LIO tick -------------------------------------------------------
        if t + 1e-9 >= next_lio {
            next_lio += lio_period;
            let stable = robot.swing_side.is_none()
                && (t - robot.both_planted_since) >= cfg.ticks.stable_support;
            // LIO is always produced; it is only *fused* at stable stance.
            let t_w_lidar_true = robot.base_pose().compose(&lidar_mount);
            let noisy = Pose::new(
                t_w_lidar_true
                    .rotation
                    .compose(&crate::geometry::Rotation::exp(&gaussian3(
                        &mut rng_odom,
                        cfg.noise.lio_sigma_rot,
                    ))),
                t_w_lidar_true.translation + gaussian3(&mut rng_odom, cfg.noise.lio_sigma_pos),
            );
            let lio_sample =
                OdomSample::new(t, OdomSource::Lio, lio_to_base(&noisy, &lidar_mount));
            artifacts.odometry.push(lio_sample);
            if stable {
                fuser
                    .push_lio(&lio_sample)
                    .map_err(|e| SimError::Estimator(e.to_string()))?;
            }
        }

        // --- perception tick -------------------------------------------------
        if t + 1e-9 >= next_perception {
            next_perception += perception_period;
            let cam_true = robot.base_pose().compose(&mount);
            let img = render_depth(
                &scene,
                &cam_true,
                &intr,
                &cfg.noise,
                cfg.camera.max_range,
                &mut rng_render,
            );
            let est_base = fused_pose(&fuser, &robot);
            let cam_est = est_base.compose(&mount);
            let t_detect = Instant::now();
            let polygons = extract_polygon_map(&img, &intr, &cam_est, t, &cfg.pipeline)
                .map_err(|e| SimError::Pipeline(e.to_string()))?;
            detection_times.push(t_detect.elapsed().as_secs_f64());
            report.frames_processed += 1;
            artifacts.last_polygons = polygons.iter().map(PolygonRecord::from).collect();
            latest_frame_stamp = Some(t);
            // DS only maps from stable stance, where the estimate is
            // anchored; SS maps while walking and wears the extra error.
            let stable = robot.swing_side.is_none()
                && (t - robot.both_planted_since) >= cfg.ticks.stable_support;
            if stable || cfg.gait.gait_mode == GaitMode::Ss {
                for poly in polygons.into_iter().filter(|p| p.tread) {
                    merge_into_map(&mut map_polygons, poly, cfg.foothold.h_layer);
                }
            }
            map_polygons.retain(|p| t - p.stamp <= cfg.ticks.map_retention);
        }

        // --- gait state machine ----------------------------------------------
        phase = match phase {
            Phase::Settle { until } if t >= until => Phase::Plan,
            Phase::Settle { until } => Phase::Settle { until },
            Phase::Plan => {
                match try_plan(
                    cfg,
                    &robot,
                    &fuser,
                    latest_frame_stamp,
                    &map_polygons,
                    t,
                    perception_period,
                    ss_side,
                    &mut artifacts,
                )? {
                    PlanAttempt::NotReady => Phase::Plan,
                    PlanAttempt::NoCandidates => {
                        let since = *no_foothold_since.get_or_insert(t);
                        if t - since > 3.0 {
                            report.status = ScenarioStatus::NoFootholds { at_time: t };
                            Phase::Done
                        } else {
                            Phase::Plan
                        }
                    }
                    PlanAttempt::Planned(plan) => {
                        no_foothold_since = None;
                        report.steps_planned += plan.steps.len();
                        if plan.steps.is_empty() {
                            let reason = match &plan.status {
                                PlanStatus::Truncated { reason, .. } => reason.clone(),
                                _ => "planner returned no steps".into(),
                            };
                            report.status = ScenarioStatus::PlanTruncated { at_time: t, reason };
                            Phase::Done
                        } else {
                            Phase::Swing(SwingState {
                                foot_from: Vector3::zeros(),
                                torso_from: Vector3::zeros(),
                                start_t: t,
                                step_idx: 0,
                                est_err: Vector3::zeros(),
                                activated: false,
                                plan,
                            })
                        }
                    }
                }
            }
            Phase::Swing(sw) if sw.activated && t - sw.start_t >= cfg.gait.t_step => {
                let step = sw.plan.steps[sw.step_idx].clone();
                let frozen_err = sw.est_err;
                match touchdown(cfg, &scene, &mut robot, frozen_err, &step, &mut rng_act, &mut report, &mut artifacts, t)
                {
                    Err(status) => {
                        report.status = status;
                        Phase::Done
                    }
                    Ok(()) => {
                        // Contact states re-anchor on the estimated landing.
                        reset_foot_contacts(&mut kf_x, &mut kf_p, &robot, step.side, &cfg.foot, &fuser);
                        let done_level = scene.n_steps
                            <= level_of(&scene, scene.to_local(&robot.left).z)
                                .min(level_of(&scene, scene.to_local(&robot.right).z));
                        if done_level {
                            report.status = ScenarioStatus::Completed;
                            Phase::Done
                        } else if sw.step_idx + 1 < sw.plan.steps.len() {
                            let next = sw.step_idx + 1;
                            Phase::Swing(SwingState {
                                foot_from: Vector3::zeros(),
                                torso_from: Vector3::zeros(),
                                start_t: t + cfg.ticks.ds_interstep,
                                step_idx: next,
                                est_err: Vector3::zeros(),
                                activated: false,
                                plan: sw.plan,
                            })
                        } else if cfg.gait.gait_mode == GaitMode::Ds {
                            Phase::Settle { until: t + cfg.ticks.ds_settle }
                        } else {
                            ss_side = ss_side.other();
                            Phase::Plan
                        }
                    }
                }
            }
            other => other,
        };
        if matches!(phase, Phase::Done) {
            report.t_total = t;
            break;
        }

        t += est_dt;
        report.t_total = t;
    }

    report.levels_completed = level_of(&scene, scene.to_local(&robot.left).z)
        .min(level_of(&scene, scene.to_local(&robot.right).z));
    report.e_m_mm = report.per_step_error_mm.iter().cloned().fold(0.0, f64::max);
    report.timing = TimingReport {
        detection_hz_mean: if detection_times.is_empty() {
            0.0
        } else {
            detection_times.len() as f64 / detection_times.iter().sum::<f64>()
        },
        detection_hz_min: detection_times
            .iter()
            .cloned()
            .fold(0.0f64, f64::max)
            .recip(),
        wall_seconds: wall_start.elapsed().as_secs_f64(),
    };
    if detection_times.is_empty() {
        report.timing.detection_hz_min = 0.0;
    }
    Ok((report, artifacts))
}

/// Keep one polygon per plane-height bucket: the freshest stamp, and the
/// larger footprint unless the new view covers most of the old one (partial
/// views must not degrade a previously complete observation; unioning noisy
/// frames would inflate edges outward instead).
fn merge_into_map(map: &mut Vec<PolygonSegment>, new: PolygonSegment, h_layer: f64) {
    let area = |p: &PolygonSegment| -> f64 {
        let mut acc = 0.0;
        let n = p.vertices.len();
        for i in 0..n {
            let a = &p.vertices[i];
            let b = &p.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        acc.abs() * 0.5
    };
    let new_h = new.mean_height();
    if let Some(existing) = map
        .iter_mut()
        .find(|p| (p.mean_height() - new_h).abs() <= h_layer * 0.5)
    {
        if area(&new) >= 0.95 * area(existing) {
            *existing = new;
        } else {
            existing.stamp = new.stamp;
        }
    } else {
        map.push(new);
    }
}

fn fused_pose(fuser: &StreamFuser, robot: &Robot) -> Pose {
    fuser
        .fused()
        .map(|s| s.pose)
        .unwrap_or_else(|| robot.base_pose())
}

fn estimation_error(fuser: &StreamFuser, robot: &Robot) -> Vector3<f64> {
    fused_pose(fuser, robot).translation - robot.base_pos
}

enum PlanAttempt {
    NotReady,
    NoCandidates,
    Planned(FootstepPlan),
}

#[allow(clippy::too_many_arguments)]
fn try_plan(
    cfg: &ScenarioConfig,
    robot: &Robot,
    fuser: &StreamFuser,
    latest_frame_stamp: Option<f64>,
    treads: &[PolygonSegment],
    t: f64,
    perception_period: f64,
    ss_first_side: Side,
    artifacts: &mut RunArtifacts,
) -> Result<PlanAttempt, SimError> {
    let Some(stamp) = latest_frame_stamp else {
        return Ok(PlanAttempt::NotReady);
    };
    if t - stamp > 2.5 * perception_period {
        return Ok(PlanAttempt::NotReady); // wait for a fresh frame
    }
    if treads.is_empty() {
        return Ok(PlanAttempt::NoCandidates);
    }

    let est_base = fused_pose(fuser, robot);
    // Sole heights come from relative FK, which is drift-free.
    let base_inv = robot.base_pose().inverse();
    let left_rel = base_inv.transform_point(&robot.left);
    let right_rel = base_inv.transform_point(&robot.right);
    let foot_state = FootState {
        left_toe_z: left_rel.z,
        left_heel_z: left_rel.z,
        right_toe_z: right_rel.z,
        right_heel_z: right_rel.z,
    };
    let first_side = match cfg.gait.gait_mode {
        GaitMode::Ds => Side::Left,
        GaitMode::Ss => ss_first_side,
    };

    let outcome = plan_from_map(cfg, treads, &est_base, &foot_state, first_side)?;
    artifacts.grid_pre = outcome.grid_pre;
    artifacts.grid_post = outcome.grid_post;
    let Some(candidate) = outcome.candidate else {
        if std::env::var("POLYSTEP_DEBUG").is_ok() {
            eprintln!("t={t:.2}: no candidate; treads={}", treads.len());
        }
        return Ok(PlanAttempt::NoCandidates);
    };
    artifacts
        .candidates
        .push(CandidateRecord::new(t, &candidate, artifacts.grid_post.len()));
    let Some(plan) = outcome.plan else {
        if std::env::var("POLYSTEP_DEBUG").is_ok() {
            eprintln!(
                "t={t:.2}: plan failed; cand p*=({:.3},{:.3},{:.3})",
                candidate.p_star.x, candidate.p_star.y, candidate.p_star.z,
            );
        }
        return Ok(PlanAttempt::NoCandidates);
    };
    artifacts.plans.extend(plan.steps.iter().map(StepRecord::from));
    Ok(PlanAttempt::Planned(plan))
}

/// What one planning pass produced.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    /// Selected foothold, base frame; `None` when nothing is eligible.
    pub candidate: Option<FootholdCandidate>,
    /// The next level's footstep plan, absent when no safe placement exists.
    pub plan: Option<FootstepPlan>,
    pub grid_pre: GridCloud,
    pub grid_post: GridCloud,
}

/// One full foothold-generation and planning pass over a tread polygon map:
/// rasterize, range/height filter, layer and erode, select the candidate,
/// aim the torso at the safe middle of the target surface and plan the next
/// level's step(s) with containment and collision checks.
pub fn plan_from_map(
    cfg: &ScenarioConfig,
    treads: &[PolygonSegment],
    est_base: &Pose,
    foot_state: &FootState,
    first_side: Side,
) -> Result<PlanOutcome, SimError> {
    let cloud = build_dense_cloud(treads, cfg.foothold.g_res);
    let grid_pre = filter_cloud(&cloud, est_base, foot_state, &cfg.foothold)
        .map_err(|e| SimError::Foothold(e.to_string()))?;
    let grid_post = layer_and_erode(&grid_pre, foot_state, &cfg.foothold)
        .map_err(|e| SimError::Foothold(e.to_string()))?;
    let Some(candidate) = select_candidates(&grid_post, est_base, foot_state, &cfg.foothold)
    else {
        return Ok(PlanOutcome {
            candidate: None,
            plan: None,
            grid_pre,
            grid_post,
        });
    };

    // Pick the target tread: when the nearest eligible cell is the tread the
    // stance (higher) foot already occupies, aim at the next-step candidate.
    let left_sole = foot_state.left_toe_z.min(foot_state.left_heel_z);
    let right_sole = foot_state.right_toe_z.min(foot_state.right_heel_z);
    let other_sole = left_sole.max(right_sole);
    let primary_is_stance_tread =
        (candidate.p_star.z - other_sole).abs() < cfg.foothold.h_layer * 0.5;
    let target_base = if primary_is_stance_tread {
        candidate.p_star2.unwrap_or(candidate.p_star)
    } else {
        candidate.p_star
    };

    // Everything the planner sees lives in the estimated world frame.
    let to_world = |p: &Vector3<f64>| est_base.transform_point(p);
    let world_candidates: Vec<FootholdCandidate> = {
        let mut list = vec![FootholdCandidate {
            p_star: to_world(&candidate.p_star),
            p_star2: candidate.p_star2.map(|p| to_world(&p)),
            theta_rel: candidate.theta_rel,
        }];
        if let Some(p2) = candidate.p_star2 {
            list.push(FootholdCandidate {
                p_star: to_world(&p2),
                p_star2: None,
                theta_rel: candidate.theta_rel,
            });
        }
        list
    };
    let world_grid = grid_post.transformed(est_base, cfg.foothold.g_res);

    let target_w = to_world(&target_base);
    let est_yaw = est_base.yaw();
    let (s, c) = est_yaw.sin_cos();
    // Aim the feet at the safe middle of the target tread polygon: detection
    // noise is millimetric while the eroded grid quantizes to whole cells,
    // so the polygon is the better centering reference. Enter deep surfaces
    // (landings) from the near edge instead of their far-away middle.
    let dir = Vector3::new(c, s, 0.0);
    let along_center = treads
        .iter()
        .filter(|p| (p.mean_height() - target_w.z).abs() <= cfg.foothold.h_layer * 0.5)
        .map(|p| {
            let (lo, hi) = p
                .vertices
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let a = v.dot(&dir);
                    (lo.min(a), hi.max(a))
                });
            let entry = lo
                + cfg.foot.length * 0.5
                + cfg.foothold.n_erosion as f64 * cfg.foothold.g_res
                + cfg.foothold.g_res;
            entry.min((lo + hi) * 0.5)
        })
        .next();
    let target_along = along_center.unwrap_or_else(|| {
        target_w.dot(&dir) + cfg.foot.length * 0.5
            - cfg.foothold.n_erosion as f64 * cfg.foothold.g_res
    });
    let advance = target_along - target_w.dot(&dir);
    let waypoint = TorsoPose::new(
        target_w.x + c * advance,
        target_w.y + s * advance,
        target_w.z + cfg.gait.z_t,
        est_yaw,
    );
    let est_torso = TorsoPose::new(
        est_base.translation.x,
        est_base.translation.y,
        est_base.translation.z,
        est_yaw,
    );

    let terrain = Terrain {
        grid: &world_grid,
        g_res: cfg.foothold.g_res,
        h_layer: cfg.foothold.h_layer,
        margin: cfg.foothold.n_erosion as f64 * cfg.foothold.g_res,
    };
    let plan = plan_steps(
        &[est_torso, waypoint],
        &world_candidates,
        Some(terrain),
        &cfg.foot,
        &cfg.gait,
        first_side,
    )
    .map_err(|e| SimError::Planner(e.to_string()))?;
    let plan = if matches!(plan.status, PlanStatus::NoFootholds) || plan.steps.is_empty() {
        None
    } else {
        Some(plan)
    };
    Ok(PlanOutcome {
        candidate: Some(candidate),
        plan,
        grid_pre,
        grid_post,
    })
}

#[allow(clippy::too_many_arguments)]
fn touchdown(
    cfg: &ScenarioConfig,
    scene: &super::scene::StaircaseScene,
    robot: &mut Robot,
    est_err: Vector3<f64>,
    step: &PlannedStep,
    rng_act: &mut ChaCha12Rng,
    report: &mut RunReport,
    artifacts: &mut RunArtifacts,
    t: f64,
) -> Result<(), ScenarioStatus> {
    let jitter = gaussian3(rng_act, cfg.noise.actuation_sigma);
    let landed_xy = Vector2::new(
        step.foot.x - est_err.x + jitter.x,
        step.foot.y - est_err.y + jitter.y,
    );
    let local = scene.to_local(&Vector3::new(landed_xy.x, landed_xy.y, 0.0));
    let surface = scene.surface_height_local(local.x, local.y);
    if !surface.is_finite() {
        return Err(ScenarioStatus::FootFault {
            step: step.index,
            reason: "foot landed off the walkable surface".into(),
        });
    }
    let landed = Vector3::new(landed_xy.x, landed_xy.y, surface + scene.origin[2]);

    let err_mm = ((landed.x - step.foot.x).powi(2) + (landed.y - step.foot.y).powi(2)).sqrt()
        * 1000.0;
    report.per_step_error_mm.push(err_mm);
    report.steps_completed += 1;

    // Tracking trace: desired profile vs the same profile carried onto the
    // executed landing.
    let err_x = landed.x - step.foot.x;
    let err_z = landed.z - step.foot.z;
    for &(ts, x, z) in &step.swing {
        let frac = ts / cfg.gait.t_step;
        artifacts.traces.push(TraceRow {
            step: step.index,
            t: t - cfg.gait.t_step + ts,
            x_des: x,
            z_des: z,
            x_exec: x + err_x * frac,
            z_exec: z + err_z * frac,
        });
    }

    // Ground-truth safety check.
    let expected_level = level_of(scene, step.foot.z - scene.origin[2]);
    let rect = cfg.foot.rect_at(landed.x, landed.y, step.torso.phi);
    if let Err(reason) = scene.rect_on_tread(&rect.corners(), expected_level) {
        return Err(ScenarioStatus::FootFault {
            step: step.index,
            reason,
        });
    }

    match step.side {
        Side::Left => robot.left = landed,
        Side::Right => robot.right = landed,
    }
    robot.heading = step.torso.phi;
    robot.swing_side = None;
    robot.both_planted_since = t;
    Ok(())
}

fn reset_foot_contacts(
    kf_x: &mut StateVector,
    kf_p: &mut crate::estimator::StateCovariance,
    robot: &Robot,
    side: Side,
    foot: &crate::planner::FootGeometry,
    fuser: &StreamFuser,
) {
    let corners = robot.contact_corners(foot);
    let est_base = fused_pose(fuser, robot);
    let offset = est_base.translation - robot.base_pos;
    let range = match side {
        Side::Left => 0..4,
        Side::Right => 4..8,
    };
    for i in range {
        // Re-anchor in the estimated world so the filter stays consistent.
        crate::estimator::reset_contact(kf_x, kf_p, i, &(corners[i] + offset), 1e-4);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::NoiseModel;

    fn lite_config(seed: u64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.scene.tread = 0.5;
        cfg.camera.fx = 64.0;
        cfg.camera.fy = 64.0;
        cfg.camera.cx = 64.0;
        cfg.camera.cy = 48.0;
        cfg.camera.width = 128;
        cfg.camera.height = 96;
        cfg.pipeline.regions.min_region_pixels = 40;
        cfg.pipeline.regions.normal_stride = 2;
        cfg.pipeline.ransac.min_inliers = 30;
        cfg.ticks.estimator_hz = 100.0;
        cfg.ticks.perception_hz = 10.0;
        cfg.noise = NoiseModel::silent(seed);
        cfg
    }

    #[test]
    fn noiseless_ds_climbs_all_levels() {
        let cfg = lite_config(7);
        let (report, artifacts) = run_scenario(&cfg).unwrap();
        assert_eq!(
            report.status,
            ScenarioStatus::Completed,
            "report: {}",
            report.to_json()
        );
        assert_eq!(report.levels_completed, 4);
        assert_eq!(report.steps_completed, 8);
        assert!(report.e_m_mm < 1.0, "e_m = {} mm", report.e_m_mm);
        assert!(!artifacts.traces.is_empty());
        assert!(!artifacts.plans.is_empty());
    }

    #[test]
    fn determinism_modulo_timing() {
        let cfg = lite_config(9);
        let (a, _) = run_scenario(&cfg).unwrap();
        let (b, _) = run_scenario(&cfg).unwrap();
        assert_eq!(a.deterministic_json(), b.deterministic_json());
    }
}
