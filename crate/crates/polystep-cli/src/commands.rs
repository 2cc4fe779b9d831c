//! Subcommand implementations.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use polystep_core::depth::{PolygonRecord, PolygonSegment};
use polystep_core::estimator::{
    replay_streams, validate_stream, write_drift_csv, OdomSample, OdomSource,
};
use polystep_core::foothold::{write_grid_csv, CandidateRecord, FootState};
use polystep_core::geometry::{read_depth, write_depth, Pose, Rotation};
use polystep_core::planner::{Side, StepRecord};
use polystep_core::sim::{
    plan_from_map, render_depth, run_scenario, simulate_odometry, write_traces_csv, RngStream,
    ScenarioConfig,
};

use crate::io::{read_jsonl, write_jsonl};

/// Camera pose record stored next to rendered frames.
#[derive(Debug, Serialize, Deserialize)]
struct FramePose {
    stamp: f64,
    #[serde(flatten)]
    pose: Pose,
}

fn start_base_pose(cfg: &ScenarioConfig) -> Pose {
    let scene_pose = cfg.scene.pose();
    let local = Vector3::new(-cfg.start_standoff, 0.0, cfg.gait.z_t);
    Pose::new(
        Rotation::rot_z(cfg.scene.yaw),
        scene_pose.transform_point(&local),
    )
}

pub fn render(cfg: &ScenarioConfig, out: &Path, frames: u32, seed: u64) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.noise.seed = seed;
    cfg.validate().map_err(anyhow::Error::msg)?;
    std::fs::create_dir_all(out)?;
    let intr = cfg.camera.intrinsics().map_err(anyhow::Error::msg)?;
    let cam_pose = start_base_pose(&cfg).compose(&cfg.camera.mount());
    let mut rng = cfg.noise.stream(RngStream::Render);
    let mut poses = Vec::new();
    for i in 0..frames {
        let stamp = i as f64 / cfg.ticks.perception_hz;
        let img = render_depth(
            &cfg.scene,
            &cam_pose,
            &intr,
            &cfg.noise,
            cfg.camera.max_range,
            &mut rng,
        );
        write_depth(&img, out.join(format!("frame_{i:04}.pmdi")))?;
        poses.push(FramePose {
            stamp,
            pose: cam_pose,
        });
    }
    write_jsonl(&out.join("poses.jsonl"), &poses)?;
    std::fs::write(
        out.join("intrinsics.json"),
        serde_json::to_string_pretty(&intr)?,
    )?;
    println!("rendered {frames} frame(s) to {}", out.display());
    Ok(())
}

pub fn map(cfg: &ScenarioConfig, frames: &Path, out: &Path) -> Result<()> {
    let intr: polystep_core::geometry::CameraIntrinsics = serde_json::from_str(
        &std::fs::read_to_string(frames.join("intrinsics.json"))
            .context("reading intrinsics.json")?,
    )?;
    let poses: Vec<FramePose> = read_jsonl(&frames.join("poses.jsonl"))?;

    let mut paths: Vec<_> = std::fs::read_dir(frames)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "pmdi"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .pmdi frames in {}", frames.display());
    }
    if paths.len() != poses.len() {
        bail!("{} frames but {} poses", paths.len(), poses.len());
    }

    let mut records: Vec<PolygonRecord> = Vec::new();
    for (path, frame_pose) in paths.iter().zip(&poses) {
        let img = read_depth(path)?;
        let segments = polystep_core::extract_polygon_map(
            &img,
            &intr,
            &frame_pose.pose,
            frame_pose.stamp,
            &cfg.pipeline,
        )
        .map_err(anyhow::Error::msg)?;
        records.extend(segments.iter().map(PolygonRecord::from));
    }
    write_jsonl(out, &records)?;
    println!("wrote {} polygon(s) to {}", records.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn estimate(
    cfg: &ScenarioConfig,
    input: Option<&Path>,
    truth_path: Option<&Path>,
    synth_duration: Option<f64>,
    seed: Option<u64>,
    out: &Path,
    metrics: Option<&Path>,
    save_streams: Option<&Path>,
) -> Result<()> {
    let (streams, truth): (Vec<OdomSample>, Option<Vec<OdomSample>>) = match synth_duration {
        Some(duration) => {
            let seed = seed.context("--seed is required with --synth-duration")?;
            if !(duration > 0.0) {
                bail!("--synth-duration must be positive");
            }
            let mut noise = cfg.noise;
            noise.seed = seed;
            let dt = 1.0 / cfg.ticks.estimator_hz;
            let n = (duration / dt).ceil() as usize;
            // A gentle walk: forward drift plus lateral sway and height bob.
            let truth: Vec<OdomSample> = (0..=n)
                .map(|i| {
                    let t = i as f64 * dt;
                    let pos = Vector3::new(
                        0.3 * t,
                        0.02 * (2.0 * std::f64::consts::PI * 0.8 * t).sin(),
                        0.8 + 0.01 * (2.0 * std::f64::consts::PI * 1.6 * t).sin(),
                    );
                    OdomSample::new(t, OdomSource::Fused, Pose::from_translation(pos))
                })
                .collect();
            let mut rng = noise.stream(RngStream::Odometry);
            let (kin, lio_full) = simulate_odometry(&truth, &noise, &mut rng);
            let lio_stride =
                (cfg.ticks.estimator_hz / cfg.ticks.lio_hz).round().max(1.0) as usize;
            let mut streams = kin;
            streams.extend(lio_full.into_iter().step_by(lio_stride));
            (streams, Some(truth))
        }
        None => {
            let input = input.context("--input or --synth-duration is required")?;
            let streams: Vec<OdomSample> = read_jsonl(input)?;
            let truth = match truth_path {
                Some(p) => Some(read_jsonl(p)?),
                None => None,
            };
            (streams, truth)
        }
    };
    validate_stream(&streams).map_err(anyhow::Error::msg)?;

    let fused = replay_streams(&streams, cfg.estimator.fusion()).map_err(anyhow::Error::msg)?;
    write_jsonl(out, &fused)?;

    if let Some(dir) = save_streams {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("streams.jsonl"), &streams)?;
        if let Some(truth) = &truth {
            write_jsonl(&dir.join("truth.jsonl"), truth)?;
        }
    }

    if let Some(metrics_path) = metrics {
        let truth = truth
            .as_ref()
            .context("--metrics needs --truth (or --synth-duration)")?;
        let kin: Vec<OdomSample> = streams
            .iter()
            .copied()
            .filter(|s| s.source == OdomSource::Kinematic)
            .collect();
        let lio: Vec<OdomSample> = streams
            .iter()
            .copied()
            .filter(|s| s.source == OdomSource::Lio)
            .collect();
        let file = std::fs::File::create(metrics_path)?;
        write_drift_csv(std::io::BufWriter::new(file), truth, &kin, &lio, &fused)?;
    }
    println!("fused {} sample(s) to {}", fused.len(), out.display());
    Ok(())
}

pub fn plan(
    cfg: &ScenarioConfig,
    map_path: &Path,
    pose: &str,
    sole_z: Option<f64>,
    out: &Path,
    candidates_out: Option<&Path>,
    grid_dump: Option<&Path>,
) -> Result<()> {
    let base = parse_pose(pose)?;
    let records: Vec<PolygonRecord> = read_jsonl(map_path)?;
    let treads: Vec<PolygonSegment> = records
        .iter()
        .map(PolygonSegment::from)
        .filter(|p| p.tread)
        .collect();
    let foot_state = FootState::level(sole_z.unwrap_or(-cfg.gait.z_t));

    let outcome = plan_from_map(cfg, &treads, &base, &foot_state, Side::Left)
        .map_err(anyhow::Error::msg)?;
    if let Some(path) = grid_dump {
        let file = std::fs::File::create(path)?;
        write_grid_csv(
            std::io::BufWriter::new(file),
            &outcome.grid_pre,
            &outcome.grid_post,
            cfg.foothold.h_layer,
        )?;
    }
    match (&outcome.candidate, &outcome.plan) {
        (Some(candidate), Some(plan)) => {
            if let Some(path) = candidates_out {
                write_jsonl(
                    path,
                    &[CandidateRecord::new(0.0, candidate, outcome.grid_post.len())],
                )?;
            }
            let steps: Vec<StepRecord> = plan.steps.iter().map(StepRecord::from).collect();
            write_jsonl(out, &steps)?;
            println!("planned {} step(s) to {}", steps.len(), out.display());
        }
        (Some(_), None) => {
            write_jsonl::<StepRecord>(out, &[])?;
            println!("status: no safe placement; wrote empty plan");
        }
        (None, _) => {
            write_jsonl::<StepRecord>(out, &[])?;
            println!("status: no footholds; wrote empty plan");
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_cmd(
    cfg: &ScenarioConfig,
    seed: u64,
    report_path: &Path,
    traces: Option<&Path>,
    odometry: Option<&Path>,
    plans: Option<&Path>,
    grid_dump: Option<&Path>,
    polygons: Option<&Path>,
) -> Result<ExitCode> {
    let mut cfg = cfg.clone();
    cfg.noise.seed = seed;
    let (report, artifacts) = run_scenario(&cfg).map_err(anyhow::Error::msg)?;

    std::fs::write(report_path, report.to_json())?;
    if let Some(path) = traces {
        let file = std::fs::File::create(path)?;
        write_traces_csv(std::io::BufWriter::new(file), &artifacts.traces)?;
    }
    if let Some(path) = odometry {
        write_jsonl(path, &artifacts.odometry)?;
    }
    if let Some(path) = plans {
        write_jsonl(path, &artifacts.plans)?;
    }
    if let Some(path) = grid_dump {
        let file = std::fs::File::create(path)?;
        write_grid_csv(
            std::io::BufWriter::new(file),
            &artifacts.grid_pre,
            &artifacts.grid_post,
            cfg.foothold.h_layer,
        )?;
    }
    if let Some(path) = polygons {
        write_jsonl(path, &artifacts.last_polygons)?;
    }

    println!(
        "status: {:?}; levels {}/{}; steps {}; e_m {:.1} mm; {} frames at {:.1} Hz",
        report.status,
        report.levels_completed,
        cfg.scene.n_steps,
        report.steps_completed,
        report.e_m_mm,
        report.frames_processed,
        report.timing.detection_hz_mean,
    );
    if report.status.is_success() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}

pub fn bench(cfg: &ScenarioConfig, frames: u32, seed: u64) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.noise.seed = seed;
    cfg.validate().map_err(anyhow::Error::msg)?;
    let intr = cfg.camera.intrinsics().map_err(anyhow::Error::msg)?;
    let cam_pose = start_base_pose(&cfg).compose(&cfg.camera.mount());
    let mut rng = cfg.noise.stream(RngStream::Render);

    let mut rates = Vec::with_capacity(frames as usize);
    for i in 0..frames {
        let img = render_depth(
            &cfg.scene,
            &cam_pose,
            &intr,
            &cfg.noise,
            cfg.camera.max_range,
            &mut rng,
        );
        let t0 = Instant::now();
        let segments = polystep_core::extract_polygon_map(
            &img,
            &intr,
            &cam_pose,
            i as f64 / cfg.ticks.perception_hz,
            &cfg.pipeline,
        )
        .map_err(anyhow::Error::msg)?;
        let dt = t0.elapsed().as_secs_f64();
        rates.push(1.0 / dt);
        log::debug!("frame {i}: {} segments in {:.1} ms", segments.len(), dt * 1e3);
    }

    let mean = rates.len() as f64 / rates.iter().map(|r| 1.0 / r).sum::<f64>();
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rates.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "{} frame(s) at {}x{}: mean {:.1} Hz, min {:.1} Hz, max {:.1} Hz",
        frames, intr.width, intr.height, mean, min, max
    );

    // Text histogram over the observed rate range.
    let buckets = 8usize;
    let lo = min.floor();
    let hi = max.ceil().max(lo + 1.0);
    let width = (hi - lo) / buckets as f64;
    let mut counts = vec![0usize; buckets];
    for r in &rates {
        let b = (((r - lo) / width) as usize).min(buckets - 1);
        counts[b] += 1;
    }
    let peak = counts.iter().cloned().max().unwrap_or(1).max(1);
    for (b, count) in counts.iter().enumerate() {
        let from = lo + b as f64 * width;
        let bar = "#".repeat(count * 40 / peak);
        println!("{:6.1}-{:6.1} Hz | {:4} {}", from, from + width, count, bar);
    }
    Ok(())
}

fn parse_pose(text: &str) -> Result<Pose> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing pose '{text}' (expected x,y,z,yaw)"))?;
    if parts.len() != 4 {
        bail!("pose '{text}' must have exactly four components x,y,z,yaw");
    }
    Ok(Pose::new(
        Rotation::rot_z(parts[3]),
        Vector3::new(parts[0], parts[1], parts[2]),
    ))
}
