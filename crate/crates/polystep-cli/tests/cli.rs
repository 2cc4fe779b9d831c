//! End-to-end checks of the `polystep` binary: every subcommand, the file
//! formats they exchange, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polystep"))
}

/// Small-frame scenario so the whole flow stays fast.
const LITE_CONFIG: &str = r#"
schema = 1

[scene]
tread = 0.5

[camera]
fx = 64.0
fy = 64.0
cx = 64.0
cy = 48.0
width = 128
height = 96

[pipeline.regions]
min_region_pixels = 40
normal_stride = 2

[pipeline.ransac]
min_inliers = 30

[ticks]
estimator_hz = 100.0
perception_hz = 10.0
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, LITE_CONFIG).unwrap();
    path
}

#[test]
fn render_map_plan_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let frames = dir.path().join("frames");

    let status = bin()
        .args(["render", "--out"])
        .arg(&frames)
        .args(["--frames", "2", "--seed", "7", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(frames.join("frame_0000.pmdi").exists());
    assert!(frames.join("frame_0001.pmdi").exists());
    assert!(frames.join("poses.jsonl").exists());
    assert!(frames.join("intrinsics.json").exists());

    // Depth files carry the documented magic.
    let bytes = std::fs::read(frames.join("frame_0000.pmdi")).unwrap();
    assert_eq!(&bytes[0..4], b"PMDI");
    assert_eq!(bytes.len(), 16 + 128 * 96 * 2);

    let polys = dir.path().join("polygons.jsonl");
    let status = bin()
        .args(["map", "--frames"])
        .arg(&frames)
        .arg("--out")
        .arg(&polys)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&polys).unwrap();
    assert!(text.lines().count() >= 2);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["stamp", "vertices", "normal", "d", "inliers", "rms"] {
        assert!(first.get(key).is_some(), "polygon record missing {key}");
    }

    let plan = dir.path().join("plan.jsonl");
    let status = bin()
        .args(["plan", "--map"])
        .arg(&polys)
        .args(["--pose", "0.5,0,0.8,0", "--out"])
        .arg(&plan)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&plan).unwrap();
    assert_eq!(text.lines().count(), 2, "DS plan should hold two steps");
    let step: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["i", "t", "side", "p_f", "p_t", "swing"] {
        assert!(step.get(key).is_some(), "step record missing {key}");
    }
}

#[test]
fn estimate_synthesizes_and_reports_drift() {
    let dir = tempfile::tempdir().unwrap();
    let fused = dir.path().join("fused.jsonl");
    let metrics = dir.path().join("drift.csv");
    let streams = dir.path().join("streams");

    let status = bin()
        .args(["estimate", "--synth-duration", "5", "--seed", "3", "--out"])
        .arg(&fused)
        .arg("--metrics")
        .arg(&metrics)
        .arg("--save-streams")
        .arg(&streams)
        .status()
        .unwrap();
    assert!(status.success());

    let fused_text = std::fs::read_to_string(&fused).unwrap();
    assert!(fused_text.lines().count() > 400);
    let sample: serde_json::Value =
        serde_json::from_str(fused_text.lines().next().unwrap()).unwrap();
    assert_eq!(sample["source"], "fused");
    assert!(sample["q"].as_array().unwrap().len() == 4);

    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("t,kin_ex,kin_ey,kin_ez,lio_ex"));

    // Saved streams replay to the same fused output.
    let fused2 = dir.path().join("fused2.jsonl");
    let status = bin()
        .args(["estimate", "--input"])
        .arg(streams.join("streams.jsonl"))
        .arg("--truth")
        .arg(streams.join("truth.jsonl"))
        .arg("--out")
        .arg(&fused2)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fused_text, std::fs::read_to_string(&fused2).unwrap());
}

#[test]
fn run_completes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let report = dir.path().join(name);
        let traces = dir.path().join(format!("{name}.csv"));
        let status = bin()
            .args(["run", "--seed", "9", "--report"])
            .arg(&report)
            .arg("--traces")
            .arg(&traces)
            .arg("--config")
            .arg(&cfg)
            .status()
            .unwrap();
        assert!(status.success(), "run should complete with exit 0");
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["status"]["kind"], "completed");
        assert!(std::fs::read_to_string(&traces).unwrap().lines().count() > 50);
        // Timing is wall-clock; everything else must be byte-stable.
        let mut stripped = json;
        stripped.as_object_mut().unwrap().remove("timing");
        reports.push(stripped.to_string());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn scenario_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // Risers far beyond the reachable step-up: the robot must refuse to step.
    let cfg = dir.path().join("impossible.toml");
    std::fs::write(
        &cfg,
        LITE_CONFIG.replace("tread = 0.5", "tread = 0.5\nrise = 0.45"),
    )
    .unwrap();
    let status = bin()
        .args(["run", "--seed", "1", "--report"])
        .arg(dir.path().join("r.json"))
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema = 99").unwrap();
    let status = bin()
        .args(["run", "--seed", "1", "--report"])
        .arg(dir.path().join("r.json"))
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Invalid pipeline parameter caught by validation, not a crash.
    std::fs::write(&cfg, "schema = 1\n[pipeline.diffusion]\nlambda = 0.9").unwrap();
    let status = bin()
        .args(["bench", "--frames", "1", "--seed", "1", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let status = bin().args(["bench"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
