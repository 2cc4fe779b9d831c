//! Deterministic desk-scale world: staircase renderer, noise models, the
//! closed-loop scenario runner and its metrics.

mod config;
mod noise;
mod scenario;
mod scene;

pub use config::{CameraConfig, EstimatorConfig, ScenarioConfig, TickConfig, SCHEMA_VERSION};
pub use noise::{gaussian3, random_unit, simulate_odometry, NoiseModel, RngStream};
pub use scenario::{
    execute_plan, plan_from_map, run_scenario, write_traces_csv, ExecutionResult, PlanOutcome,
    RunArtifacts, RunReport, ScenarioStatus, TimingReport, TraceRow,
};
pub use scene::{mount_rotation, render_depth, Aabb, StaircaseScene};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error("estimator failed: {0}")]
    Estimator(String),
    #[error("depth pipeline failed: {0}")]
    Pipeline(String),
    #[error("foothold generation failed: {0}")]
    Foothold(String),
    #[error("planner failed: {0}")]
    Planner(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
