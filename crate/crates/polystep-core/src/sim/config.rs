//! Scenario configuration: one TOML file drives every CLI command.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depth::PipelineConfig;
use crate::estimator::{EstimatorParams, FusionParams};
use crate::foothold::FootholdParams;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::planner::{FootGeometry, GaitParams};

use super::noise::NoiseModel;
use super::scene::{mount_rotation, StaircaseScene};
use super::SimError;

/// Supported config schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Camera intrinsics plus its mount on the robot base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera position in the base frame, meters.
    pub mount_translation: [f64; 3],
    /// Downward pitch of the optical axis, degrees.
    pub mount_pitch_deg: f64,
    /// Rays longer than this return the invalid sentinel, meters.
    pub max_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            mount_translation: [0.05, 0.0, 0.4],
            mount_pitch_deg: 45.0,
            max_range: 8.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| SimError::BadConfig(e.to_string()))
    }

    /// Base-from-camera mount pose.
    pub fn mount(&self) -> Pose {
        Pose::new(
            mount_rotation(self.mount_pitch_deg.to_radians()),
            Vector3::new(
                self.mount_translation[0],
                self.mount_translation[1],
                self.mount_translation[2],
            ),
        )
    }
}

/// Filter and fusion tuning in flat TOML-friendly form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_contact: f64,
    pub r_meas: f64,
    pub swing_inflation: f64,
    /// Complementary filter time constant, seconds.
    pub tau: f64,
    /// LiDAR position in the base frame, meters.
    pub lidar_translation: [f64; 3],
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            q_pos: 1e-4,
            q_vel: 1e-3,
            q_contact: 1e-6,
            r_meas: 1e-4,
            swing_inflation: 1e6,
            tau: 0.1,
            lidar_translation: [0.0, 0.0, 0.5],
        }
    }
}

impl EstimatorConfig {
    pub fn params(&self, dt: f64) -> EstimatorParams {
        EstimatorParams::with_diagonals(
            dt,
            self.q_pos,
            self.q_vel,
            self.q_contact,
            self.r_meas,
            self.swing_inflation,
        )
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams { tau: self.tau }
    }

    pub fn lidar_mount(&self) -> Pose {
        Pose::from_translation(Vector3::new(
            self.lidar_translation[0],
            self.lidar_translation[1],
            self.lidar_translation[2],
        ))
    }
}

/// Loop rates and pacing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TickConfig {
    pub perception_hz: f64,
    pub estimator_hz: f64,
    pub lio_hz: f64,
    /// Double-support settle time before replanning in DS mode, seconds.
    pub ds_settle: f64,
    /// Double-support dwell between the two steps of one DS plan, seconds.
    pub ds_interstep: f64,
    /// Both feet must be planted this long before LIO fusion resumes.
    pub stable_support: f64,
    /// Simulation gives up after this much simulated time, seconds.
    pub max_sim_time: f64,
    /// Tread polygons older than this age out of the rolling map, seconds.
    pub map_retention: f64,
}

impl Default for TickConfig {
    fn default() -> Self {
        Self {
            perception_hz: 20.0,
            estimator_hz: 200.0,
            lio_hz: 20.0,
            ds_settle: 1.4,
            ds_interstep: 0.35,
            stable_support: 0.2,
            max_sim_time: 120.0,
            map_retention: 4.0,
        }
    }
}

/// Everything a scenario run needs. Serializes as the versioned TOML file
/// documented in the README.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub scene: StaircaseScene,
    pub camera: CameraConfig,
    pub noise: NoiseModel,
    pub pipeline: PipelineConfig,
    pub foothold: FootholdParams,
    pub gait: GaitParams,
    pub foot: FootGeometry,
    pub estimator: EstimatorConfig,
    pub ticks: TickConfig,
    /// Torso standoff before the first riser at scenario start, meters.
    pub start_standoff: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            scene: StaircaseScene::default(),
            camera: CameraConfig::default(),
            noise: NoiseModel::default(),
            pipeline: PipelineConfig::default(),
            foothold: FootholdParams::default(),
            gait: GaitParams::default(),
            foot: FootGeometry::default(),
            estimator: EstimatorConfig::default(),
            ticks: TickConfig::default(),
            start_standoff: 0.55,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema != SCHEMA_VERSION {
            return Err(SimError::BadConfig(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.scene.validate()?;
        self.camera.intrinsics()?;
        self.noise.validate()?;
        self.pipeline
            .validate()
            .map_err(|e| SimError::BadConfig(e.to_string()))?;
        self.foothold
            .validate()
            .map_err(|e| SimError::BadConfig(e.to_string()))?;
        self.gait
            .validate()
            .map_err(|e| SimError::BadConfig(e.to_string()))?;
        for (name, v) in [
            ("ticks.perception_hz", self.ticks.perception_hz),
            ("ticks.estimator_hz", self.ticks.estimator_hz),
            ("ticks.lio_hz", self.ticks.lio_hz),
            ("ticks.max_sim_time", self.ticks.max_sim_time),
        ] {
            if !(v > 0.0) {
                return Err(SimError::BadConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.ticks.estimator_hz < self.ticks.perception_hz {
            return Err(SimError::BadConfig(
                "ticks.estimator_hz must be at least ticks.perception_hz".into(),
            ));
        }
        Ok(())
    }
}
