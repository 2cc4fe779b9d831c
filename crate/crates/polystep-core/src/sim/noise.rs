//! Noise models and the seeded sub-stream RNG discipline.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::estimator::{OdomSample, OdomSource};
use crate::geometry::{Pose, Rotation};

use super::SimError;

/// Named RNG sub-streams. Each consumer draws from its own stream so
/// changing one noise source never shifts another's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Render = 1,
    Odometry = 2,
    Actuation = 3,
    Scenario = 4,
}

/// All scenario noise magnitudes plus the run seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Depth measurement sigma, meters.
    pub depth_sigma: f64,
    /// Per-pixel dropout probability.
    pub depth_dropout: f64,
    /// Kinematic odometry drift magnitude, meters per second.
    pub kinematic_drift_rate: f64,
    /// LIO position noise sigma, meters.
    pub lio_sigma_pos: f64,
    /// LIO attitude noise sigma, radians.
    pub lio_sigma_rot: f64,
    /// Foot placement noise sigma, meters.
    pub actuation_sigma: f64,
    /// Joint-encoder noise on synthesized contact observations, meters.
    pub proprio_sigma: f64,
    /// Master seed; sub-streams derive from it.
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma: 0.005,
            depth_dropout: 0.05,
            kinematic_drift_rate: 0.003,
            lio_sigma_pos: 0.005,
            lio_sigma_rot: 0.002,
            actuation_sigma: 0.003,
            proprio_sigma: 0.001,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("depth_sigma", self.depth_sigma),
            ("kinematic_drift_rate", self.kinematic_drift_rate),
            ("lio_sigma_pos", self.lio_sigma_pos),
            ("lio_sigma_rot", self.lio_sigma_rot),
            ("actuation_sigma", self.actuation_sigma),
            ("proprio_sigma", self.proprio_sigma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(SimError::BadConfig(format!(
                    "noise.{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.depth_dropout) {
            return Err(SimError::BadConfig(format!(
                "noise.depth_dropout must be in [0, 1], got {}",
                self.depth_dropout
            )));
        }
        Ok(())
    }

    /// Zero-noise copy (keeps the seed).
    pub fn silent(seed: u64) -> Self {
        Self {
            depth_sigma: 0.0,
            depth_dropout: 0.0,
            kinematic_drift_rate: 0.0,
            lio_sigma_pos: 0.0,
            lio_sigma_rot: 0.0,
            actuation_sigma: 0.0,
            proprio_sigma: 0.0,
            seed,
        }
    }

    /// Deterministic RNG for one named sub-stream.
    pub fn stream(&self, stream: RngStream) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }
}

/// Draw a zero-mean Gaussian 3-vector.
pub fn gaussian3(rng: &mut ChaCha12Rng, sigma: f64) -> Vector3<f64> {
    if sigma <= 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).unwrap();
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Uniformly distributed unit vector.
pub fn random_unit(rng: &mut ChaCha12Rng) -> Vector3<f64> {
    loop {
        let v = gaussian3(rng, 1.0);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Corrupt a ground-truth trajectory into the two odometry streams: the
/// kinematic stream accumulates drift (rate times elapsed time along one
/// random unit direction fixed per run), the LIO stream gets iid zero-mean
/// position and attitude noise per sample.
pub fn simulate_odometry(
    truth: &[OdomSample],
    noise: &NoiseModel,
    rng: &mut ChaCha12Rng,
) -> (Vec<OdomSample>, Vec<OdomSample>) {
    let drift_dir = random_unit(rng);
    let t0 = truth.first().map(|s| s.stamp).unwrap_or(0.0);
    let mut kinematic = Vec::with_capacity(truth.len());
    let mut lio = Vec::with_capacity(truth.len());
    for s in truth {
        let elapsed = s.stamp - t0;
        let drift = drift_dir * (noise.kinematic_drift_rate * elapsed);
        kinematic.push(OdomSample::new(
            s.stamp,
            OdomSource::Kinematic,
            Pose::new(s.pose.rotation, s.pose.translation + drift),
        ));

        let jitter = gaussian3(rng, noise.lio_sigma_pos);
        let rot_noise = Rotation::exp(&gaussian3(rng, noise.lio_sigma_rot));
        lio.push(OdomSample::new(
            s.stamp,
            OdomSource::Lio,
            Pose::new(
                s.pose.rotation.compose(&rot_noise),
                s.pose.translation + jitter,
            ),
        ));
    }
    (kinematic, lio)
}
