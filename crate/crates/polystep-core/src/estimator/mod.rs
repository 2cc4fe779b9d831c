//! Base state estimation: a contact-aided linear Kalman filter over base
//! position/velocity and foot contact points, loosely coupled with a
//! LiDAR-inertial pose stream through a complementary filter.
//!
//! Orientation is deliberately not part of the filter state: the IMU
//! orientation enters only as the rotation that maps body-frame contact
//! measurements into the world, and the fused attitude comes from the
//! complementary blend on SO(3).

mod fusion;
mod kf;
mod stream;

pub use fusion::{fuse_pose, lio_to_base, FusionParams};
pub use kf::{kf_predict, kf_update, reset_contact, KfUpdate};
pub use stream::{highpass_power, replay_streams, write_drift_csv, StreamFuser};

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

/// Base position + base velocity + eight contact points.
pub const STATE_DIM: usize = 30;
/// Eight relative contact positions + velocities + contact heights.
pub const OBS_DIM: usize = 56;
/// Contact points tracked per robot (four per foot).
pub const NUM_CONTACTS: usize = 8;

pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasurementCovariance = SMatrix<f64, OBS_DIM, OBS_DIM>;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NotPsd(String),
    #[error("invalid estimator parameter: {0}")]
    BadParams(String),
    #[error("pose sources disagree by {angle:.3} rad, refusing to blend")]
    SourcesDiverged { angle: f64 },
    #[error("samples of source {0:?} have decreasing stamps")]
    NonMonotonicStamps(OdomSource),
}

/// 30-dim filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub SVector<f64, STATE_DIM>);

impl StateVector {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn from_parts(
        p_base: Vector3<f64>,
        v_base: Vector3<f64>,
        contacts: &[Vector3<f64>; NUM_CONTACTS],
    ) -> Self {
        let mut x: SVector<f64, STATE_DIM> = SVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&p_base);
        x.fixed_rows_mut::<3>(3).copy_from(&v_base);
        for (i, c) in contacts.iter().enumerate() {
            x.fixed_rows_mut::<3>(6 + 3 * i).copy_from(c);
        }
        Self(x)
    }

    pub fn p_base(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn v_base(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn contact(&self, i: usize) -> Vector3<f64> {
        assert!(i < NUM_CONTACTS);
        self.0.fixed_rows::<3>(6 + 3 * i).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// 56-dim observation: relative contact positions, relative contact
/// velocities, contact heights, all stacked per contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationVector(pub SVector<f64, OBS_DIM>);

impl ObservationVector {
    pub fn from_parts(
        p_rel: &[Vector3<f64>; NUM_CONTACTS],
        v_rel: &[Vector3<f64>; NUM_CONTACTS],
        heights: &[f64; NUM_CONTACTS],
    ) -> Self {
        let mut y: SVector<f64, OBS_DIM> = SVector::zeros();
        for i in 0..NUM_CONTACTS {
            y.fixed_rows_mut::<3>(3 * i).copy_from(&p_rel[i]);
            y.fixed_rows_mut::<3>(24 + 3 * i).copy_from(&v_rel[i]);
            y[48 + i] = heights[i];
        }
        Self(y)
    }

    pub fn p_rel(&self, i: usize) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3 * i).into_owned()
    }

    pub fn v_rel(&self, i: usize) -> Vector3<f64> {
        self.0.fixed_rows::<3>(24 + 3 * i).into_owned()
    }

    pub fn height(&self, i: usize) -> f64 {
        self.0[48 + i]
    }
}

/// Filter tuning. The defaults are artifact tuning, not measured values.
#[derive(Debug, Clone)]
pub struct EstimatorParams {
    /// Filter tick in seconds.
    pub dt: f64,
    /// Process noise covariance.
    pub q: StateCovariance,
    /// Measurement noise covariance.
    pub r: MeasurementCovariance,
    /// Multiplier applied to measurement rows of feet not in contact.
    pub swing_inflation: f64,
}

impl EstimatorParams {
    pub fn with_diagonals(
        dt: f64,
        q_pos: f64,
        q_vel: f64,
        q_contact: f64,
        r_meas: f64,
        swing_inflation: f64,
    ) -> Self {
        let mut q = StateCovariance::zeros();
        for i in 0..3 {
            q[(i, i)] = q_pos;
            q[(3 + i, 3 + i)] = q_vel;
        }
        for i in 6..STATE_DIM {
            q[(i, i)] = q_contact;
        }
        let mut r = MeasurementCovariance::zeros();
        for i in 0..OBS_DIM {
            r[(i, i)] = r_meas;
        }
        Self {
            dt,
            q,
            r,
            swing_inflation,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.dt > 0.0) {
            return Err(EstimatorError::BadParams(format!(
                "dt {} must be > 0",
                self.dt
            )));
        }
        if self.swing_inflation < 1.0 {
            return Err(EstimatorError::BadParams(
                "swing_inflation must be >= 1".into(),
            ));
        }
        check_symmetric_psd(&self.q, "Q")?;
        check_symmetric_psd(&self.r, "R")?;
        Ok(())
    }
}

impl Default for EstimatorParams {
    fn default() -> Self {
        // Swing rows need a huge inflation: their innovations are persistent
        // (a moving foot against a near-static contact state), so at a few
        // hundred updates per swing even a x100 downweight leaks several
        // centimeters of bias into the base estimate.
        Self::with_diagonals(0.005, 1e-4, 1e-3, 1e-6, 1e-4, 1e6)
    }
}

pub(crate) fn check_symmetric_psd<const N: usize>(
    m: &SMatrix<f64, N, N>,
    name: &str,
) -> Result<(), EstimatorError> {
    for i in 0..N {
        for j in (i + 1)..N {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                return Err(EstimatorError::NotPsd(format!(
                    "{name} asymmetric at ({i},{j})"
                )));
            }
        }
    }
    // Cholesky with a tiny shift accepts PSD-singular matrices while still
    // rejecting indefinite ones.
    let shifted = m + SMatrix::<f64, N, N>::identity() * 1e-12;
    if shifted.cholesky().is_none() {
        return Err(EstimatorError::NotPsd(format!("{name} is indefinite")));
    }
    Ok(())
}

/// Where a pose sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdomSource {
    Kinematic,
    Lio,
    Fused,
}

/// One timestamped pose sample of an odometry stream.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OdomSample {
    pub stamp: f64,
    pub source: OdomSource,
    #[serde(flatten)]
    pub pose: Pose,
}

impl OdomSample {
    pub fn new(stamp: f64, source: OdomSource, pose: Pose) -> Self {
        Self {
            stamp,
            source,
            pose,
        }
    }
}

/// Check the per-source non-decreasing stamp contract of a mixed stream.
pub fn validate_stream(samples: &[OdomSample]) -> Result<(), EstimatorError> {
    let mut last: [Option<f64>; 3] = [None; 3];
    for s in samples {
        let slot = match s.source {
            OdomSource::Kinematic => 0,
            OdomSource::Lio => 1,
            OdomSource::Fused => 2,
        };
        if let Some(prev) = last[slot] {
            if s.stamp < prev {
                return Err(EstimatorError::NonMonotonicStamps(s.source));
            }
        }
        last[slot] = Some(s.stamp);
    }
    Ok(())
}
