//! Complementary pose fusion of kinematic odometry with a LIO pose stream.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation};

use super::EstimatorError;

/// Relative rotations this close to π mean the two sources disagree
/// catastrophically; blending such poses is refused.
const DIVERGENCE_MARGIN: f64 = 1e-6;

/// Complementary filter time constant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionParams {
    /// Time constant in seconds. Larger trusts the kinematic (smooth) source
    /// longer; zero passes the LIO pose through.
    pub tau: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { tau: 0.05 }
    }
}

impl FusionParams {
    /// Complementary coefficient `alpha = tau / (tau + dt)`.
    pub fn alpha(&self, dt: f64) -> f64 {
        if self.tau.is_infinite() {
            return 1.0;
        }
        self.tau / (self.tau + dt)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.tau < 0.0 || self.tau.is_nan() {
            return Err(EstimatorError::BadParams(format!(
                "tau {} must be non-negative",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Move a LIO pose onto the robot base using the known lidar extrinsics:
/// `^W T_base = ^W T_lidar (^B T_lidar)^-1`.
pub fn lio_to_base(t_w_lidar: &Pose, t_b_lidar: &Pose) -> Pose {
    t_w_lidar.compose(&t_b_lidar.inverse())
}

/// Blend the kinematic and LIO poses.
///
/// Position: `p = alpha * p_kin + (1 - alpha) * p_lio`.
/// Attitude: `R = R_kin exp((1 - alpha) log(R_kin' R_lio))`.
///
/// Errors when the relative rotation between the sources approaches π.
pub fn fuse_pose(
    kinematic: &Pose,
    lio: &Pose,
    fp: &FusionParams,
    dt: f64,
) -> Result<Pose, EstimatorError> {
    fp.validate()?;
    if !(dt > 0.0) {
        return Err(EstimatorError::BadParams(format!("dt {dt} must be > 0")));
    }
    let alpha = fp.alpha(dt);

    let translation = kinematic.translation * alpha + lio.translation * (1.0 - alpha);

    let delta = kinematic.rotation.inverse().compose(&lio.rotation);
    let angle = delta.angle();
    if angle >= std::f64::consts::PI - DIVERGENCE_MARGIN {
        return Err(EstimatorError::SourcesDiverged { angle });
    }
    let rotation = kinematic
        .rotation
        .compose(&Rotation::exp(&(delta.log() * (1.0 - alpha))));

    Ok(Pose::new(rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn alpha_arithmetic() {
        let fp = FusionParams { tau: 0.09 };
        assert_relative_eq!(fp.alpha(0.01), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn infinite_tau_returns_kinematic() {
        let kin = Pose::new(Rotation::rot_z(0.3), Vector3::new(1.0, 2.0, 3.0));
        let lio = Pose::new(Rotation::rot_z(-0.5), Vector3::new(9.0, 9.0, 9.0));
        let fused = fuse_pose(&kin, &lio, &FusionParams { tau: f64::INFINITY }, 0.01).unwrap();
        assert_relative_eq!(fused.translation, kin.translation, epsilon = 1e-12);
        assert_relative_eq!(fused.rotation.matrix(), kin.rotation.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn zero_tau_returns_lio() {
        let kin = Pose::new(Rotation::rot_z(0.3), Vector3::new(1.0, 2.0, 3.0));
        let lio = Pose::new(Rotation::rot_z(-0.5), Vector3::new(9.0, 9.0, 9.0));
        let fused = fuse_pose(&kin, &lio, &FusionParams { tau: 0.0 }, 0.01).unwrap();
        assert_relative_eq!(fused.translation, lio.translation, epsilon = 1e-12);
        assert_relative_eq!(fused.rotation.matrix(), lio.rotation.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn commuting_single_axis_blend_halves_the_angle() {
        // alpha = 0.5 by choosing tau = dt.
        let kin = Pose::identity();
        let lio = Pose::new(Rotation::rot_z(0.1), Vector3::zeros());
        let fused = fuse_pose(&kin, &lio, &FusionParams { tau: 0.01 }, 0.01).unwrap();
        assert_relative_eq!(
            fused.rotation.matrix(),
            Rotation::rot_z(0.05).matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn translation_is_componentwise_convex_combination() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let kin = crate::geometry::testutil::random_pose(&mut rng);
            let lio = crate::geometry::testutil::random_pose(&mut rng);
            let Ok(fused) = fuse_pose(&kin, &lio, &FusionParams { tau: 0.05 }, 0.0125) else {
                continue;
            };
            for a in 0..3 {
                let lo = kin.translation[a].min(lio.translation[a]) - 1e-12;
                let hi = kin.translation[a].max(lio.translation[a]) + 1e-12;
                assert!(fused.translation[a] >= lo && fused.translation[a] <= hi);
            }
            // Output rotation stays orthonormal.
            assert!(Rotation::from_matrix(*fused.rotation.matrix()).is_ok());
        }
    }

    #[test]
    fn diverged_sources_are_refused() {
        let kin = Pose::identity();
        let lio = Pose::new(Rotation::rot_z(std::f64::consts::PI), Vector3::zeros());
        assert!(matches!(
            fuse_pose(&kin, &lio, &FusionParams::default(), 0.01),
            Err(EstimatorError::SourcesDiverged { .. })
        ));
    }

    #[test]
    fn lio_to_base_identity_extrinsics() {
        let t_w_lidar = Pose::new(Rotation::rot_y(0.2), Vector3::new(1.0, 0.0, 0.5));
        let base = lio_to_base(&t_w_lidar, &Pose::identity());
        assert_relative_eq!(base.translation, t_w_lidar.translation, epsilon = 1e-15);
    }

    #[test]
    fn lio_to_base_roundtrip_recovers_base() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..100 {
            let t_w_base = crate::geometry::testutil::random_pose(&mut rng);
            let t_b_lidar = crate::geometry::testutil::random_pose(&mut rng);
            let t_w_lidar = t_w_base.compose(&t_b_lidar);
            let back = lio_to_base(&t_w_lidar, &t_b_lidar);
            assert_relative_eq!(back.translation, t_w_base.translation, epsilon = 1e-12);
            assert_relative_eq!(
                back.rotation.matrix(),
                t_w_base.rotation.matrix(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn lio_to_base_pure_translations() {
        let t_w_lidar = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let t_b_lidar = Pose::from_translation(Vector3::new(0.1, 0.0, 0.5));
        let base = lio_to_base(&t_w_lidar, &t_b_lidar);
        assert_relative_eq!(base.translation, Vector3::new(0.9, 2.0, 2.5), epsilon = 1e-15);
    }
}
