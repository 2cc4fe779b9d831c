//! Frames, rigid transforms and depth-pixel backprojection.
//!
//! Everything downstream (plane extraction, odometry fusion, foothold
//! selection, planning) trades in the types defined here. All values are
//! immutable and all operations are pure functions, so they can be shared
//! freely across threads.
//!
//! Conventions:
//! - A [`Rotation`] stores a 3x3 orthonormal matrix with determinant +1.
//!   `R * v` rotates a child-frame vector into the parent frame (columns of
//!   `R` are the child axes expressed in the parent frame).
//! - A [`Pose`] `^A T_B` maps points from frame `B` into frame `A`:
//!   `p_A = R * p_B + t`.
//! - The camera optical frame is z-forward, x-right, y-down. The source
//!   material never states this; it is an assumption consistent with the
//!   pinhole backprojection used here.

mod io;
mod rotation;

pub use io::{read_depth, read_depth_from, write_depth, write_depth_to, DEPTH_MAGIC};
pub use rotation::Rotation;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by geometry construction and pixel access.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthonormality defect {defect:.3e})")]
    InvalidRotation { defect: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid depth image: {0}")]
    InvalidImage(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },
    #[error("points are in frame {actual:?}, expected {expected:?}")]
    FrameMismatch { expected: Frame, actual: Frame },
    #[error("depth file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("depth file format: {0}")]
    Format(String),
}

/// Coordinate frame tag, carried as data and checked at module boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Fixed world frame.
    World,
    /// Robot base (CoM) frame.
    Base,
    /// Depth camera optical frame (z forward, x right, y down).
    Camera,
    /// LiDAR frame.
    Lidar,
}

/// Rigid transform in SE(3): rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Map a point from the child frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// Yaw (rotation about world z) of the x axis of this pose.
    pub fn yaw(&self) -> f64 {
        let x_axis = self.rotation * Vector3::x();
        x_axis.y.atan2(x_axis.x)
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }
}

/// Sentinel depth value marking an invalid pixel.
pub const INVALID_DEPTH: f64 = 0.0;

/// Row-major depth grid in meters. Depth 0 is the invalid sentinel; every
/// consumer must skip sentinel pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::InvalidImage(format!(
                "data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(GeometryError::InvalidImage(format!(
                "depth values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// All-invalid image of the given size.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![INVALID_DEPTH; (width as usize) * (height as usize)],
        }
    }

    /// Constant-depth image, mostly useful in tests.
    pub fn constant(width: u32, height: u32, depth: f64) -> Result<Self, GeometryError> {
        Self::new(width, height, vec![depth; (width as usize) * (height as usize)])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn in_bounds(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height
    }

    #[inline]
    fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    /// Raw stored value, including sentinels. Panics out of bounds.
    #[inline]
    pub fn raw(&self, u: u32, v: u32) -> f64 {
        self.data[self.index(u, v)]
    }

    /// Valid depth at a pixel, or `None` for sentinel / out of bounds.
    #[inline]
    pub fn depth(&self, u: u32, v: u32) -> Option<f64> {
        if !self.in_bounds(u, v) {
            return None;
        }
        let d = self.data[self.index(u, v)];
        (d > 0.0).then_some(d)
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, depth: f64) {
        let idx = self.index(u, v);
        self.data[idx] = depth;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }
}

/// Unordered collection of 3D points tagged with the frame they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Error unless the cloud is tagged with `expected`.
    pub fn expect_frame(&self, expected: Frame) -> Result<(), GeometryError> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(GeometryError::FrameMismatch {
                expected,
                actual: self.frame,
            })
        }
    }
}

/// Backproject pixel `(u, v)` through the inverse pinhole model.
///
/// Returns `Ok(None)` when the pixel holds the invalid sentinel, and an
/// error when the pixel is outside the image. The returned point is in the
/// camera optical frame with `z = D(u, v)`.
pub fn backproject(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    u: u32,
    v: u32,
) -> Result<Option<Vector3<f64>>, GeometryError> {
    if !depth.in_bounds(u, v) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: depth.width,
            height: depth.height,
        });
    }
    Ok(depth
        .depth(u, v)
        .map(|d| pixel_to_point(intr, u as f64, v as f64, d)))
}

/// Pinhole ray scaled to depth `d`, without bounds or sentinel checks.
#[inline]
pub fn pixel_to_point(intr: &CameraIntrinsics, u: f64, v: f64, d: f64) -> Vector3<f64> {
    Vector3::new((u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d)
}


#[cfg(test)]
mod tests {
    use super::testutil::random_pose;
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn intr_500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn backproject_principal_point_lies_on_axis() {
        let mut img = DepthImage::empty(640, 480);
        img.set(320, 240, 2.0);
        let p = backproject(&img, &intr_500(), 320, 240).unwrap().unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_offset_pixel() {
        let mut img = DepthImage::empty(640, 480);
        img.set(420, 240, 1.0);
        let p = backproject(&img, &intr_500(), 420, 240).unwrap().unwrap();
        assert_relative_eq!(p, Vector3::new(0.2, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_constant_depth_plane_has_exact_z() {
        let img = DepthImage::constant(32, 24, 1.7).unwrap();
        for v in 0..24 {
            for u in 0..32 {
                let p = backproject(&img, &intr_500(), u, v).unwrap().unwrap();
                assert_eq!(p.z, 1.7);
            }
        }
    }

    #[test]
    fn backproject_invalid_depth_is_no_point() {
        let img = DepthImage::empty(8, 8);
        assert!(backproject(&img, &intr_500(), 3, 3).unwrap().is_none());
    }

    #[test]
    fn backproject_out_of_bounds_is_usage_error() {
        let img = DepthImage::empty(8, 8);
        assert!(matches!(
            backproject(&img, &intr_500(), 8, 0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn backproject_linear_in_depth() {
        let mut rng = StdRng::seed_from_u64(7);
        let intr = intr_500();
        for _ in 0..200 {
            let u = rng.random_range(0..640);
            let v = rng.random_range(0..480);
            let d = rng.random_range(0.1..10.0);
            let mut img = DepthImage::empty(640, 480);
            img.set(u, v, d);
            let p1 = backproject(&img, &intr, u, v).unwrap().unwrap();
            img.set(u, v, 2.0 * d);
            let p2 = backproject(&img, &intr, u, v).unwrap().unwrap();
            assert_relative_eq!(p2, 2.0 * p1, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let id = pose.compose(&pose.inverse());
            assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-9);
            assert_relative_eq!(
                id.rotation.matrix(),
                &nalgebra::Matrix3::identity(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn pose_identity_extrinsics_passthrough() {
        let mut rng = StdRng::seed_from_u64(13);
        let lidar_in_world = random_pose(&mut rng);
        let base = lidar_in_world.compose(&Pose::identity().inverse());
        assert_relative_eq!(base.translation, lidar_in_world.translation, epsilon = 1e-12);
    }

    #[test]
    fn pose_pure_translation_compose_matches_homogeneous_oracle() {
        // 4x4 homogeneous matrix product as the independent route.
        let extr = Pose::from_translation(Vector3::new(0.1, 0.0, 0.5));
        let lidar = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let base = lidar.compose(&extr.inverse());
        assert_relative_eq!(base.translation, Vector3::new(0.9, 2.0, 2.5), epsilon = 1e-12);

        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = a.compose(&b);
            let hc = homogeneous(&a) * homogeneous(&b);
            assert_relative_eq!(homogeneous(&c), hc, epsilon = 1e-9);
        }
    }

    #[test]
    fn pose_compose_associative() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert_relative_eq!(left.translation, right.translation, epsilon = 1e-9);
            assert_relative_eq!(left.rotation.matrix(), right.rotation.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn depth_image_rejects_bad_data() {
        assert!(DepthImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DepthImage::new(2, 2, vec![0.0, 1.0, f64::NAN, 1.0]).is_err());
        assert!(DepthImage::new(2, 2, vec![0.0, 1.0, -0.5, 1.0]).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.0, 3.0, 4, 4).is_ok());
    }

    #[test]
    fn frame_mismatch_is_detected() {
        let cloud = PointCloud::new(vec![Vector3::zeros()], Frame::Base);
        assert!(cloud.expect_frame(Frame::World).is_err());
        assert!(cloud.expect_frame(Frame::Base).is_ok());
    }

    fn homogeneous(p: &Pose) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    }
}
