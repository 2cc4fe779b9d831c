//! Synthetic staircase world and the depth-camera raycaster.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthImage, Pose, Rotation};

use super::noise::NoiseModel;
use super::SimError;

/// Axis-aligned box in scene-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    /// Slab-method entry distance of `origin + t * dir`, or None.
    pub fn entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut t0 = (self.min[a] - origin[a]) * inv;
            let mut t1 = (self.max[a] - origin[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        (t_near >= 1e-9).then_some(t_near)
    }
}

/// Straight staircase: `n_steps` solid steps rising along +x from the base
/// of the first riser at the local origin, a ground slab in front, and a
/// landing platform on top. An optional protruding nosing extends each tread
/// over the riser below it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct StaircaseScene {
    pub n_steps: u32,
    /// Riser height, meters.
    pub rise: f64,
    /// Tread depth, meters.
    pub tread: f64,
    /// Stair width (y extent), meters.
    pub width: f64,
    /// Landing platform depth past the last step, meters.
    pub landing: f64,
    /// Protruding nosing depth, meters (0 disables).
    pub nosing: f64,
    /// World position of the base of the first riser (stair centerline).
    pub origin: [f64; 3],
    /// World yaw of the climb direction.
    pub yaw: f64,
}

impl Default for StaircaseScene {
    fn default() -> Self {
        Self {
            n_steps: 4,
            rise: 0.13,
            tread: 0.28,
            width: 1.2,
            landing: 0.8,
            nosing: 0.0,
            origin: [1.0, 0.0, 0.0],
            yaw: 0.0,
        }
    }
}

/// Thickness of the protruding nosing lip.
const NOSING_THICKNESS: f64 = 0.03;
/// Ground slab extent in front of the first riser.
const GROUND_EXTENT: f64 = 30.0;

impl StaircaseScene {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("rise", self.rise),
            ("tread", self.tread),
            ("width", self.width),
            ("landing", self.landing),
        ] {
            if !(v > 0.0) {
                return Err(SimError::BadConfig(format!("scene.{name} must be > 0, got {v}")));
            }
        }
        if self.nosing < 0.0 || self.nosing >= self.tread {
            return Err(SimError::BadConfig(format!(
                "scene.nosing must be in [0, tread), got {}",
                self.nosing
            )));
        }
        if self.n_steps == 0 {
            return Err(SimError::BadConfig("scene.n_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// World-from-scene transform.
    pub fn pose(&self) -> Pose {
        Pose::new(
            Rotation::rot_z(self.yaw),
            Vector3::new(self.origin[0], self.origin[1], self.origin[2]),
        )
    }

    /// Solid geometry in scene-local coordinates.
    pub fn boxes(&self) -> Vec<Aabb> {
        let hw = self.width * 0.5;
        let n = self.n_steps as f64;
        let mut boxes = vec![Aabb {
            min: Vector3::new(-GROUND_EXTENT, -GROUND_EXTENT, -0.5),
            max: Vector3::new(0.0, GROUND_EXTENT, 0.0),
        }];
        for i in 1..=self.n_steps {
            let fi = i as f64;
            boxes.push(Aabb {
                min: Vector3::new((fi - 1.0) * self.tread, -hw, 0.0),
                max: Vector3::new(fi * self.tread, hw, fi * self.rise),
            });
            if self.nosing > 0.0 {
                boxes.push(Aabb {
                    min: Vector3::new(
                        (fi - 1.0) * self.tread - self.nosing,
                        -hw,
                        fi * self.rise - NOSING_THICKNESS,
                    ),
                    max: Vector3::new((fi - 1.0) * self.tread, hw, fi * self.rise),
                });
            }
        }
        boxes.push(Aabb {
            min: Vector3::new(n * self.tread, -hw, 0.0),
            max: Vector3::new(n * self.tread + self.landing, hw, n * self.rise),
        });
        boxes
    }

    /// Height of tread `level` (1-based) above the scene ground.
    pub fn tread_height(&self, level: u32) -> f64 {
        level as f64 * self.rise
    }

    /// Walkable x span of `level` in scene-local coordinates. Level 0 is the
    /// ground in front of the stairs; the top level includes the landing.
    pub fn tread_x_span(&self, level: u32) -> (f64, f64) {
        if level == 0 {
            return (-GROUND_EXTENT, 0.0);
        }
        let fi = level as f64;
        let front = (fi - 1.0) * self.tread - self.nosing;
        let back = if level == self.n_steps {
            fi * self.tread + self.landing
        } else {
            fi * self.tread
        };
        (front, back)
    }

    /// Scene-local coordinates of a world point.
    pub fn to_local(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.pose().inverse().transform_point(p_world)
    }

    /// True surface height at local XY, for ground-truth checks.
    pub fn surface_height_local(&self, x: f64, y: f64) -> f64 {
        if y.abs() > self.width * 0.5 {
            return if x <= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        if x <= 0.0 {
            return 0.0;
        }
        let n = self.n_steps as f64;
        if x >= n * self.tread {
            if x <= n * self.tread + self.landing {
                return n * self.rise;
            }
            return f64::NEG_INFINITY;
        }
        let level = (x / self.tread).floor() as u32 + 1;
        self.tread_height(level)
    }

    /// Check a world-frame foot rectangle against the true geometry of the
    /// tread at `level`: all corners on the tread span, clear of the next
    /// riser, inside the stair width.
    pub fn rect_on_tread(&self, corners: &[Vector2<f64>; 4], level: u32) -> Result<(), String> {
        let (front, back) = self.tread_x_span(level);
        let hw = self.width * 0.5;
        for c in corners {
            let local = self.to_local(&Vector3::new(c.x, c.y, 0.0));
            if local.x < front - 1e-9 {
                return Err(format!(
                    "corner {:.3} m before tread {level} front edge",
                    front - local.x
                ));
            }
            if local.x > back + 1e-9 {
                return Err(format!(
                    "corner {:.3} m into the riser behind tread {level}",
                    local.x - back
                ));
            }
            if local.y.abs() > hw + 1e-9 {
                return Err(format!("corner off the stair side at y={:.3}", local.y));
            }
        }
        Ok(())
    }
}

/// Render a depth frame by casting one ray per pixel against the scene
/// boxes. Depth is the camera-z of the nearest hit (pinhole convention
/// matching [`crate::geometry::backproject`]), Gaussian depth noise and
/// random dropout are applied per valid pixel, misses and out-of-range hits
/// become the invalid sentinel.
pub fn render_depth(
    scene: &StaircaseScene,
    camera_pose_w: &Pose,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    max_range: f64,
    rng: &mut ChaCha12Rng,
) -> DepthImage {
    let boxes = scene.boxes();
    let scene_from_world = scene.pose().inverse();
    let origin = scene_from_world.transform_point(&camera_pose_w.translation);
    let rot = scene_from_world.rotation.compose(&camera_pose_w.rotation);

    let normal = Normal::new(0.0, noise.depth_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut img = DepthImage::empty(intr.width, intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            let ray_cam = Vector3::new(
                (u as f64 - intr.cx) / intr.fx,
                (v as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let dir = rot * ray_cam;
            let mut depth = f64::INFINITY;
            for b in &boxes {
                if let Some(t) = b.entry(&origin, &dir) {
                    depth = depth.min(t);
                }
            }
            if !depth.is_finite() || depth > max_range {
                continue;
            }
            // Both draws happen for every valid pixel so parameter changes
            // never shift the stream.
            let jitter: f64 = normal.sample(rng);
            let drop: f64 = rng.random();
            if drop < noise.depth_dropout {
                continue;
            }
            let d = if noise.depth_sigma > 0.0 { depth + jitter } else { depth };
            if d > 0.0 {
                img.set(u, v, d);
            }
        }
    }
    img
}

/// Default camera mount: pitched down at the stairs from above the torso.
pub fn mount_rotation(pitch_rad: f64) -> Rotation {
    // Base frame: x forward, y left, z up. Camera optical: z forward-down.
    let (s, c) = pitch_rad.sin_cos();
    let z_c = Vector3::new(c, 0.0, -s);
    let x_c = Vector3::new(0.0, -1.0, 0.0);
    let y_c = z_c.cross(&x_c);
    Rotation::from_matrix(nalgebra::Matrix3::from_columns(&[x_c, y_c, z_c]))
        .expect("orthonormal by construction")
}
