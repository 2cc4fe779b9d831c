//! SO(3) stored as a 3x3 matrix, with the exponential map both ways.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

use super::GeometryError;

/// Tolerance for the orthonormality / determinant checks.
const ROTATION_TOL: f64 = 1e-9;

/// 3x3 orthonormal matrix with determinant +1.
///
/// The matrix is the canonical storage; quaternion conversion exists for
/// sampling and serialization. Composition does not re-orthonormalize: the
/// drift of repeated f64 matrix products stays far below the 1e-9 validity
/// tolerance even over millions of compositions (covered by a test). Call
/// [`Rotation::orthonormalized`] if an external source accumulates error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validate and wrap a raw matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let defect = orthonormality_defect(&m);
        if defect > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation { defect });
        }
        Ok(Rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(q.to_rotation_matrix().into_inner())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation about the y axis.
    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Rotation about the x axis.
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Uniformly distributed random rotation (quaternion sampling).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Normalizing a 4-vector of iid gaussians is uniform on SO(3).
        let q = Quaternion::new(
            normal_sample(rng),
            normal_sample(rng),
            normal_sample(rng),
            normal_sample(rng),
        );
        Rotation::from_quaternion(&UnitQuaternion::from_quaternion(q))
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Angle of the rotation in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let cos = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        cos.acos()
    }

    /// Axis-angle logarithm.
    ///
    /// At an angle of exactly π the axis sign is ambiguous; this returns one
    /// valid choice. Callers in the fusion path only ever see small relative
    /// rotations, so the branch is effectively unreachable there.
    pub fn log(&self) -> Vector3<f64> {
        let angle = self.angle();
        if angle < 1e-10 {
            // First-order: R ≈ I + [w]x.
            return 0.5 * vee(&(self.0 - self.0.transpose()));
        }
        if angle > std::f64::consts::PI - 1e-6 {
            // Near π the antisymmetric part vanishes; recover the axis from
            // the symmetric part R ≈ I + 2 [a]x².
            let b = (self.0 + Matrix3::identity()) * 0.5;
            let mut axis = Vector3::new(
                b[(0, 0)].max(0.0).sqrt(),
                b[(1, 1)].max(0.0).sqrt(),
                b[(2, 2)].max(0.0).sqrt(),
            );
            // Fix relative signs from the largest component.
            let k = axis.imax();
            if axis[k] > 0.0 {
                for i in 0..3 {
                    if i != k && b[(k, i)] < 0.0 {
                        axis[i] = -axis[i];
                    }
                }
            }
            let norm = axis.norm();
            if norm > 0.0 {
                axis /= norm;
            } else {
                axis = Vector3::x();
            }
            return axis * angle;
        }
        vee(&(self.0 - self.0.transpose())) * (angle / (2.0 * angle.sin()))
    }

    /// Rodrigues' exponential map from an axis-angle vector.
    pub fn exp(w: &Vector3<f64>) -> Rotation {
        let angle = w.norm();
        let k = skew(w);
        if angle < 1e-10 {
            // Second-order Taylor keeps exp(log(R)) tight near identity.
            return Rotation(Matrix3::identity() + k + 0.5 * k * k);
        }
        let a = angle.sin() / angle;
        let b = (1.0 - angle.cos()) / (angle * angle);
        Rotation(Matrix3::identity() + a * k + b * k * k)
    }

    /// Project back onto SO(3) (Gram-Schmidt on the columns).
    pub fn orthonormalized(&self) -> Rotation {
        let c0 = self.0.column(0).normalize();
        let mut c1 = self.0.column(1).into_owned();
        c1 -= c0 * c0.dot(&c1);
        let c1 = c1.normalize();
        let c2 = c0.cross(&c1);
        Rotation(Matrix3::from_columns(&[c0, c1, c2]))
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;

    fn mul(self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;

    fn mul(self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn orthonormality_defect(m: &Matrix3<f64>) -> f64 {
    let gram = m * m.transpose() - Matrix3::identity();
    let defect = gram.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    defect.max((m.determinant() - 1.0).abs())
}

fn normal_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; avoids pulling a distributions dependency in here.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}
