//! Depth frame file format and JSON wire forms for poses.
//!
//! Depth frames are 16-bit little-endian grayscale in millimeters behind a
//! 16-byte header: magic `PMDI`, u32 width, u32 height, u32 reserved. The
//! zero sample is the invalid sentinel, matching the in-memory convention.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{DepthImage, GeometryError, Pose, Rotation};

/// File magic for depth frames.
pub const DEPTH_MAGIC: [u8; 4] = *b"PMDI";

/// Write a depth image to a stream. Depths are rounded to millimeters and
/// clamped to the u16 range; anything below half a millimeter becomes the
/// invalid sentinel.
pub fn write_depth_to<W: Write>(img: &DepthImage, mut w: W) -> Result<(), GeometryError> {
    w.write_all(&DEPTH_MAGIC)?;
    w.write_all(&img.width().to_le_bytes())?;
    w.write_all(&img.height().to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(img.data().len() * 2);
    for &d in img.data() {
        let mm = (d * 1000.0).round();
        let q = if mm < 1.0 {
            0u16
        } else if mm > 65535.0 {
            65535u16
        } else {
            mm as u16
        };
        buf.extend_from_slice(&q.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_depth<P: AsRef<Path>>(img: &DepthImage, path: P) -> Result<(), GeometryError> {
    let file = std::fs::File::create(path)?;
    write_depth_to(img, std::io::BufWriter::new(file))
}

/// Read a depth image written by [`write_depth_to`].
pub fn read_depth_from<R: Read>(mut r: R) -> Result<DepthImage, GeometryError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if header[0..4] != DEPTH_MAGIC {
        return Err(GeometryError::Format(format!(
            "bad magic {:?}, expected {:?}",
            &header[0..4],
            DEPTH_MAGIC
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| GeometryError::Format("dimension overflow".into()))?;
    let mut raw = vec![0u8; n * 2];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    DepthImage::new(width, height, data)
}

pub fn read_depth<P: AsRef<Path>>(path: P) -> Result<DepthImage, GeometryError> {
    let file = std::fs::File::open(path)?;
    read_depth_from(std::io::BufReader::new(file))
}

/// Flat JSON form of a pose: translation `t = [x, y, z]` in meters and unit
/// quaternion `q = [w, x, y, z]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseWire {
    t: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.to_quaternion();
        PoseWire {
            t: [self.translation.x, self.translation.y, self.translation.z],
            q: [q.w, q.i, q.j, q.k],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PoseWire::deserialize(deserializer)?;
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            wire.q[0], wire.q[1], wire.q[2], wire.q[3],
        ));
        Ok(Pose::new(
            Rotation::from_quaternion(&q),
            Vector3::new(wire.t[0], wire.t[1], wire.t[2]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn depth_roundtrip_quantizes_to_millimeters() {
        let mut img = DepthImage::empty(5, 3);
        img.set(0, 0, 1.2345);
        img.set(4, 2, 0.0004); // below half a millimeter -> sentinel
        img.set(2, 1, 70.0); // beyond u16 range -> clamped
        let mut buf = Vec::new();
        write_depth_to(&img, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"PMDI");
        assert_eq!(buf.len(), 16 + 5 * 3 * 2);
        let back = read_depth_from(buf.as_slice()).unwrap();
        assert_eq!(back.width(), 5);
        assert_eq!(back.height(), 3);
        assert!((back.raw(0, 0) - 1.2345).abs() <= 5e-4 + 1e-12);
        assert_eq!(back.depth(4, 2), None);
        assert_relative_eq!(back.raw(2, 1), 65.535, epsilon = 1e-12);
    }

    #[test]
    fn depth_read_rejects_bad_magic() {
        let buf = vec![0u8; 16];
        assert!(matches!(
            read_depth_from(buf.as_slice()),
            Err(GeometryError::Format(_))
        ));
    }

    #[test]
    fn pose_json_roundtrip() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = crate::geometry::testutil::random_pose(&mut rng);
            let json = serde_json::to_string(&pose).unwrap();
            let back: Pose = serde_json::from_str(&json).unwrap();
            assert_relative_eq!(back.translation, pose.translation, epsilon = 1e-12);
            assert_relative_eq!(back.rotation.matrix(), pose.rotation.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pose_json_key_names_are_stable() {
        let json = serde_json::to_string(&Pose::identity()).unwrap();
        assert!(json.contains("\"t\""));
        assert!(json.contains("\"q\""));
    }
}
