//! Per-pixel surface normals from depth, in the camera optical frame.

use nalgebra::Vector3;

use crate::geometry::{pixel_to_point, CameraIntrinsics, DepthImage};

/// Fill small sensor-dropout holes with the mean of valid 8-neighbors,
/// `passes` times. Only used to keep normal stencils intact; region
/// membership and plane fitting still require originally valid depth.
pub fn inpaint_small_holes(img: &DepthImage, passes: u32) -> DepthImage {
    let w = img.width();
    let h = img.height();
    let mut cur = img.clone();
    let mut holes: Vec<(u32, u32)> = Vec::new();
    for (i, &d) in img.data().iter().enumerate() {
        if d <= 0.0 {
            holes.push((i as u32 % w, i as u32 / w));
        }
    }
    for _ in 0..passes {
        if holes.is_empty() {
            break;
        }
        let mut fills: Vec<((u32, u32), f64)> = Vec::new();
        let mut remaining = Vec::new();
        for &(u, v) in &holes {
            let mut sum = 0.0;
            let mut n = 0u32;
            for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    if (du, dv) == (0, 0) {
                        continue;
                    }
                    let (nu, nv) = (u as i64 + du, v as i64 + dv);
                    if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                        continue;
                    }
                    if let Some(d) = cur.depth(nu as u32, nv as u32) {
                        sum += d;
                        n += 1;
                    }
                }
            }
            if n >= 5 {
                fills.push(((u, v), sum / n as f64));
            } else {
                remaining.push((u, v));
            }
        }
        if fills.is_empty() {
            break;
        }
        for ((u, v), d) in fills {
            cur.set(u, v, d);
        }
        holes = remaining;
    }
    cur
}

/// Per-pixel unit normals plus a validity mask.
#[derive(Debug, Clone)]
pub struct NormalMap {
    width: u32,
    height: u32,
    normals: Vec<Vector3<f64>>,
    mask: Vec<bool>,
}

impl NormalMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> Option<&Vector3<f64>> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let idx = v as usize * self.width as usize + u as usize;
        self.mask[idx].then(|| &self.normals[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Raw normal storage, row-major; entries are meaningful only where
    /// [`NormalMap::mask_slice`] is true.
    pub fn normals_slice(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn mask_slice(&self) -> &[bool] {
        &self.mask
    }
}

/// Compute normals as the normalized cross product of the image-row and
/// image-column tangent vectors of the backprojected surface.
///
/// The tangents use Sobel-smoothed central differences over the 3x3
/// neighborhood, so a pixel needs all nine neighbors valid to produce a
/// normal; everything else (borders, holes, isolated pixels) is masked.
/// Signs are normalized to point toward the camera (`n_z < 0`).
pub fn compute_normals(img: &DepthImage, intr: &CameraIntrinsics) -> NormalMap {
    compute_normals_strided(img, intr, 1)
}

/// [`compute_normals`] with the Sobel neighborhood dilated by `stride`
/// pixels. A wider baseline trades spatial resolution for a much better
/// angle SNR on noisy depth, which the crease detector needs.
pub fn compute_normals_strided(
    img: &DepthImage,
    intr: &CameraIntrinsics,
    stride: u32,
) -> NormalMap {
    let k = stride.max(1) as usize;
    let w = img.width() as usize;
    let h = img.height() as usize;
    let mut points = vec![Vector3::zeros(); w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let idx = v * w + u;
            if let Some(d) = img.depth(u as u32, v as u32) {
                points[idx] = pixel_to_point(intr, u as f64, v as f64, d);
                valid[idx] = true;
            }
        }
    }

    let mut normals = vec![Vector3::zeros(); w * h];
    let mut mask = vec![false; w * h];
    if w < 2 * k + 1 || h < 2 * k + 1 {
        return NormalMap {
            width: img.width(),
            height: img.height(),
            normals,
            mask,
        };
    }

    let kw = k * w;
    for v in k..h - k {
        for u in k..w - k {
            let idx = v * w + u;
            let n9 = [
                idx - kw - k,
                idx - kw,
                idx - kw + k,
                idx - k,
                idx,
                idx + k,
                idx + kw - k,
                idx + kw,
                idx + kw + k,
            ];
            if !n9.iter().all(|&i| valid[i]) {
                continue;
            }
            // Sobel weights: du = [-1 0 1; -2 0 2; -1 0 1], dv transposed.
            let du = (points[n9[2]] - points[n9[0]])
                + 2.0 * (points[n9[5]] - points[n9[3]])
                + (points[n9[8]] - points[n9[6]]);
            let dv = (points[n9[6]] - points[n9[0]])
                + 2.0 * (points[n9[7]] - points[n9[1]])
                + (points[n9[8]] - points[n9[2]]);
            let cross = du.cross(&dv);
            let norm = cross.norm();
            if norm < 1e-12 {
                continue;
            }
            let mut n = cross / norm;
            // Camera-facing convention.
            if n.z > 0.0 || (n.z == 0.0 && n.dot(&points[idx]) > 0.0) {
                n = -n;
            }
            normals[idx] = n;
            mask[idx] = true;
        }
    }

    NormalMap {
        width: img.width(),
        height: img.height(),
        normals,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 16.0, 12.0, 32, 24).unwrap()
    }

    /// Forward-difference form kept as the test oracle:
    /// a = P(u+1,v) - P(u,v), b = P(u,v+1) - P(u,v), n = (a x b)/|a x b|.
    fn forward_difference_normal(
        img: &DepthImage,
        intr: &CameraIntrinsics,
        u: u32,
        v: u32,
    ) -> Option<Vector3<f64>> {
        let p = pixel_to_point(intr, u as f64, v as f64, img.depth(u, v)?);
        let pr = pixel_to_point(intr, (u + 1) as f64, v as f64, img.depth(u + 1, v)?);
        let pd = pixel_to_point(intr, u as f64, (v + 1) as f64, img.depth(u, v + 1)?);
        let cross = (pr - p).cross(&(pd - p));
        let norm = cross.norm();
        if norm < 1e-12 {
            return None;
        }
        let mut n = cross / norm;
        if n.z > 0.0 {
            n = -n;
        }
        Some(n)
    }

    #[test]
    fn frontal_plane_points_back_at_camera() {
        let img = DepthImage::constant(32, 24, 2.0).unwrap();
        let nm = compute_normals(&img, &intr());
        assert!(nm.valid_count() > 0);
        for v in 0..24 {
            for u in 0..32 {
                if let Some(n) = nm.get(u, v) {
                    assert_relative_eq!(*n, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn slanted_plane_recovers_analytic_normal() {
        // Surface x + z = 3 in the camera frame: depth solves
        // (u-cx)/fx * d + d = 3.
        let intr = intr();
        let mut img = DepthImage::empty(32, 24);
        for v in 0..24 {
            for u in 0..32 {
                let a = (u as f64 - intr.cx) / intr.fx;
                img.set(u, v, 3.0 / (a + 1.0));
            }
        }
        let nm = compute_normals(&img, &intr);
        let expected = Vector3::new(1.0, 0.0, 1.0).normalize();
        let mut checked = 0;
        for v in 0..24 {
            for u in 0..32 {
                if let Some(n) = nm.get(u, v) {
                    let angle = n.dot(&-expected).clamp(-1.0, 1.0).acos();
                    assert!(angle < 1f64.to_radians(), "angle {} deg", angle.to_degrees());
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);

        // Sobel-smoothed and forward-difference routes agree on a plane.
        for (u, v) in [(5u32, 5u32), (20, 10), (10, 18)] {
            let fd = forward_difference_normal(&img, &intr, u, v).unwrap();
            let sobel = nm.get(u, v).unwrap();
            assert_relative_eq!(*sobel, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn isolated_pixel_is_masked() {
        let mut img = DepthImage::empty(9, 9);
        img.set(4, 4, 1.0);
        let nm = compute_normals(&img, &intr());
        assert_eq!(nm.valid_count(), 0);
        assert!(nm.get(4, 4).is_none());
    }

    #[test]
    fn hole_masks_its_neighborhood_only() {
        let mut img = DepthImage::constant(16, 16, 1.0).unwrap();
        img.set(8, 8, 0.0);
        let nm = compute_normals(&img, &intr());
        assert!(nm.get(8, 8).is_none());
        assert!(nm.get(7, 8).is_none()); // touches the hole
        assert!(nm.get(5, 8).is_some()); // clear of it
    }
}
