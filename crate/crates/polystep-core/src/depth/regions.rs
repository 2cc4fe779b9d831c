//! Contour-bounded plane region proposals.
//!
//! Edge strength per pixel is the max of two normalized measures:
//!
//! - the depth jump to a 4-neighbor as a fraction of the local depth,
//!   scaled by `depth_jump_scale` (occlusion boundaries; surface slope
//!   produces only ~1-3% per pixel and stays far below threshold),
//! - the angular change of neighboring surface normals as a fraction of a
//!   right angle (crease edges between treads and risers, where depth is
//!   continuous).
//!
//! Edges are kept with two-level hysteresis, then regions are the
//! 4-connected components of the remaining valid pixels.

use crate::geometry::DepthImage;

use super::normals::NormalMap;

/// Edge / region extraction parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RegionParams {
    /// Weak hysteresis threshold on the normalized edge measure.
    pub edge_low: f64,
    /// Strong hysteresis threshold on the normalized edge measure.
    pub edge_high: f64,
    /// Relative depth jump treated as a full-scale (1.0) edge response.
    pub depth_jump_scale: f64,
    /// Pixel distance over which the normal angular change is measured.
    pub normal_stride: u32,
    /// Components smaller than this are discarded.
    pub min_region_pixels: usize,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self {
            edge_low: 0.05,
            edge_high: 0.15,
            depth_jump_scale: 0.4,
            normal_stride: 6,
            min_region_pixels: 60,
        }
    }
}

/// A connected set of pixels free of internal contour pixels.
#[derive(Debug, Clone)]
pub struct PixelRegion {
    pub pixels: Vec<(u32, u32)>,
}

/// Partition the valid pixels into contour-free regions.
pub fn detect_plane_regions(
    normals: &NormalMap,
    img: &DepthImage,
    params: &RegionParams,
) -> Vec<PixelRegion> {
    assert_eq!(normals.width(), img.width(), "normal map / image width");
    assert_eq!(normals.height(), img.height(), "normal map / image height");
    let w = img.width() as usize;
    let h = img.height() as usize;
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let stride = params.normal_stride.max(1) as usize;
    let half = stride.div_ceil(2);
    let data = img.data();
    let nvals = normals.normals_slice();
    let nmask = normals.mask_slice();

    // Hysteresis classes; the continuous measure is never needed, so angles
    // are classified by comparing dot products against cosine thresholds.
    const NONE: u8 = 0;
    const WEAK: u8 = 1;
    const STRONG: u8 = 2;
    let cos_weak = (params.edge_low * std::f64::consts::FRAC_PI_2).cos();
    let cos_strong = (params.edge_high * std::f64::consts::FRAC_PI_2).cos();
    let jump_weak = params.edge_low * params.depth_jump_scale;
    let jump_strong = params.edge_high * params.depth_jump_scale;

    let mut class = vec![NONE; w * h];
    for v in 0..h {
        for u in 0..w {
            let idx = v * w + u;
            let center = data[idx];
            if center <= 0.0 {
                continue;
            }

            // Depth jump channel: strongest single-sided difference,
            // relative to the local depth.
            let mut jump = 0.0f64;
            if u > 0 && data[idx - 1] > 0.0 {
                jump = jump.max((data[idx - 1] - center).abs());
            }
            if u + 1 < w && data[idx + 1] > 0.0 {
                jump = jump.max((data[idx + 1] - center).abs());
            }
            if v > 0 && data[idx - w] > 0.0 {
                jump = jump.max((data[idx - w] - center).abs());
            }
            if v + 1 < h && data[idx + w] > 0.0 {
                jump = jump.max((data[idx + w] - center).abs());
            }
            let rel = jump / center;
            let mut c = if rel >= jump_strong {
                STRONG
            } else if rel >= jump_weak {
                WEAK
            } else {
                NONE
            };

            // Crease channel: angle between the normals half a stride to
            // either side, so edge bands sit symmetrically on the crease.
            if c < STRONG {
                let mut min_dot = 1.0f64;
                if u >= half && u + half < w {
                    let (a, b) = (idx - half, idx + half);
                    if nmask[a] && nmask[b] {
                        min_dot = min_dot.min(nvals[a].dot(&nvals[b]));
                    }
                }
                if v >= half && v + half < h {
                    let (a, b) = (idx - half * w, idx + half * w);
                    if nmask[a] && nmask[b] {
                        min_dot = min_dot.min(nvals[a].dot(&nvals[b]));
                    }
                }
                if min_dot <= cos_strong {
                    c = STRONG;
                } else if min_dot <= cos_weak {
                    c = c.max(WEAK);
                }
            }
            class[idx] = c;
        }
    }

    // Hysteresis: strong seeds grow through weak pixels (8-connected).
    let mut edge = vec![false; w * h];
    let mut stack = Vec::new();
    for idx in 0..w * h {
        if class[idx] == STRONG && !edge[idx] {
            edge[idx] = true;
            stack.push(idx);
            while let Some(i) = stack.pop() {
                let (u, v) = (i % w, i / w);
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        let (nu, nv) = (u as i64 + du, v as i64 + dv);
                        if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                            continue;
                        }
                        let ni = nv as usize * w + nu as usize;
                        if !edge[ni] && class[ni] >= WEAK {
                            edge[ni] = true;
                            stack.push(ni);
                        }
                    }
                }
            }
        }
    }

    // 4-connected components over valid, non-edge pixels. A pixel needs a
    // valid normal to join a region: normal-blind pixels (borders, hole
    // neighborhoods) cannot certify planarity and must not bridge creases.
    let eligible_mask: Vec<bool> = (0..w * h).map(|i| data[i] > 0.0 && nmask[i]).collect();
    let mut visited = vec![false; w * h];
    let mut regions = Vec::new();
    for start in 0..w * h {
        if visited[start] || edge[start] || !eligible_mask[start] {
            continue;
        }
        let mut pixels = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (u, v) = (i % w, i / w);
            pixels.push((u as u32, v as u32));
            let mut try_push = |ni: usize| {
                if !visited[ni] && !edge[ni] && eligible_mask[ni] {
                    visited[ni] = true;
                    stack.push(ni);
                }
            };
            if u > 0 {
                try_push(i - 1);
            }
            if u + 1 < w {
                try_push(i + 1);
            }
            if v > 0 {
                try_push(i - w);
            }
            if v + 1 < h {
                try_push(i + w);
            }
        }
        // Flood order is deterministic; sorting is cosmetic and skipped.
        if pixels.len() >= params.min_region_pixels {
            regions.push(PixelRegion { pixels });
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::compute_normals;
    use crate::geometry::CameraIntrinsics;

    fn intr(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn uniform_frame_is_one_region() {
        let img = DepthImage::constant(40, 30, 2.0).unwrap();
        let nm = compute_normals(&img, &intr(40, 30));
        let regions = detect_plane_regions(&nm, &img, &RegionParams::default());
        assert_eq!(regions.len(), 1);
        // All pixels with certified planarity (everything but the 1-pixel
        // stencil border) belong to the one region.
        assert_eq!(regions[0].pixels.len(), nm.valid_count());
        assert_eq!(regions[0].pixels.len(), 38 * 28);
    }

    #[test]
    fn slanted_plane_is_one_region() {
        // Smooth slopes must not read as edges.
        let intr = intr(40, 30);
        let mut img = DepthImage::empty(40, 30);
        for v in 0..30 {
            for u in 0..40 {
                let a = (u as f64 - intr.cx) / intr.fx;
                img.set(u, v, 3.0 / (a + 1.0));
            }
        }
        let nm = compute_normals(&img, &intr);
        let regions = detect_plane_regions(&nm, &img, &RegionParams::default());
        assert_eq!(regions.len(), 1);
    }

    #[test]
    fn fully_invalid_frame_yields_no_regions() {
        let img = DepthImage::empty(40, 30);
        let nm = compute_normals(&img, &intr(40, 30));
        let regions = detect_plane_regions(&nm, &img, &RegionParams::default());
        assert!(regions.is_empty());
    }

    #[test]
    fn depth_jump_splits_regions() {
        // Two frontal planes at different depths with a jump between them.
        let mut img = DepthImage::empty(40, 30);
        for v in 0..30 {
            for u in 0..40 {
                img.set(u, v, if u < 20 { 1.0 } else { 2.0 });
            }
        }
        let nm = compute_normals(&img, &intr(40, 30));
        let regions = detect_plane_regions(
            &nm,
            &img,
            &RegionParams {
                min_region_pixels: 50,
                ..Default::default()
            },
        );
        assert_eq!(regions.len(), 2);
        for region in &regions {
            let left = region.pixels.iter().filter(|(u, _)| *u < 20).count();
            let frac = left as f64 / region.pixels.len() as f64;
            assert!(frac < 0.05 || frac > 0.95, "region mixes both planes");
        }
    }

    #[test]
    fn crease_without_depth_jump_splits_regions() {
        // A roof profile: depth decreases then increases, continuous at the
        // crease, so only the normal channel can split it.
        let intr = intr(40, 30);
        let mut img = DepthImage::empty(40, 30);
        for v in 0..30 {
            for u in 0..40 {
                let a = (u as f64 - intr.cx) / intr.fx;
                // Surface |x| + z = 2 in camera coordinates.
                img.set(u, v, 2.0 / (a.abs() + 1.0));
            }
        }
        let nm = compute_normals(&img, &intr);
        let regions = detect_plane_regions(
            &nm,
            &img,
            &RegionParams {
                min_region_pixels: 50,
                ..Default::default()
            },
        );
        assert_eq!(regions.len(), 2, "crease must split the roof");
    }

    #[test]
    fn small_components_are_dropped() {
        let mut img = DepthImage::empty(40, 30);
        for v in 0..4 {
            for u in 0..4 {
                img.set(u, v, 1.0);
            }
        }
        let regions = detect_plane_regions(
            &compute_normals(&img, &intr(40, 30)),
            &img,
            &RegionParams {
                min_region_pixels: 60,
                ..Default::default()
            },
        );
        assert!(regions.is_empty());
    }
}
