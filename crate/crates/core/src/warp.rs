//! Depth-based reprojection of one view into another, Z-buffered forward
//! splatting with local hole filling, and the geometric consistency set.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Result};
use crate::math;
use crate::scene::{CameraView, DepthMap, ImageBuffer, MaskImage, PatchRect};

/// Maps pixel `(u, v)` with view-space depth `depth` in `src` into `dst`.
/// Returns continuous target coordinates and the target view-space depth, or
/// `None` when the point lies behind the target camera.
pub fn reproject_pixel(u: f64, v: f64, depth: f64, src: &CameraView, dst: &CameraView) -> Option<(f64, f64, f64)> {
    if src == dst {
        return Some((u, v, depth));
    }
    let world = src.camera_to_world(&src.unproject(u, v, depth));
    let pc = dst.world_to_camera(&world);
    if !(pc.z() > 1e-9) {
        return None;
    }
    let (x, y) = dst.project(&pc);
    Some((x, y, pc.z()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpOptions {
    /// Fill uncovered pixels bracketed by direct hits.
    pub fill_holes: bool,
    /// Ray length for hole filling, in pixels.
    pub fill_radius: usize,
}

impl Default for WarpOptions {
    fn default() -> Self {
        WarpOptions { fill_holes: true, fill_radius: 8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    /// Uncovered pixels hold zero and must not be consumed.
    pub warped: ImageBuffer,
    /// Target-view depth of the warped samples.
    pub warped_depth: DepthMap,
    pub coverage: Vec<bool>,
    pub interpolated: Vec<bool>,
    /// Target pixels that received more than one sample.
    pub collisions: usize,
    /// Continuous target position of the sample kept at each pixel; the pixel
    /// center for interpolated and uncovered pixels.
    pub sample_pos: Vec<(f64, f64)>,
}

impl WarpResult {
    /// Coverage with interpolated pixels optionally excluded.
    pub fn usable(&self, include_interpolated: bool) -> Vec<bool> {
        self.coverage.iter().zip(&self.interpolated).map(|(c, i)| *c && (include_interpolated || !*i)).collect()
    }

    /// Samples `depth` (on the target grid) bilinearly at each kept sample's
    /// exact position, so a depth comparison against `warped_depth` is free of
    /// the half-pixel rounding error. Falls back to the pixel's own value when
    /// a bilinear neighbour is invalid.
    pub fn resample_at_samples(&self, depth: &DepthMap) -> Result<DepthMap> {
        let (w, h) = self.warped.dims();
        check_dims("resample depth", (w, h), depth.dims())?;
        let mut out = DepthMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (u, v) = self.sample_pos[i];
                out.set(x, y, bilinear_depth(depth, u, v).or_else(|| depth.get(x, y)));
            }
        }
        Ok(out)
    }
}

fn bilinear_depth(depth: &DepthMap, u: f64, v: f64) -> Option<f64> {
    let (w, h) = depth.dims();
    let (x0, y0) = (math::floor(u), math::floor(v));
    if x0 < 0.0 || y0 < 0.0 {
        return None;
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    if x1 >= w || y1 >= h {
        return None;
    }
    let (a, b, c, d) = (depth.get(x0, y0)?, depth.get(x1, y0)?, depth.get(x0, y1)?, depth.get(x1, y1)?);
    Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
}

const RAYS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];

/// Forward-splats every valid source pixel into the target view, keeping the
/// nearest sample per target pixel.
pub fn forward_warp(src: &ImageBuffer, src_depth: &DepthMap, cam_src: &CameraView, cam_dst: &CameraView, opts: &WarpOptions) -> Result<WarpResult> {
    check_dims("warp source depth", src.dims(), src_depth.dims())?;
    check_dims("warp source camera", src.dims(), cam_src.dims())?;
    let (w, h) = cam_dst.dims();
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut color = vec![[0.0; 3]; w * h];
    let mut hits = vec![0u32; w * h];
    let mut sample_pos: Vec<(f64, f64)> = (0..w * h).map(|i| ((i % w) as f64, (i / w) as f64)).collect();
    for y in 0..src.height {
        for x in 0..src.width {
            let Some(d) = src_depth.get(x, y) else { continue };
            let Some((u, v, z)) = reproject_pixel(x as f64, y as f64, d, cam_src, cam_dst) else { continue };
            let (ui, vi) = (math::round(u), math::round(v));
            if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
                continue;
            }
            let i = vi as usize * w + ui as usize;
            hits[i] += 1;
            if z < zbuf[i] {
                zbuf[i] = z;
                color[i] = src.get(x, y);
                sample_pos[i] = (u, v);
            }
        }
    }
    let direct: Vec<bool> = hits.iter().map(|h| *h > 0).collect();
    let collisions = hits.iter().filter(|h| **h > 1).count();
    let mut coverage = direct.clone();
    let mut interpolated = vec![false; w * h];
    let mut out_color = color.clone();
    let mut out_depth = zbuf.clone();
    if opts.fill_holes {
        let r = opts.fill_radius as isize;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if direct[i] {
                    continue;
                }
                let mut found: [Option<(usize, f64)>; 8] = [None; 8];
                for (k, (dx, dy)) in RAYS.iter().enumerate() {
                    for step in 1..=r {
                        let (xx, yy) = (x as isize + dx * step, y as isize + dy * step);
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            break;
                        }
                        let j = yy as usize * w + xx as usize;
                        if direct[j] {
                            let dist = math::sqrt(((dx * dx + dy * dy) * step * step) as f64);
                            found[k] = Some((j, dist));
                            break;
                        }
                    }
                }
                // only fill between samples on opposite sides
                let bracketed = (0..4).any(|p| found[2 * p].is_some() && found[2 * p + 1].is_some());
                if !bracketed {
                    continue;
                }
                let mut acc = [0.0; 3];
                let mut dacc = 0.0;
                let mut wsum = 0.0;
                for (j, dist) in found.iter().flatten() {
                    let wt = 1.0 / dist;
                    for c in 0..3 {
                        acc[c] += wt * color[*j][c];
                    }
                    dacc += wt * zbuf[*j];
                    wsum += wt;
                }
                out_color[i] = acc.map(|v| v / wsum);
                out_depth[i] = dacc / wsum;
                coverage[i] = true;
                interpolated[i] = true;
            }
        }
    }
    let mut warped_depth = DepthMap::invalid(w, h);
    for i in 0..w * h {
        if coverage[i] {
            warped_depth.values[i] = out_depth[i];
            warped_depth.valid[i] = true;
        } else {
            out_color[i] = [0.0; 3];
        }
    }
    Ok(WarpResult { warped: ImageBuffer { width: w, height: h, pixels: out_color }, warped_depth, coverage, interpolated, collisions, sample_pos })
}

/// Pixels of `P ∩ M` where two depth maps on the same grid agree within `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySet {
    pub pixels: MaskImage,
    pub tau: f64,
}

impl ConsistencySet {
    pub fn len(&self) -> usize {
        self.pixels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub fn consistency_set(depth_a: &DepthMap, depth_b: &DepthMap, patch: &PatchRect, mask: &MaskImage, tau: f64) -> Result<ConsistencySet> {
    check_dims("consistency depth", depth_a.dims(), depth_b.dims())?;
    check_dims("consistency mask", depth_a.dims(), mask.dims())?;
    let (w, h) = depth_a.dims();
    let pixels = MaskImage::from_fn(w, h, |x, y| {
        if !patch.contains(x, y) || !mask.get(x, y) {
            return false;
        }
        match (depth_a.get(x, y), depth_b.get(x, y)) {
            (Some(a), Some(b)) => (a - b).abs() <= tau,
            _ => false,
        }
    });
    Ok(ConsistencySet { pixels, tau })
}

/// Default consistency threshold: 1% of the valid depth range.
pub fn default_tau(depth: &DepthMap) -> f64 {
    match depth.valid_range() {
        Some((lo, hi)) if hi > lo => 0.01 * (hi - lo),
        Some((_, hi)) => 0.01 * hi,
        None => 0.0,
    }
}
