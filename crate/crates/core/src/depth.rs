//! Depth utilities: affine alignment of estimated depth, normals from depth
//! and the depth/normal guided bilateral filter.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::math::{self, Vec3};
use crate::scene::{CameraView, DepthMap, ImageBuffer, MaskImage, SparseDepthSamples, SparseSample};

/// Least-squares scale and shift mapping estimated depth onto metric depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineDepthFit {
    pub scale: f64,
    pub shift: f64,
    pub residual_rms: f64,
    pub sample_count: usize,
}

impl AffineDepthFit {
    pub const IDENTITY: AffineDepthFit = AffineDepthFit { scale: 1.0, shift: 0.0, residual_rms: 0.0, sample_count: 0 };
}

/// Fits `scale * d_mono + shift ≈ sample depth` over the sparse samples that land on
/// valid pixels of `d_mono`.
pub fn align_depth(d_mono: &DepthMap, samples: &SparseDepthSamples) -> Result<AffineDepthFit> {
    let pairs: Vec<(f64, f64)> = samples
        .samples
        .iter()
        .filter(|s| s.u < d_mono.width && s.v < d_mono.height)
        .filter_map(|s| d_mono.get(s.u, s.v).map(|m| (m, s.depth)))
        .collect();
    fit_pairs(&pairs)
}

fn fit_pairs(pairs: &[(f64, f64)]) -> Result<AffineDepthFit> {
    if pairs.len() < 2 {
        return Err(Error::SingularFit("fewer than two usable samples"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut sq = 0.0;
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        sq += x * x;
    }
    if sxx <= 1e-24 * sq || sxx == 0.0 {
        return Err(Error::SingularFit("estimated depth is constant over the samples"));
    }
    let scale = sxy / sxx;
    let shift = my - scale * mx;
    let sse: f64 = pairs.iter().map(|&(x, y)| (scale * x + shift - y) * (scale * x + shift - y)).sum();
    if !scale.is_finite() || !shift.is_finite() {
        return Err(Error::SingularFit("non-finite solution"));
    }
    Ok(AffineDepthFit { scale, shift, residual_rms: math::sqrt(sse / n), sample_count: pairs.len() })
}

/// Dense samples of `target` on a regular grid, skipping `exclude` and invalid pixels.
pub fn grid_samples(target: &DepthMap, exclude: Option<&MaskImage>, stride: usize) -> SparseDepthSamples {
    let stride = stride.max(1);
    let mut samples = Vec::new();
    for v in (0..target.height).step_by(stride) {
        for u in (0..target.width).step_by(stride) {
            if exclude.is_some_and(|m| m.get(u, v)) {
                continue;
            }
            if let Some(depth) = target.get(u, v) {
                samples.push(SparseSample { u, v, depth });
            }
        }
    }
    SparseDepthSamples { samples }
}

/// Aligns `d_mono` to a dense reference depth (e.g. a rendered depth) sampled on a
/// stride grid outside `exclude`.
pub fn align_to_dense(d_mono: &DepthMap, target: &DepthMap, exclude: Option<&MaskImage>, stride: usize) -> Result<AffineDepthFit> {
    check_dims("alignment target", d_mono.dims(), target.dims())?;
    align_depth(d_mono, &grid_samples(target, exclude, stride))
}

pub fn apply_affine(d: &DepthMap, fit: &AffineDepthFit) -> DepthMap {
    let mut out = DepthMap::invalid(d.width, d.height);
    for i in 0..d.values.len() {
        if d.valid[i] {
            let v = fit.scale * d.values[i] + fit.shift;
            if v > 0.0 && v.is_finite() {
                out.values[i] = v;
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Camera-space unit normals with validity flags.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        NormalMap { width, height, normals: vec![Vec3::ZERO; width * height], valid: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vec3> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.normals[i])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[inline]
fn ray_dir(cam: &CameraView, x: usize, y: usize) -> Vec3 {
    Vec3::new((x as f64 - cam.cx) / cam.fx, (y as f64 - cam.cy) / cam.fy, 1.0)
}

fn neighborhood_valid(d: &DepthMap, x: usize, y: usize) -> bool {
    if x == 0 || y == 0 || x + 1 >= d.width || y + 1 >= d.height {
        return false;
    }
    (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| d.valid[yy * d.width + xx]))
}

/// Unnormalized normal `m = tx × ty` and the orientation sign at an interior pixel.
fn raw_normal(d: &DepthMap, cam: &CameraView, x: usize, y: usize) -> (Vec3, Vec3, Vec3, f64) {
    let w = d.width;
    let p = |xx: usize, yy: usize| ray_dir(cam, xx, yy).scale(d.values[yy * w + xx]);
    let tx = p(x + 1, y) - p(x - 1, y);
    let ty = p(x, y + 1) - p(x, y - 1);
    let m = tx.cross(&ty);
    let sign = if m.z() > 0.0 { -1.0 } else { 1.0 };
    (m, tx, ty, sign)
}

/// Normals from central-difference tangents of the unprojected depth, oriented
/// toward the camera. Pixels without a fully valid 3×3 neighborhood are invalid.
pub fn normal_from_depth(d: &DepthMap, cam: &CameraView) -> NormalMap {
    let mut out = NormalMap::invalid(d.width, d.height);
    for y in 0..d.height {
        for x in 0..d.width {
            if !neighborhood_valid(d, x, y) {
                continue;
            }
            let (m, _, _, sign) = raw_normal(d, cam, x, y);
            if let Some(n) = m.normalized() {
                let i = y * d.width + x;
                out.normals[i] = n.scale(sign);
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Adjoint of [`normal_from_depth`]: maps `dL/dN` at valid normal pixels to `dL/dD`.
pub fn normal_from_depth_backward(d: &DepthMap, cam: &CameraView, normals: &NormalMap, d_normals: &[Vec3]) -> Vec<f64> {
    let w = d.width;
    let mut grad = vec![0.0; d.values.len()];
    for y in 0..d.height {
        for x in 0..w {
            let i = y * w + x;
            if !normals.valid[i] {
                continue;
            }
            let g = d_normals[i];
            if g == Vec3::ZERO {
                continue;
            }
            let (m, tx, ty, sign) = raw_normal(d, cam, x, y);
            let len = m.norm();
            let nh = m.scale(1.0 / len);
            // d(m/|m|) = (I - n nᵀ) dm / |m|
            let gm = (g - nh.scale(nh.dot(&g))).scale(sign / len);
            let gtx = ty.cross(&gm);
            let gty = gm.cross(&tx);
            let mut push = |xx: usize, yy: usize, gp: Vec3| {
                grad[yy * w + xx] += gp.dot(&ray_dir(cam, xx, yy));
            };
            push(x + 1, y, gtx);
            push(x - 1, y, -gtx);
            push(x, y + 1, gty);
            push(x, y - 1, -gty);
        }
    }
    grad
}

/// Parameters of the guided bilateral filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilateralParams {
    pub radius: usize,
    pub sigma_spatial: f64,
    pub sigma_color: f64,
    /// Depth sigma as a fraction of the valid depth range.
    pub sigma_depth_frac: f64,
    /// Sigma on `1 - n·n'`.
    pub sigma_normal: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        BilateralParams { radius: 7, sigma_spatial: 3.0, sigma_color: 0.3, sigma_depth_frac: 0.02, sigma_normal: 0.2 }
    }
}

/// Weight of neighbor `q` relative to center `p`. `None` depth/normal entries mean invalid.
#[allow(clippy::too_many_arguments)]
pub fn bilateral_weight(
    params: &BilateralParams,
    sigma_depth: f64,
    offset: (isize, isize),
    cp: &[f64; 3],
    cq: &[f64; 3],
    dp: Option<f64>,
    dq: Option<f64>,
    np: Option<Vec3>,
    nq: Option<Vec3>,
) -> f64 {
    let ds2 = (offset.0 * offset.0 + offset.1 * offset.1) as f64;
    let dc2: f64 = (0..3).map(|k| (cp[k] - cq[k]) * (cp[k] - cq[k])).sum();
    let mut e = ds2 / (2.0 * params.sigma_spatial * params.sigma_spatial) + dc2 / (2.0 * params.sigma_color * params.sigma_color);
    match (dp, dq) {
        (Some(a), Some(b)) => e += (a - b) * (a - b) / (2.0 * sigma_depth * sigma_depth),
        (None, None) => {}
        _ => return 0.0,
    }
    match (np, nq) {
        (Some(a), Some(b)) => {
            let t = 1.0 - a.dot(&b);
            e += t * t / (2.0 * params.sigma_normal * params.sigma_normal);
        }
        (None, None) => {}
        _ => return 0.0,
    }
    math::exp(-e)
}

/// Edge-preserving smoothing guided by color, depth and normals.
pub fn bilateral_filter(img: &ImageBuffer, d: &DepthMap, n: &NormalMap, params: &BilateralParams) -> Result<ImageBuffer> {
    check_dims("bilateral depth", img.dims(), d.dims())?;
    check_dims("bilateral normals", img.dims(), n.dims())?;
    let (w, h) = img.dims();
    let sigma_depth = match d.valid_range() {
        Some((lo, hi)) if hi > lo => params.sigma_depth_frac * (hi - lo),
        Some((_, hi)) => params.sigma_depth_frac * hi.max(1e-6),
        None => 1.0,
    };
    let r = params.radius as isize;
    let out = ImageBuffer::from_fn(w, h, |x, y| {
        let cp = img.get(x, y);
        let dp = d.get(x, y);
        let np = n.get(x, y);
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for dy in -r..=r {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            for dx in -r..=r {
                let xx = x as isize + dx;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                let (xx, yy) = (xx as usize, yy as usize);
                let cq = img.get(xx, yy);
                let wt = bilateral_weight(params, sigma_depth, (dx, dy), &cp, &cq, dp, d.get(xx, yy), np, n.get(xx, yy));
                if wt > 0.0 {
                    for k in 0..3 {
                        acc[k] += wt * cq[k];
                    }
                    wsum += wt;
                }
            }
        }
        // the center always contributes with weight 1
        acc.map(|v| (v / wsum).clamp(0.0, 1.0))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: usize, h: usize) -> CameraView {
        CameraView {
            fx: 40.0,
            fy: 40.0,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            width: w,
            height: h,
        }
    }

    /// Normal-equation oracle written independently of `align_depth`.
    fn normal_equation_oracle(pairs: &[(f64, f64)]) -> (f64, f64) {
        let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
        for &(x, y) in pairs {
            sxx += x * x;
            sx += x;
            sxy += x * y;
            sy += y;
        }
        let n = pairs.len() as f64;
        let det = sxx * n - sx * sx;
        ((sxy * n - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    }

    fn depth_and_samples(seed: u64, n: usize, a: f64, b: f64, noise: f64) -> (DepthMap, SparseDepthSamples, Vec<(f64, f64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (32, 32);
        let vals: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.5..4.0)).collect();
        let d = DepthMap::from_values(w, h, vals);
        let mut samples = Vec::new();
        let mut pairs = Vec::new();
        for _ in 0..n {
            let (u, v) = (rng.random_range(0..w), rng.random_range(0..h));
            let m = d.get(u, v).unwrap();
            let t = a * m + b + noise * (rng.random::<f64>() * 2.0 - 1.0);
            samples.push(SparseSample { u, v, depth: t });
            pairs.push((m, t));
        }
        (d, SparseDepthSamples { samples }, pairs)
    }

    #[test]
    fn exact_affine_relation_is_recovered() {
        let (d, s, _) = depth_and_samples(1, 5, 2.0, 3.0, 0.0);
        let fit = align_depth(&d, &s).unwrap();
        assert!((fit.scale - 2.0).abs() < 1e-9 && (fit.shift - 3.0).abs() < 1e-9);
        assert!(fit.residual_rms < 1e-9);
        let (d, s, _) = depth_and_samples(2, 5, 1.0, 0.0, 0.0);
        let fit = align_depth(&d, &s).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-9 && fit.shift.abs() < 1e-9);
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let (d, s, pairs) = depth_and_samples(3, 100, 1.7, -0.4, 0.01);
        let fit = align_depth(&d, &s).unwrap();
        let (a, b) = normal_equation_oracle(&pairs);
        assert!((fit.scale - a).abs() < 1e-9 && (fit.shift - b).abs() < 1e-9);
        let obj = |a: f64, b: f64| pairs.iter().map(|&(x, y)| (a * x + b - y) * (a * x + b - y)).sum::<f64>();
        let best = obj(fit.scale, fit.shift);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (1e-3, 1e-3), (-1e-3, 1e-3)] {
            assert!(obj(fit.scale + da, fit.shift + db) >= best);
        }
    }

    #[test]
    fn constant_estimate_is_singular() {
        let d = DepthMap::from_values(4, 4, vec![2.0; 16]);
        let s = SparseDepthSamples {
            samples: vec![SparseSample { u: 0, v: 0, depth: 1.0 }, SparseSample { u: 3, v: 2, depth: 2.0 }],
        };
        assert!(matches!(align_depth(&d, &s), Err(Error::SingularFit(_))));
        let one = SparseDepthSamples { samples: vec![SparseSample { u: 0, v: 0, depth: 1.0 }] };
        assert!(align_depth(&d, &one).is_err());
    }

    #[test]
    fn affine_application_and_invalidation() {
        let d = DepthMap::from_values(3, 1, vec![1.0, 2.0, 0.0]);
        let same = apply_affine(&d, &AffineDepthFit::IDENTITY);
        assert_eq!(same, d);
        let fit = AffineDepthFit { scale: 2.0, shift: 3.0, residual_rms: 0.0, sample_count: 2 };
        assert_eq!(apply_affine(&d, &fit).get(0, 0), Some(5.0));
        let neg = AffineDepthFit { scale: 1.0, shift: -10.0, residual_rms: 0.0, sample_count: 2 };
        assert_eq!(apply_affine(&d, &neg).get(0, 0), None);
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let c = cam(9, 7);
        let d = DepthMap::from_values(9, 7, vec![3.0; 63]);
        let n = normal_from_depth(&d, &c);
        for y in 0..7 {
            for x in 0..9 {
                let interior = x > 0 && y > 0 && x < 8 && y < 6;
                assert_eq!(n.get(x, y).is_some(), interior);
                if let Some(v) = n.get(x, y) {
                    assert!((v - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn slanted_plane_normal_matches_analytic() {
        // plane z = z0 + x (45 degrees about the y axis): points satisfy x - z + z0 = 0
        let c = cam(21, 21);
        let z0 = 5.0;
        let vals: Vec<f64> = (0..21 * 21)
            .map(|i| {
                let u = (i % 21) as f64;
                let k = (u - c.cx) / c.fx;
                z0 / (1.0 - k)
            })
            .collect();
        let d = DepthMap::from_values(21, 21, vals);
        let n = normal_from_depth(&d, &c);
        let expected = Vec3::new(1.0, 0.0, -1.0).normalized().unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for y in 1..20 {
            for x in 1..20 {
                let v = n.get(x, y).unwrap();
                assert!((v.x().abs() - v.z().abs()).abs() < 1e-9);
                total += math::acos(v.dot(&expected).clamp(-1.0, 1.0)).to_degrees();
                count += 1;
            }
        }
        assert!(total / (count as f64) < 0.5);
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let mut d = DepthMap::invalid(5, 5);
        d.set(2, 2, Some(1.0));
        assert!(normal_from_depth(&d, &cam(5, 5)).get(2, 2).is_none());
    }

    #[test]
    fn normal_backward_matches_finite_differences() {
        let c = cam(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..64).map(|i| 2.0 + 0.05 * (i % 8) as f64 + 0.1 * rng.random::<f64>()).collect();
        let d = DepthMap::from_values(8, 8, vals);
        let weights: Vec<Vec3> = (0..64).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let f = |d: &DepthMap| {
            let n = normal_from_depth(d, &c);
            (0..64).filter(|i| n.valid[*i]).map(|i| n.normals[i].dot(&weights[i])).sum::<f64>()
        };
        let n = normal_from_depth(&d, &c);
        let g = normal_from_depth_backward(&d, &c, &n, &weights);
        for i in [9, 18, 27, 36, 45, 0, 7] {
            let h = 1e-6;
            let mut dp = d.clone();
            dp.values[i] += h;
            let mut dm = d.clone();
            dm.values[i] -= h;
            let fd = (f(&dp) - f(&dm)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "pixel {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn bilateral_keeps_constants_and_smooths_texture() {
        let (w, h) = (24, 24);
        let c = cam(w, h);
        let d = DepthMap::from_values(w, h, vec![2.0; w * h]);
        let n = normal_from_depth(&d, &c);
        let flat = ImageBuffer::new(w, h, [0.3, 0.6, 0.2]);
        let out = bilateral_filter(&flat, &d, &n, &BilateralParams::default()).unwrap();
        for p in &out.pixels {
            for k in 0..3 {
                assert!((p[k] - flat.pixels[0][k]).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tex = ImageBuffer::from_fn(w, h, |_, _| {
            let v = rng.random::<f64>();
            [v, v, v]
        });
        let params = BilateralParams { sigma_color: 10.0, ..Default::default() };
        let smooth = bilateral_filter(&tex, &d, &n, &params).unwrap();
        let var = |img: &ImageBuffer| {
            let m = img.pixels.iter().map(|p| p[0]).sum::<f64>() / img.pixels.len() as f64;
            img.pixels.iter().map(|p| (p[0] - m) * (p[0] - m)).sum::<f64>() / img.pixels.len() as f64
        };
        assert!(var(&smooth) < var(&tex));
    }

    #[test]
    fn depth_step_blocks_bleeding() {
        let params = BilateralParams { sigma_depth_frac: 0.01, ..Default::default() };
        // depths 1 and 3: range 2, sigma 0.02
        let wgt = bilateral_weight(&params, 0.02, (1, 0), &[0.5; 3], &[0.5; 3], Some(1.0), Some(3.0), None, None);
        assert!(wgt < 1e-6);
        let (w, h) = (16, 8);
        let vals: Vec<f64> = (0..w * h).map(|i| if i % w < 8 { 1.0 } else { 3.0 }).collect();
        let d = DepthMap::from_values(w, h, vals);
        let n = NormalMap::invalid(w, h);
        let img = ImageBuffer::from_fn(w, h, |x, _| if x < 8 { [0.0; 3] } else { [1.0; 3] });
        let out = bilateral_filter(&img, &d, &n, &params).unwrap();
        for y in 0..h {
            assert!(out.get(7, y)[0] < 1e-6);
            assert!(out.get(8, y)[0] > 1.0 - 1e-6);
        }
    }
}
