//! Windowed SSIM on single planes with optional window masking and an exact
//! adjoint with respect to the second argument.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::math;
use crate::scene::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl SsimParams {
    /// 11×11 Gaussian window, σ = 1.5.
    pub const STANDARD: SsimParams = SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 };

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range) * (self.k1 * self.data_range)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range) * (self.k2 * self.data_range)
    }

    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let raw: Vec<f64> = (-r..=r).map(|i| math::exp(-((i * i) as f64) / (2.0 * self.sigma * self.sigma))).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams::STANDARD
    }
}

/// Result of a plane SSIM evaluation.
#[derive(Clone, Debug)]
pub struct PlaneSsim {
    pub mean: f64,
    pub windows: usize,
    /// `d mean / d y` per pixel, when requested.
    pub grad_y: Option<Vec<f64>>,
}

/// Window centers whose full window lies inside the image and, when given,
/// inside `allowed`.
pub fn window_centers(w: usize, h: usize, window: usize, allowed: Option<&[bool]>) -> Vec<bool> {
    let r = window / 2;
    let mut out = vec![false; w * h];
    if w < window || h < window {
        return out;
    }
    // integral image of disallowed pixels
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            let bad = allowed.map(|a| !a[y * w + x]).unwrap_or(false) as u32;
            row += bad;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    for cy in r..h - r {
        for cx in r..w - r {
            let (x0, y0, x1, y1) = (cx - r, cy - r, cx + r + 1, cy + r + 1);
            let bad = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0];
            out[cy * w + cx] = bad == 0;
        }
    }
    out
}

/// Correlation with a separable symmetric kernel, evaluated at every pixel whose
/// window fits; other entries are left at zero.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w - r {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * src[y * w + x + i - r];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h - r {
        for x in r..w - r {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i - r) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Transpose of [`filter_valid`]: scatters center values back onto pixels.
fn filter_scatter(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in r..h - r {
        for x in r..w - r {
            let v = src[y * w + x];
            if v == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i - r) * w + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w - r {
            let v = tmp[y * w + x];
            if v == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i - r] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM between planes `x` and `y` over the window centers flagged in
/// `centers`. Returns `None` when no center is flagged.
pub fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize, params: &SsimParams, centers: &[bool], want_grad: bool) -> Option<PlaneSsim> {
    let n = centers.iter().filter(|c| **c).count();
    if n == 0 {
        return None;
    }
    let k = params.kernel();
    let (c1, c2) = (params.c1(), params.c2());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let exx = filter_valid(&xx, w, h, &k);
    let eyy = filter_valid(&yy, w, h, &k);
    let exy = filter_valid(&xy, w, h, &k);
    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let inv_n = 1.0 / n as f64;
    for i in 0..w * h {
        if !centers[i] {
            continue;
        }
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let num1 = 2.0 * ux * uy + c1;
        let num2 = 2.0 * sxy + c2;
        let den1 = ux * ux + uy * uy + c1;
        let den2 = sxx + syy + c2;
        let s = num1 * num2 / (den1 * den2);
        total += s;
        if want_grad {
            let d_uy = 2.0 * ux * num2 / (den1 * den2) - s * 2.0 * uy / den1;
            let d_sxy = 2.0 * num1 / (den1 * den2);
            let d_syy = -s / den2;
            ga[i] = inv_n * (d_uy - 2.0 * uy * d_syy - ux * d_sxy);
            gb[i] = inv_n * 2.0 * d_syy;
            gc[i] = inv_n * d_sxy;
        }
    }
    let grad_y = want_grad.then(|| {
        let a = filter_scatter(&ga, w, h, &k);
        let b = filter_scatter(&gb, w, h, &k);
        let c = filter_scatter(&gc, w, h, &k);
        (0..w * h).map(|p| a[p] + y[p] * b[p] + x[p] * c[p]).collect()
    });
    Some(PlaneSsim { mean: total * inv_n, windows: n, grad_y })
}

fn channel(img: &ImageBuffer, ch: usize) -> Vec<f64> {
    img.pixels.iter().map(|p| p[ch]).collect()
}

/// Mean over RGB channels of windowed SSIM restricted to windows inside `allowed`.
/// Returns the value and, if requested, `d/d b`.
pub fn ssim_rgb_masked(
    a: &ImageBuffer,
    b: &ImageBuffer,
    allowed: Option<&[bool]>,
    params: &SsimParams,
    want_grad: bool,
) -> Option<(f64, Option<Vec<[f64; 3]>>)> {
    let (w, h) = a.dims();
    let centers = window_centers(w, h, params.window, allowed);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![[0.0; 3]; w * h]);
    for ch in 0..3 {
        let r = ssim_plane(&channel(a, ch), &channel(b, ch), w, h, params, &centers, want_grad)?;
        total += r.mean / 3.0;
        if let (Some(g), Some(gy)) = (grad.as_mut(), r.grad_y) {
            for (dst, v) in g.iter_mut().zip(gy) {
                dst[ch] += v / 3.0;
            }
        }
    }
    Some((total, grad))
}

/// Standard windowed SSIM (mean over RGB channels, 11×11 Gaussian window).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims("ssim", a.dims(), b.dims())?;
    let p = SsimParams::STANDARD;
    if a.width < p.window || a.height < p.window {
        return Err(Error::TooSmall { width: a.width, height: a.height, reason: "SSIM needs at least 11x11 pixels" });
    }
    Ok(ssim_rgb_masked(a, b, None, &p, false).map(|r| r.0).unwrap_or(1.0))
}
