//! Perceptual distance between image patches.
//!
//! The default metric averages `(1 - SSIM) / 2` of the luminance over three
//! dyadic scales. It is deterministic, symmetric, bounded to `[0, 1]` and
//! differentiable, and plugs in behind [`PerceptualMetric`] so a learned
//! backend can replace it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dims, Error, Result};
use crate::scene::{ImageBuffer, LUMA};
use crate::ssim::{ssim_plane, window_centers, SsimParams};

pub trait PerceptualMetric {
    /// Distance in `[0, 1]`, zero for identical inputs.
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        Ok(self.distance_masked(a, b, None)?.unwrap_or(0.0))
    }

    /// Distance restricted to pixels flagged in `valid`; `None` if nothing can be
    /// compared.
    fn distance_masked(&self, a: &ImageBuffer, b: &ImageBuffer, valid: Option<&[bool]>) -> Result<Option<f64>>;

    /// Distance and its gradient with respect to `b`.
    fn distance_with_grad(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<[f64; 3]>)>;

    /// Smallest accepted side length.
    fn min_size(&self) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiScaleStructural {
    pub scales: usize,
    pub params: SsimParams,
}

impl Default for MultiScaleStructural {
    fn default() -> Self {
        MultiScaleStructural { scales: 3, params: SsimParams { window: 3, sigma: 1.0, k1: 0.01, k2: 0.03, data_range: 1.0 } }
    }
}

struct Level {
    w: usize,
    h: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    valid: Vec<bool>,
}

fn downsample(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let i = 2 * y * w + 2 * x;
            out[y * nw + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    (out, nw, nh)
}

fn downsample_valid(src: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![false; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let i = 2 * y * w + 2 * x;
            out[y * nw + x] = src[i] && src[i + 1] && src[i + w] && src[i + w + 1];
        }
    }
    out
}

impl MultiScaleStructural {
    fn check(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
        check_dims("perceptual distance", a.dims(), b.dims())?;
        let min = self.min_size();
        if a.width < min || a.height < min {
            return Err(Error::TooSmall { width: a.width, height: a.height, reason: "patch smaller than the coarsest metric scale" });
        }
        Ok(())
    }

    fn pyramid(&self, a: &ImageBuffer, b: &ImageBuffer, valid: Option<&[bool]>) -> Vec<Level> {
        let (w, h) = a.dims();
        let mut levels = vec![Level {
            w,
            h,
            a: a.luminance(),
            b: b.luminance(),
            valid: valid.map(|v| v.to_vec()).unwrap_or_else(|| vec![true; w * h]),
        }];
        for _ in 1..self.scales {
            let l = levels.last().unwrap();
            let (na, nw, nh) = downsample(&l.a, l.w, l.h);
            let (nb, _, _) = downsample(&l.b, l.w, l.h);
            let nv = downsample_valid(&l.valid, l.w, l.h);
            levels.push(Level { w: nw, h: nh, a: na, b: nb, valid: nv });
        }
        levels
    }
}

impl PerceptualMetric for MultiScaleStructural {
    fn distance_masked(&self, a: &ImageBuffer, b: &ImageBuffer, valid: Option<&[bool]>) -> Result<Option<f64>> {
        self.check(a, b)?;
        let mut sum = 0.0;
        let mut used = 0;
        for l in self.pyramid(a, b, valid) {
            // exact zero for identical planes; the moment formulas round
            if l.a == l.b && l.valid.iter().any(|v| *v) {
                used += 1;
                continue;
            }
            let centers = window_centers(l.w, l.h, self.params.window, Some(&l.valid));
            if let Some(r) = ssim_plane(&l.a, &l.b, l.w, l.h, &self.params, &centers, false) {
                sum += (1.0 - r.mean) / 2.0;
                used += 1;
            }
        }
        Ok((used > 0).then(|| (sum / used as f64).clamp(0.0, 1.0)))
    }

    fn distance_with_grad(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<[f64; 3]>)> {
        self.check(a, b)?;
        let levels = self.pyramid(a, b, None);
        let scale = 1.0 / levels.len() as f64;
        let mut value = 0.0;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
        for l in &levels {
            let centers = window_centers(l.w, l.h, self.params.window, None);
            let r = ssim_plane(&l.a, &l.b, l.w, l.h, &self.params, &centers, true).expect("size checked");
            value += scale * (1.0 - r.mean) / 2.0;
            grads.push(r.grad_y.unwrap().into_iter().map(|g| -0.5 * scale * g).collect());
        }
        // pull coarse-level gradients back through the 2x2 average pooling
        for s in (1..levels.len()).rev() {
            let (cw, ch) = (levels[s].w, levels[s].h);
            let fw = levels[s - 1].w;
            let coarse = core::mem::take(&mut grads[s]);
            let fine = &mut grads[s - 1];
            for y in 0..ch {
                for x in 0..cw {
                    let g = 0.25 * coarse[y * cw + x];
                    let i = 2 * y * fw + 2 * x;
                    fine[i] += g;
                    fine[i + 1] += g;
                    fine[i + fw] += g;
                    fine[i + fw + 1] += g;
                }
            }
        }
        let g0 = &grads[0];
        Ok((value, g0.iter().map(|g| [g * LUMA[0], g * LUMA[1], g * LUMA[2]]).collect()))
    }

    fn min_size(&self) -> usize {
        (self.params.window << (self.scales - 1)).max(16)
    }
}

/// Distance with the default metric.
pub fn perceptual_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    MultiScaleStructural::default().distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_img(seed: u64, w: usize, h: usize) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn identical_inputs_have_zero_distance() {
        let a = random_img(1, 20, 18);
        assert_eq!(perceptual_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_black_vs_white() {
        // straight-line single-scale SSIM of two constants, averaged over scales
        let a = ImageBuffer::new(64, 64, [0.0; 3]);
        let b = ImageBuffer::new(64, 64, [1.0; 3]);
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        let (mu_a, mu_b) = (0.0, 1.0f64);
        let s = ((2.0 * mu_a * mu_b + c1) * c2) / ((mu_a * mu_a + mu_b * mu_b + c1) * c2);
        let expected = (0..3).map(|_| (1.0 - s) / 2.0).sum::<f64>() / 3.0;
        assert!((perceptual_distance(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_on_random_pairs() {
        for seed in 0..5 {
            let a = random_img(seed, 32, 24);
            let b = random_img(seed + 100, 32, 24);
            let d1 = perceptual_distance(&a, &b).unwrap();
            let d2 = perceptual_distance(&b, &a).unwrap();
            assert!((d1 - d2).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&d1));
        }
    }

    #[test]
    fn rejects_small_and_mismatched() {
        let a = random_img(1, 15, 32);
        assert!(matches!(perceptual_distance(&a, &a), Err(Error::TooSmall { .. })));
        let b = random_img(1, 16, 32);
        assert!(perceptual_distance(&a, &b).is_err());
        assert!(perceptual_distance(&b, &b).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MultiScaleStructural::default();
        let a = random_img(7, 21, 18);
        let b = random_img(8, 21, 18);
        let (v, g) = m.distance_with_grad(&a, &b).unwrap();
        assert!((v - m.distance(&a, &b).unwrap()).abs() < 1e-12);
        for idx in [0, 5, 44, 100, 21 * 18 - 1, 21 * 17 + 19] {
            for ch in 0..3 {
                let eps = 1e-6;
                let mut bp = b.clone();
                bp.pixels[idx][ch] += eps;
                let mut bm = b.clone();
                bm.pixels[idx][ch] -= eps;
                let fd = (m.distance(&a, &bp).unwrap() - m.distance(&a, &bm).unwrap()) / (2.0 * eps);
                assert!((fd - g[idx][ch]).abs() < 1e-8, "{idx}/{ch}: {fd} vs {}", g[idx][ch]);
            }
        }
    }

    #[test]
    fn masked_distance_ignores_invalid_pixels() {
        let m = MultiScaleStructural::default();
        let a = random_img(9, 32, 32);
        let mut b = a.clone();
        let valid: Vec<bool> = (0..32 * 32).map(|i| i % 32 < 16).collect();
        for i in 0..32 * 32 {
            if !valid[i] {
                b.pixels[i] = [1.0, 0.0, 1.0];
            }
        }
        assert_eq!(m.distance_masked(&a, &b, Some(&valid)).unwrap(), Some(0.0));
        assert!(m.distance(&a, &b).unwrap() > 0.0);
        let none = vec![false; 32 * 32];
        assert_eq!(m.distance_masked(&a, &b, Some(&none)).unwrap(), None);
    }
}
