//! Loss terms on rendered images and depths. Each term returns its value and
//! the gradient with respect to the rendered color and composited depth.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::depth::{normal_from_depth_backward, NormalMap};
use crate::error::{check_dims, Error, Result};
use crate::math::Vec3;
use crate::perceptual::{MultiScaleStructural, PerceptualMetric};
use crate::render::PixelGrads;
use crate::scene::{CameraView, DepthMap, ImageBuffer, MaskImage, PatchRect};
use crate::ssim::{ssim_rgb_masked, SsimParams};

#[derive(Clone, Debug)]
pub struct LossTerm {
    pub value: f64,
    pub grad: PixelGrads,
}

impl LossTerm {
    fn zero(w: usize, h: usize) -> Self {
        LossTerm { value: 0.0, grad: PixelGrads::zeros(w, h) }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1 − λ)·mean_S |I − Î| + λ·(1 − SSIM_S(I, Î))` over the pixel set `S`.
/// The SSIM term keeps only windows lying entirely in `S`; if no such window
/// exists it is dropped.
pub fn loss_color_region(gt: &ImageBuffer, rendered: &ImageBuffer, region: &MaskImage, lambda_ssim: f64) -> Result<LossTerm> {
    check_dims("color loss", gt.dims(), rendered.dims())?;
    check_dims("color loss region", gt.dims(), region.dims())?;
    let (w, h) = gt.dims();
    let n = region.count();
    if n == 0 {
        return Err(Error::EmptyRegion("color loss"));
    }
    let mut out = LossTerm::zero(w, h);
    let scale = (1.0 - lambda_ssim) / (3 * n) as f64;
    let mut l1 = 0.0;
    for i in region.inside() {
        for c in 0..3 {
            let d = rendered.pixels[i][c] - gt.pixels[i][c];
            l1 += d.abs();
            out.grad.color[i][c] = scale * sign(d);
        }
    }
    out.value = (1.0 - lambda_ssim) * l1 / (3 * n) as f64;
    if lambda_ssim > 0.0 {
        if let Some((s, Some(g))) = ssim_rgb_masked(gt, rendered, Some(&region.bits), &SsimParams::STANDARD, true) {
            out.value += lambda_ssim * (1.0 - s);
            for (dst, gs) in out.grad.color.iter_mut().zip(g) {
                for c in 0..3 {
                    dst[c] -= lambda_ssim * gs[c];
                }
            }
        }
    }
    Ok(out)
}

/// Color loss outside the mask.
pub fn loss_color_masked(gt: &ImageBuffer, rendered: &ImageBuffer, mask: &MaskImage, lambda_ssim: f64) -> Result<LossTerm> {
    loss_color_region(gt, rendered, &mask.complement(), lambda_ssim)
}

/// Color loss against the blended pseudo ground truth on `M^c ∪ P′`.
pub fn loss_color_warp(i_warp: &ImageBuffer, rendered: &ImageBuffer, mask: &MaskImage, consistent: &MaskImage, lambda_ssim: f64) -> Result<LossTerm> {
    loss_color_region(i_warp, rendered, &mask.complement().union(consistent), lambda_ssim)
}

fn check_depth_inputs(d_mono: &DepthMap, rendered: &[f64], mask: &MaskImage) -> Result<()> {
    check_dims("depth loss mask", d_mono.dims(), mask.dims())?;
    if rendered.len() != d_mono.values.len() {
        return Err(Error::DimensionMismatch {
            what: "rendered depth",
            expected_w: d_mono.width,
            expected_h: d_mono.height,
            got_w: rendered.len(),
            got_h: 1,
        });
    }
    Ok(())
}

/// Mean absolute depth error over valid pixels outside the mask.
pub fn loss_depth_initial(d_mono: &DepthMap, rendered: &[f64], mask: &MaskImage) -> Result<LossTerm> {
    check_depth_inputs(d_mono, rendered, mask)?;
    let idx: Vec<usize> = mask.outside().filter(|&i| d_mono.valid[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyRegion("depth loss"));
    }
    let mut out = LossTerm::zero(d_mono.width, d_mono.height);
    let inv = 1.0 / idx.len() as f64;
    for i in idx {
        let d = rendered[i] - d_mono.values[i];
        out.value += d.abs() * inv;
        out.grad.depth[i] = sign(d) * inv;
    }
    Ok(out)
}

/// `(Σ_{M^c} |e| + w·Σ_M |e|) / |D|`, `|D|` the number of valid pixels.
pub fn loss_depth_inpaint(d_mono: &DepthMap, rendered: &[f64], mask: &MaskImage, w_inp: f64) -> Result<LossTerm> {
    check_depth_inputs(d_mono, rendered, mask)?;
    let mut out = LossTerm::zero(d_mono.width, d_mono.height);
    let n = d_mono.valid_count();
    if n == 0 {
        return Ok(out);
    }
    let inv = 1.0 / n as f64;
    for i in 0..rendered.len() {
        if !d_mono.valid[i] {
            continue;
        }
        let wt = if mask.bits[i] { w_inp } else { 1.0 };
        let d = rendered[i] - d_mono.values[i];
        out.value += wt * d.abs() * inv;
        out.grad.depth[i] = wt * sign(d) * inv;
    }
    Ok(out)
}

/// `w·(1 − mean cos)` between estimated and rendered normals over mutually
/// valid pixels of `patch`. `rendered_depth` must be the depth the rendered
/// normals were derived from.
pub fn loss_normal(
    n_mono: &NormalMap,
    rendered_depth: &DepthMap,
    rendered_normals: &NormalMap,
    camera: &CameraView,
    patch: &PatchRect,
    w_inp: f64,
) -> Result<LossTerm> {
    check_dims("normal loss", n_mono.dims(), rendered_normals.dims())?;
    let (w, h) = n_mono.dims();
    let idx: Vec<usize> = (0..w * h)
        .filter(|&i| patch.contains(i % w, i / w) && n_mono.valid[i] && rendered_normals.valid[i])
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyRegion("normal loss"));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut cos = 0.0;
    let mut dn = vec![Vec3::ZERO; w * h];
    for &i in &idx {
        cos += n_mono.normals[i].dot(&rendered_normals.normals[i]);
        dn[i] = n_mono.normals[i].scale(-w_inp * inv);
    }
    let mut out = LossTerm::zero(w, h);
    out.value = w_inp * (1.0 - cos * inv);
    if w_inp != 0.0 {
        out.grad.depth = normal_from_depth_backward(rendered_depth, camera, rendered_normals, &dn);
    }
    Ok(out)
}

/// `w · distance(I_warp|P, Î|P)` with the default perceptual metric.
pub fn loss_perceptual_patch(i_warp: &ImageBuffer, rendered: &ImageBuffer, patch: &PatchRect, w_inp: f64) -> Result<LossTerm> {
    check_dims("perceptual loss", i_warp.dims(), rendered.dims())?;
    let (w, h) = rendered.dims();
    let metric = MultiScaleStructural::default();
    let (d, g) = metric.distance_with_grad(&i_warp.crop(patch), &rendered.crop(patch))?;
    let mut out = LossTerm::zero(w, h);
    out.value = w_inp * d;
    for (k, gk) in g.iter().enumerate() {
        let i = (patch.y + k / patch.width) * w + patch.x + k % patch.width;
        out.grad.color[i] = gk.map(|v| w_inp * v);
    }
    Ok(out)
}

/// Weights of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub lambda_normal: f64,
    pub lambda_perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_ssim: 0.2, lambda_depth: 0.5, lambda_normal: 0.1, lambda_perceptual: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config(alloc::format!("lambda_ssim {} outside [0, 1]", self.lambda_ssim)));
        }
        for (name, v) in [("lambda_depth", self.lambda_depth), ("lambda_normal", self.lambda_normal), ("lambda_perceptual", self.lambda_perceptual)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Component values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub perceptual: f64,
}
