//! Per-view inpainting confidence: the reference inpainting is warped into
//! each view and compared with that view's own inpainting inside a patch
//! around the mask, after detail-suppressing bilateral filtering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::depth::{bilateral_filter, normal_from_depth, BilateralParams};
use crate::error::{Error, Result};
use crate::math;
use crate::perceptual::{MultiScaleStructural, PerceptualMetric};
use crate::scene::{CameraView, DepthMap, ImageBuffer, MaskImage, PatchRect};
use crate::warp::{forward_warp, WarpOptions};

/// `w_inp = σ(α (conf − β))`.
pub fn inpaint_weight(conf: f64, alpha: f64, beta: f64) -> f64 {
    math::sigmoid(alpha * (conf - beta))
}

/// Tight bounding box of `mask`, padded by `margin_frac` of its size on each
/// side and clamped to the image.
pub fn extract_patch(mask: &MaskImage, margin_frac: f64) -> Result<PatchRect> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for i in mask.inside() {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    let px = math::ceil(margin_frac.max(0.0) * (x1 - x0 + 1) as f64) as usize;
    let py = math::ceil(margin_frac.max(0.0) * (y1 - y0 + 1) as f64) as usize;
    let (ax, ay) = (x0.saturating_sub(px), y0.saturating_sub(py));
    let (bx, by) = ((x1 + px).min(w - 1), (y1 + py).min(h - 1));
    Ok(PatchRect { x: ax, y: ay, width: bx - ax + 1, height: by - ay + 1 })
}

/// Grows `rect` symmetrically to at least `min` pixels per side, shifting it
/// to stay inside a `w × h` image.
pub fn ensure_min_size(rect: PatchRect, min: usize, w: usize, h: usize) -> PatchRect {
    fn grow(start: usize, len: usize, min: usize, limit: usize) -> (usize, usize) {
        if len >= min || limit <= min {
            return if len >= min { (start, len) } else { (0, limit) };
        }
        let extra = min - len;
        let s = start.saturating_sub(extra / 2).min(limit - min);
        (s, min)
    }
    let (x, width) = grow(rect.x, rect.width, min, w);
    let (y, height) = grow(rect.y, rect.height, min, h);
    PatchRect { x, y, width, height }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceParams {
    pub alpha: f64,
    pub beta: f64,
    /// Patch padding per side as a fraction of the mask bounding box.
    pub margin_frac: f64,
    /// Below this warp coverage of the patch a diagnostic is attached.
    pub min_coverage: f64,
    pub include_interpolated: bool,
    pub bilateral: BilateralParams,
    pub warp: WarpOptions,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            alpha: 10.0,
            beta: 0.5,
            margin_frac: 0.1,
            min_coverage: 0.5,
            include_interpolated: true,
            bilateral: BilateralParams::default(),
            warp: WarpOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub view_id: usize,
    pub conf: f64,
    pub weight: f64,
    pub last_update_iteration: usize,
    /// Fraction of the patch covered by the warped reference.
    pub coverage: f64,
    pub patch: PatchRect,
    pub diagnostic: Option<String>,
}

impl ConfidenceRecord {
    pub fn reference(view_id: usize, patch: PatchRect, params: &ConfidenceParams, iteration: usize) -> Self {
        ConfidenceRecord {
            view_id,
            conf: 1.0,
            weight: inpaint_weight(1.0, params.alpha, params.beta),
            last_update_iteration: iteration,
            coverage: 1.0,
            patch,
            diagnostic: None,
        }
    }
}

/// One side of a confidence comparison: an inpainted image with its aligned
/// depth and camera.
#[derive(Clone, Copy, Debug)]
pub struct InpaintedView<'a> {
    pub image: &'a ImageBuffer,
    pub depth: &'a DepthMap,
    pub camera: &'a CameraView,
}

/// Bilateral filter guided by the view's own depth and derived normals.
pub fn filtered(view: &InpaintedView, params: &BilateralParams) -> Result<ImageBuffer> {
    let n = normal_from_depth(view.depth, view.camera);
    bilateral_filter(view.image, view.depth, &n, params)
}

/// Confidence of `target` relative to `reference`. `mask` is the target's
/// inpaint mask.
pub fn evaluate_confidence(
    view_id: usize,
    target: &InpaintedView,
    mask: &MaskImage,
    reference: &InpaintedView,
    params: &ConfidenceParams,
    iteration: usize,
) -> Result<ConfidenceRecord> {
    let metric = MultiScaleStructural::default();
    let (w, h) = target.camera.dims();
    let patch = ensure_min_size(extract_patch(mask, params.margin_frac)?, metric.min_size(), w, h);
    let ref_bf = filtered(reference, &params.bilateral)?;
    let tar_bf = filtered(target, &params.bilateral)?;
    let warp = forward_warp(&ref_bf, reference.depth, reference.camera, target.camera, &params.warp)?;
    let usable = warp.usable(params.include_interpolated);
    let a = warp.warped.crop(&patch);
    let b = tar_bf.crop(&patch);
    let valid: Vec<bool> = (0..patch.area()).map(|k| usable[(patch.y + k / patch.width) * w + patch.x + k % patch.width]).collect();
    let covered = valid.iter().filter(|v| **v).count();
    let coverage = covered as f64 / patch.area() as f64;
    let mut diagnostic = None;
    if coverage < params.min_coverage {
        diagnostic = Some(format!("view {view_id}: warp covers {:.1}% of the patch, confidence uses the covered part only", 100.0 * coverage));
    }
    let dist = if covered == patch.area() { Some(metric.distance(&a, &b)?) } else { metric.distance_masked(&a, &b, Some(&valid))? };
    let conf = match dist {
        Some(d) => (1.0 - d).clamp(0.0, 1.0),
        None => {
            diagnostic = Some(format!("view {view_id}: no comparable region after warping"));
            0.0
        }
    };
    Ok(ConfidenceRecord {
        view_id,
        conf,
        weight: inpaint_weight(conf, params.alpha, params.beta),
        last_update_iteration: iteration,
        coverage,
        patch,
        diagnostic,
    })
}
