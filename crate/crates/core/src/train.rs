//! Objective assembly and the two optimization stages: background
//! reconstruction outside the mask, then confidence-weighted inpainting
//! guided by a warped reference view.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::confidence::{
    ensure_min_size, evaluate_confidence, extract_patch, inpaint_weight, ConfidenceParams, ConfidenceRecord, InpaintedView,
};
use crate::depth::{align_depth, align_to_dense, apply_affine, normal_from_depth, NormalMap};
use crate::error::{Error, Result};
use crate::loss::{
    loss_color_region, loss_depth_initial, loss_depth_inpaint, loss_normal, loss_perceptual_patch, LossBreakdown, LossTerm, LossWeights,
};
use crate::math::{self, Vec3};
use crate::optim::{Adam, LearningRates};
use crate::perceptual::{MultiScaleStructural, PerceptualMetric};
use crate::poisson::poisson_blend;
use crate::render::{render, render_with_gradients, PixelGrads, RenderOutput, RenderSettings, SceneGradients};
use crate::scene::{CameraView, DepthMap, Gaussian3D, ImageBuffer, MaskImage, PatchRect, SceneDataset};
use crate::warp::{consistency_set, default_tau, forward_warp};

/// How the per-view inpainting weight is derived from confidence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Every view gets weight 1.
    Uniform,
    /// Weight 1 at or above the threshold, 0 below.
    Threshold,
    /// `σ(α (conf − β))`.
    #[default]
    Confidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityControl {
    pub start: usize,
    /// Densification stops after this fraction of the stage.
    pub stop_fraction: f64,
    pub interval: usize,
    /// Threshold on the mean screen-space position gradient, in normalized
    /// device units.
    pub grad_threshold: f64,
    /// Gaussians larger than this fraction of the scene extent are split, smaller ones cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensityControl {
    fn default() -> Self {
        DensityControl {
            start: 100,
            stop_fraction: 0.6,
            interval: 100,
            grad_threshold: 3e-3,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub confidence: ConfidenceParams,
    pub weight_mode: WeightMode,
    pub confidence_threshold: f64,
    /// Consistency threshold in scene units; 1% of the rendered depth range when absent.
    pub tau: Option<f64>,
    pub initial_iterations: usize,
    pub inpaint_iterations: usize,
    /// Confidence refresh period; 10% of the inpaint stage when absent.
    pub refresh_interval: Option<usize>,
    pub lr: LearningRates,
    pub density: DensityControl,
    pub render: RenderSettings,
    pub seed: u64,
    /// Grid stride for aligning estimated depth to rendered depth.
    pub align_stride: usize,
    pub seed_opacity: f64,
    /// Side of the fallback perceptual patch.
    pub perceptual_patch: usize,
    /// Pixel stride when seeding Gaussians from the reference depth inside the mask.
    pub inpaint_seed_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            confidence: ConfidenceParams::default(),
            weight_mode: WeightMode::Confidence,
            confidence_threshold: 0.5,
            tau: None,
            initial_iterations: 7000,
            inpaint_iterations: 10000,
            refresh_interval: None,
            lr: LearningRates::default(),
            density: DensityControl::default(),
            render: RenderSettings::default(),
            seed: 0,
            align_stride: 4,
            seed_opacity: 0.1,
            perceptual_patch: 64,
            inpaint_seed_stride: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.refresh_interval == Some(0) {
            return Err(Error::Config("refresh_interval must be positive".into()));
        }
        if !(self.confidence.alpha > 0.0) {
            return Err(Error::Config(format!("sigmoid scale alpha must be positive, got {}", self.confidence.alpha)));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tau must be non-negative, got {t}")));
            }
        }
        if self.align_stride == 0 || self.inpaint_seed_stride == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        if !(self.seed_opacity > 0.0 && self.seed_opacity < 1.0) {
            return Err(Error::Config("seed_opacity must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn refresh_every(&self) -> usize {
        self.refresh_interval.unwrap_or((self.inpaint_iterations / 10).max(1))
    }

    /// Inpainting weight of a view under the configured mode.
    pub fn view_weight(&self, record: &ConfidenceRecord) -> f64 {
        match self.weight_mode {
            WeightMode::Uniform => 1.0,
            WeightMode::Threshold => {
                if record.conf >= self.confidence_threshold {
                    1.0
                } else {
                    0.0
                }
            }
            WeightMode::Confidence => inpaint_weight(record.conf, self.confidence.alpha, self.confidence.beta),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub view_id: usize,
    pub total: f64,
    #[serde(rename = "L_C")]
    pub l_c: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_iN")]
    pub l_in: f64,
    #[serde(rename = "L_iLPIPS")]
    pub l_ilpips: f64,
    pub gaussian_count: usize,
    #[serde(rename = "P′_fraction")]
    pub p_prime_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Initial,
    Inpaint,
}

/// Supervision for one view in one iteration.
#[derive(Clone, Debug)]
pub struct ViewTargets {
    pub stage: Stage,
    /// Input image for the first stage, blended pseudo ground truth for the second.
    pub color: ImageBuffer,
    /// Pixels supervised by the color term.
    pub color_region: MaskImage,
    /// Aligned estimated depth.
    pub depth: DepthMap,
    pub mask: MaskImage,
    pub w_inp: f64,
    pub normals: Option<NormalMap>,
    pub normal_patch: Option<PatchRect>,
    pub perceptual_patch: Option<PatchRect>,
}

/// Objective on a finished render and its gradient with respect to the rendered
/// color and depth.
pub fn pixel_objective(
    out: &RenderOutput,
    cam: &CameraView,
    t: &ViewTargets,
    weights: &LossWeights,
) -> Result<(LossBreakdown, PixelGrads)> {
    let (w, h) = cam.dims();
    let mut grad = PixelGrads::zeros(w, h);
    let mut b = LossBreakdown::default();
    let color = loss_color_region(&t.color, &out.color, &t.color_region, weights.lambda_ssim)?;
    b.color = color.value;
    grad.add_scaled(&color.grad, 1.0);
    let depth = match t.stage {
        Stage::Initial => loss_depth_initial(&t.depth, &out.depth_raw, &t.mask)?,
        Stage::Inpaint => loss_depth_inpaint(&t.depth, &out.depth_raw, &t.mask, t.w_inp)?,
    };
    b.depth = depth.value;
    grad.add_scaled(&depth.grad, weights.lambda_depth);
    if t.stage == Stage::Inpaint {
        if let (Some(n), Some(p)) = (&t.normals, &t.normal_patch) {
            match loss_normal(n, &out.depth, &out.normal, cam, p, t.w_inp) {
                Ok(term) => {
                    b.normal = term.value;
                    grad.add_scaled(&term.grad, weights.lambda_normal);
                }
                Err(Error::EmptyRegion(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if let Some(p) = &t.perceptual_patch {
            let term: LossTerm = loss_perceptual_patch(&t.color, &out.color, p, t.w_inp)?;
            b.perceptual = term.value;
            grad.add_scaled(&term.grad, weights.lambda_perceptual);
        }
    }
    b.total = b.color + weights.lambda_depth * b.depth + weights.lambda_normal * b.normal + weights.lambda_perceptual * b.perceptual;
    Ok((b, grad))
}

/// Renders, evaluates the objective and back-propagates to every Gaussian.
pub fn total_loss(
    gaussians: &[Gaussian3D],
    cam: &CameraView,
    targets: &ViewTargets,
    weights: &LossWeights,
    settings: &RenderSettings,
) -> Result<(LossBreakdown, SceneGradients)> {
    let out = render(gaussians, cam, settings);
    let (b, pg) = pixel_objective(&out, cam, targets, weights)?;
    Ok((b, render_with_gradients(gaussians, cam, settings, &pg)))
}

/// Depth divided by accumulated opacity where the opacity reaches the floor.
pub fn surface_depth(out: &RenderOutput, settings: &RenderSettings) -> DepthMap {
    let (w, h) = out.color.dims();
    let mut d = DepthMap::invalid(w, h);
    for i in 0..w * h {
        let a = out.alpha[i];
        if a >= settings.depth_alpha_floor && a > 0.0 {
            let v = if settings.normalize_depth { out.depth_raw[i] } else { out.depth_raw[i] / a };
            if v > 0.0 && v.is_finite() {
                d.values[i] = v;
                d.valid[i] = true;
            }
        }
    }
    d
}

/// Radius of the camera centers around their mean, padded by 10%.
pub fn scene_extent(cams: &[&CameraView]) -> f64 {
    let n = cams.len().max(1) as f64;
    let mut mean = Vec3::ZERO;
    for c in cams {
        mean += c.center().scale(1.0 / n);
    }
    let r = cams.iter().map(|c| (c.center() - mean).norm()).fold(0.0, f64::max);
    (1.1 * r).max(1e-3)
}

/// Gaussians at the unprojected sparse samples of every view, colored from the
/// image and sized to the local sample spacing.
pub fn seed_gaussians(dataset: &SceneDataset, opacity: f64) -> Vec<Gaussian3D> {
    let mut out = Vec::new();
    for v in &dataset.views {
        let n = v.sparse.samples.len();
        if n == 0 {
            continue;
        }
        let (w, h) = v.dims();
        let spacing = math::sqrt((w * h) as f64 / n as f64);
        for s in &v.sparse.samples {
            let pc = v.camera.unproject(s.u as f64, s.v as f64, s.depth);
            let p = v.camera.camera_to_world(&pc);
            let sigma = 0.5 * spacing * s.depth / v.camera.fx;
            let c = v.image.get(s.u, s.v);
            out.push(Gaussian3D::isotropic(p, sigma, opacity, Vec3::new(c[0], c[1], c[2])));
        }
    }
    out
}

/// Parameters, optimizer moments and density statistics.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub gaussians: Vec<Gaussian3D>,
    pub adam: Adam,
    pub iteration: usize,
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub extent: f64,
}

impl TrainState {
    pub fn new(gaussians: Vec<Gaussian3D>, extent: f64) -> Self {
        let n = gaussians.len();
        TrainState { gaussians, adam: Adam::new(n), iteration: 0, grad_accum: vec![0.0; n], grad_count: vec![0; n], extent }
    }

    fn accumulate(&mut self, g: &SceneGradients, ndc_scale: f64) {
        for i in 0..self.gaussians.len() {
            if g.visible[i] {
                self.grad_accum[i] += g.mean2d_norm[i] * ndc_scale;
                self.grad_count[i] += 1;
            }
        }
    }

    /// Appends Gaussians with fresh moments and statistics.
    pub fn extend(&mut self, extra: &[Gaussian3D]) {
        let n = self.gaussians.len();
        let mut sources: Vec<Option<usize>> = (0..n).map(Some).collect();
        sources.extend(core::iter::repeat_n(None, extra.len()));
        self.gaussians.extend_from_slice(extra);
        self.adam.remap(&sources);
        self.grad_accum.resize(self.gaussians.len(), 0.0);
        self.grad_count.resize(self.gaussians.len(), 0);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// exceeds the threshold, then prunes nearly transparent ones. Statistics are
/// reset afterwards.
pub fn densify_and_prune(state: &mut TrainState, cfg: &DensityControl, rng: &mut ChaCha8Rng) -> DensifyReport {
    let n = state.gaussians.len();
    let mut report = DensifyReport::default();
    let mut out: Vec<Gaussian3D> = Vec::with_capacity(n);
    let mut sources: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut budget = cfg.max_gaussians.saturating_sub(n);
    let big = cfg.percent_dense * state.extent;
    for i in 0..n {
        let g = state.gaussians[i];
        let avg = if state.grad_count[i] > 0 { state.grad_accum[i] / state.grad_count[i] as f64 } else { 0.0 };
        if avg < cfg.grad_threshold || budget == 0 {
            out.push(g);
            sources.push(Some(i));
            continue;
        }
        budget -= 1;
        let s = g.scale();
        let smax = s[0].max(s[1]).max(s[2]);
        if smax <= big {
            report.cloned += 1;
            out.push(g);
            sources.push(Some(i));
            out.push(g);
            sources.push(None);
        } else {
            report.split += 1;
            let r = g.rotation_matrix();
            for _ in 0..2 {
                let z: [f64; 3] = core::array::from_fn(|k| {
                    let e: f64 = StandardNormal.sample(rng);
                    e * s[k]
                });
                let mut child = g;
                child.position = g.position + r.mul_vec(&Vec3::new(z[0], z[1], z[2]));
                let shrink = math::ln(1.6);
                child.log_scale = Vec3::new(g.log_scale[0] - shrink, g.log_scale[1] - shrink, g.log_scale[2] - shrink);
                out.push(child);
                sources.push(None);
            }
        }
    }
    let mut kept = Vec::with_capacity(out.len());
    let mut kept_src = Vec::with_capacity(out.len());
    for (g, s) in out.into_iter().zip(sources) {
        if g.opacity() < cfg.prune_opacity {
            report.pruned += 1;
        } else {
            kept.push(g);
            kept_src.push(s);
        }
    }
    state.gaussians = kept;
    state.adam.remap(&kept_src);
    state.grad_accum = vec![0.0; state.gaussians.len()];
    state.grad_count = vec![0; state.gaussians.len()];
    report
}

fn check_finite(b: &LossBreakdown, g: &SceneGradients, iteration: usize) -> Result<()> {
    if !b.total.is_finite() {
        return Err(Error::Diverged { iteration, reason: format!("loss is {}", b.total) });
    }
    if g.per_gaussian.iter().any(|p| p.as_array().iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged { iteration, reason: "non-finite gradient".into() });
    }
    Ok(())
}

fn ndc_scale(cam: &CameraView) -> f64 {
    0.5 * cam.width.max(cam.height) as f64
}

/// One optimizer step on one view; returns the loss components.
fn step(state: &mut TrainState, cam: &CameraView, targets: &ViewTargets, cfg: &TrainConfig, progress: f64) -> Result<LossBreakdown> {
    let (b, g) = total_loss(&state.gaussians, cam, targets, &cfg.weights, &cfg.render)?;
    check_finite(&b, &g, state.iteration)?;
    let lr = cfg.lr.at(progress, state.extent);
    state.adam.update(&mut state.gaussians, &g.per_gaussian, &lr);
    state.accumulate(&g, ndc_scale(cam));
    Ok(b)
}

fn maybe_densify(state: &mut TrainState, cfg: &TrainConfig, it: usize, total: usize, rng: &mut ChaCha8Rng) {
    let d = &cfg.density;
    let stop = (d.stop_fraction * total as f64) as usize;
    if d.interval > 0 && it >= d.start && it < stop && (it + 1) % d.interval == 0 {
        densify_and_prune(state, d, rng);
    }
}

/// Estimated depth of every view aligned to its sparse samples.
pub fn align_to_sparse(dataset: &SceneDataset) -> Result<Vec<DepthMap>> {
    dataset
        .views
        .iter()
        .map(|v| {
            let fit = align_depth(&v.depth, &v.sparse)?;
            Ok(apply_affine(&v.depth, &fit))
        })
        .collect()
}

/// Background reconstruction: color and depth losses outside each view's mask.
pub fn train_initial(dataset: &SceneDataset, cfg: &TrainConfig, log: &mut dyn FnMut(&LogRecord)) -> Result<Vec<Gaussian3D>> {
    dataset.validate()?;
    cfg.validate()?;
    let seeds = seed_gaussians(dataset, cfg.seed_opacity);
    if cfg.initial_iterations == 0 {
        return Ok(seeds);
    }
    let aligned = align_to_sparse(dataset)?;
    let targets: Vec<ViewTargets> = dataset
        .views
        .iter()
        .zip(aligned)
        .map(|(v, d)| ViewTargets {
            stage: Stage::Initial,
            color: v.image.clone(),
            color_region: v.mask.complement(),
            depth: d,
            mask: v.mask.clone(),
            w_inp: 0.0,
            normals: None,
            normal_patch: None,
            perceptual_patch: None,
        })
        .collect();
    let cams: Vec<&CameraView> = dataset.views.iter().map(|v| &v.camera).collect();
    let mut state = TrainState::new(seeds, scene_extent(&cams));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.initial_iterations;
    for it in 0..total {
        state.iteration = it;
        let view = rng.random_range(0..dataset.views.len());
        let b = step(&mut state, cams[view], &targets[view], cfg, it as f64 / total as f64)?;
        log(&LogRecord {
            iteration: it,
            view_id: view,
            total: b.total,
            l_c: b.color,
            l_d: b.depth,
            l_in: 0.0,
            l_ilpips: 0.0,
            gaussian_count: state.gaussians.len(),
            p_prime_fraction: None,
        });
        maybe_densify(&mut state, cfg, it, total, &mut rng);
    }
    Ok(state.gaussians)
}

/// Cached supervision for one view of the inpainting stage.
#[derive(Clone, Debug)]
pub struct WarpTarget {
    pub i_warp: ImageBuffer,
    pub consistent: MaskImage,
    /// `|P′| / |P ∩ M|`.
    pub fraction: f64,
    pub patch: PatchRect,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub tau: f64,
}

/// Confidence records and blended targets for every view.
#[derive(Clone, Debug)]
pub struct RefreshResult {
    pub records: Vec<ConfidenceRecord>,
    pub targets: Vec<WarpTarget>,
    pub diagnostics: Vec<String>,
}

impl RefreshResult {
    /// Mean `P′` coverage of `P ∩ M` over the non-reference views.
    pub fn mean_fraction(&self, reference: usize) -> f64 {
        let v: Vec<f64> = self.targets.iter().enumerate().filter(|(i, _)| *i != reference).map(|(_, t)| t.fraction).collect();
        if v.is_empty() {
            1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

fn inpainted(dataset: &SceneDataset, i: usize) -> Result<&ImageBuffer> {
    dataset.views[i].inpainted.as_ref().ok_or_else(|| Error::Config(format!("view {i} has no inpainted image")))
}

fn view_patch(mask: &MaskImage, cfg: &TrainConfig) -> Result<PatchRect> {
    let (w, h) = mask.dims();
    let min = MultiScaleStructural::default().min_size();
    Ok(ensure_min_size(extract_patch(mask, cfg.confidence.margin_frac)?, min, w, h))
}

/// Re-aligns every view's estimated depth to the current rendered depth,
/// re-evaluates confidences against the reference and rebuilds the blended
/// pseudo ground truth.
pub fn refresh_confidences(dataset: &SceneDataset, gaussians: &[Gaussian3D], cfg: &TrainConfig, iteration: usize) -> Result<RefreshResult> {
    cfg.validate()?;
    let r = dataset.reference_view_id;
    let sparse_aligned = align_to_sparse(dataset)?;
    let mut rendered = Vec::with_capacity(dataset.views.len());
    let mut aligned = Vec::with_capacity(dataset.views.len());
    let mut diagnostics = Vec::new();
    for (i, v) in dataset.views.iter().enumerate() {
        let out = render(gaussians, &v.camera, &cfg.render);
        let d = surface_depth(&out, &cfg.render);
        let a = match align_to_dense(&v.depth, &d, Some(&v.mask), cfg.align_stride) {
            Ok(fit) => apply_affine(&v.depth, &fit),
            Err(_) => {
                diagnostics.push(format!("view {i}: rendered depth too sparse for alignment, using sparse samples"));
                sparse_aligned[i].clone()
            }
        };
        rendered.push(d);
        aligned.push(a);
    }
    let ref_img = inpainted(dataset, r)?;
    let ref_view = &dataset.views[r];
    let reference = InpaintedView { image: ref_img, depth: &aligned[r], camera: &ref_view.camera };
    let mut records = Vec::with_capacity(dataset.views.len());
    let mut targets = Vec::with_capacity(dataset.views.len());
    for (i, v) in dataset.views.iter().enumerate() {
        let img = inpainted(dataset, i)?;
        let patch = view_patch(&v.mask, cfg)?;
        let normals = normal_from_depth(&aligned[i], &v.camera);
        let in_pm = patch.to_mask(v.camera.width, v.camera.height).intersect(&v.mask);
        if i == r {
            records.push(ConfidenceRecord::reference(i, patch, &cfg.confidence, iteration));
            targets.push(WarpTarget {
                i_warp: img.clone(),
                fraction: 1.0,
                consistent: in_pm,
                patch,
                depth: aligned[i].clone(),
                normals,
                tau: 0.0,
            });
            continue;
        }
        let target = InpaintedView { image: img, depth: &aligned[i], camera: &v.camera };
        let rec = evaluate_confidence(i, &target, &v.mask, &reference, &cfg.confidence, iteration)?;
        if let Some(d) = &rec.diagnostic {
            diagnostics.push(d.clone());
        }
        records.push(rec);
        let warp = forward_warp(ref_img, &rendered[r], &ref_view.camera, &v.camera, &cfg.confidence.warp)?;
        let tau = cfg.tau.unwrap_or_else(|| default_tau(&rendered[i]));
        let tar_depth = warp.resample_at_samples(&rendered[i])?;
        let mut cs = consistency_set(&warp.warped_depth, &tar_depth, &patch, &v.mask, tau)?.pixels;
        let (w, h) = v.dims();
        let usable = warp.usable(cfg.confidence.include_interpolated);
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h || !usable[k] {
                    cs.bits[k] = false;
                }
            }
        }
        let source = ImageBuffer::from_fn(w, h, |x, y| if usable[y * w + x] { warp.warped.get(x, y) } else { img.get(x, y) });
        let i_warp = if cs.is_empty() { img.clone() } else { poisson_blend(img, &source, &cs)?.image.clamped() };
        let denom = in_pm.count();
        let fraction = if denom == 0 { 0.0 } else { cs.count() as f64 / denom as f64 };
        targets.push(WarpTarget { i_warp, consistent: cs, fraction, patch, depth: aligned[i].clone(), normals, tau });
    }
    Ok(RefreshResult { records, targets, diagnostics })
}

/// Gaussians along the reference view's aligned depth inside its mask.
pub fn seed_from_reference(dataset: &SceneDataset, depth: &DepthMap, stride: usize, opacity: f64) -> Result<Vec<Gaussian3D>> {
    let r = dataset.reference();
    let img = inpainted(dataset, dataset.reference_view_id)?;
    let (w, h) = r.dims();
    let mut out = Vec::new();
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            if !r.mask.get(x, y) {
                continue;
            }
            let Some(d) = depth.get(x, y) else { continue };
            let p = r.camera.camera_to_world(&r.camera.unproject(x as f64, y as f64, d));
            let sigma = 0.5 * stride as f64 * d / r.camera.fx;
            let c = img.get(x, y);
            out.push(Gaussian3D::isotropic(p, sigma, opacity, Vec3::new(c[0], c[1], c[2])));
        }
    }
    Ok(out)
}

/// Random rectangle of the given size centered on a uniformly drawn mask pixel,
/// shifted to lie inside the image.
pub fn random_patch(mask: &MaskImage, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Option<PatchRect> {
    let (w, h) = mask.dims();
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let k = rng.random_range(0..n);
    let c = mask.inside().nth(k)?;
    let (cx, cy) = (c % w, c / w);
    let (pw, ph) = (width.min(w), height.min(h));
    let x = cx.saturating_sub(pw / 2).min(w - pw);
    let y = cy.saturating_sub(ph / 2).min(h - ph);
    Some(PatchRect { x, y, width: pw, height: ph })
}

#[derive(Clone, Debug)]
pub struct InpaintOutcome {
    pub gaussians: Vec<Gaussian3D>,
    /// State after the final refresh.
    pub last_refresh: RefreshResult,
    pub refreshes: usize,
}

/// Inpainting stage starting from a background reconstruction.
pub fn train_inpaint(
    dataset: &SceneDataset,
    gaussians: Vec<Gaussian3D>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<InpaintOutcome> {
    dataset.validate()?;
    cfg.validate()?;
    if cfg.inpaint_iterations == 0 {
        let last_refresh = refresh_confidences(dataset, &gaussians, cfg, 0)?;
        return Ok(InpaintOutcome { gaussians, last_refresh, refreshes: 1 });
    }
    let r = dataset.reference_view_id;
    let mut cache = refresh_confidences(dataset, &gaussians, cfg, 0)?;
    let mut refreshes = 1;
    let cams: Vec<&CameraView> = dataset.views.iter().map(|v| &v.camera).collect();
    let mut state = TrainState::new(gaussians, scene_extent(&cams));
    let extra = seed_from_reference(dataset, &cache.targets[r].depth, cfg.inpaint_seed_stride, cfg.seed_opacity)?;
    state.extend(&extra);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1a2b_3c4d);
    let total = cfg.inpaint_iterations;
    let every = cfg.refresh_every();
    let metric_min = MultiScaleStructural::default().min_size();
    for it in 0..total {
        state.iteration = it;
        if it > 0 && it % every == 0 {
            cache = refresh_confidences(dataset, &state.gaussians, cfg, it)?;
            refreshes += 1;
        }
        let view = rng.random_range(0..dataset.views.len());
        let v = &dataset.views[view];
        let wt = &cache.targets[view];
        let w_inp = cfg.view_weight(&cache.records[view]);
        let normal_patch = random_patch(&v.mask, wt.patch.width, wt.patch.height, &mut rng);
        let perceptual_patch = if wt.patch.width >= metric_min && wt.patch.height >= metric_min {
            Some(wt.patch)
        } else {
            random_patch(&v.mask, cfg.perceptual_patch, cfg.perceptual_patch, &mut rng)
        };
        let targets = ViewTargets {
            stage: Stage::Inpaint,
            color: wt.i_warp.clone(),
            color_region: v.mask.complement().union(&wt.consistent),
            depth: wt.depth.clone(),
            mask: v.mask.clone(),
            w_inp,
            normals: Some(wt.normals.clone()),
            normal_patch,
            perceptual_patch,
        };
        let b = step(&mut state, cams[view], &targets, cfg, it as f64 / total as f64)?;
        log(&LogRecord {
            iteration: it,
            view_id: view,
            total: b.total,
            l_c: b.color,
            l_d: b.depth,
            l_in: b.normal,
            l_ilpips: b.perceptual,
            gaussian_count: state.gaussians.len(),
            p_prime_fraction: Some(wt.fraction),
        });
        maybe_densify(&mut state, cfg, it, total, &mut rng);
    }
    let last_refresh = refresh_confidences(dataset, &state.gaussians, cfg, total)?;
    Ok(InpaintOutcome { gaussians: state.gaussians, last_refresh, refreshes: refreshes + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(gs: Vec<Gaussian3D>) -> TrainState {
        TrainState::new(gs, 1.0)
    }

    fn g(sigma: f64, opacity: f64) -> Gaussian3D {
        Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), sigma, opacity, Vec3::new(0.5, 0.5, 0.5))
    }

    #[test]
    fn densify_leaves_quiet_scene_alone() {
        let mut s = state_with(vec![g(0.005, 0.5), g(0.2, 0.5)]);
        s.grad_accum = vec![1e-5, 1e-5];
        s.grad_count = vec![1, 1];
        let before = s.gaussians.clone();
        let r = densify_and_prune(&mut s, &DensityControl::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r, DensifyReport::default());
        assert_eq!(s.gaussians, before);
    }

    #[test]
    fn small_hot_gaussian_is_cloned_large_one_split() {
        let mut s = state_with(vec![g(0.005, 0.5), g(0.2, 0.5)]);
        s.grad_accum = vec![1.0, 0.0];
        s.grad_count = vec![1, 0];
        s.adam.m[0][0] = 3.0;
        let r = densify_and_prune(&mut s, &DensityControl::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r.cloned, 1);
        assert_eq!(s.gaussians.len(), 3);
        assert_eq!(s.adam.len(), 3);
        assert_eq!(s.adam.m[0][0], 3.0);
        assert_eq!(s.adam.m[1][0], 0.0);
        let mut s = state_with(vec![g(0.2, 0.5)]);
        s.grad_accum = vec![1.0];
        s.grad_count = vec![1];
        let r = densify_and_prune(&mut s, &DensityControl::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r.split, 1);
        assert_eq!(s.gaussians.len(), 2);
        assert!((s.gaussians[0].scale()[0] - 0.2 / 1.6).abs() < 1e-12);
    }

    #[test]
    fn transparent_gaussian_is_pruned() {
        let mut s = state_with(vec![g(0.05, 0.5), g(0.05, 0.001), g(0.05, 0.9)]);
        let r = densify_and_prune(&mut s, &DensityControl::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r.pruned, 1);
        assert_eq!(s.gaussians.len(), 2);
        assert_eq!(s.grad_accum.len(), 2);
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig { refresh_interval: Some(0), ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.weights.lambda_ssim = 1.5;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig { inpaint_iterations: 3000, ..Default::default() }.refresh_every(), 300);
    }

    #[test]
    fn weight_modes() {
        let rec = |conf| ConfidenceRecord {
            view_id: 1,
            conf,
            weight: 0.0,
            last_update_iteration: 0,
            coverage: 1.0,
            patch: PatchRect { x: 0, y: 0, width: 1, height: 1 },
            diagnostic: None,
        };
        let mut c = TrainConfig::default();
        assert_eq!(c.view_weight(&rec(0.5)), 0.5);
        c.weight_mode = WeightMode::Uniform;
        assert_eq!(c.view_weight(&rec(0.1)), 1.0);
        c.weight_mode = WeightMode::Threshold;
        assert_eq!(c.view_weight(&rec(0.49)), 0.0);
        assert_eq!(c.view_weight(&rec(0.51)), 1.0);
    }
}
