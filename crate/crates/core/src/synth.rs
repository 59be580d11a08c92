//! Synthetic multi-view scenes with exact ground truth: an analytic ray caster
//! over textured planes and axis-aligned boxes, an occluder that defines the
//! masks, and controllable stand-ins for per-view inpaintings and monocular
//! depth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::scene::{CameraView, DepthMap, ImageBuffer, MaskImage, SceneDataset, SparseDepthSamples, SparseSample, ViewRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    pub seed: u64,
    pub base: [f64; 3],
    pub accent: [f64; 3],
    /// Blend between pure value noise (0) and the stripe/checker layer (1).
    pub complexity: f64,
    /// World units per noise cell.
    pub cell: f64,
    /// Stripe frequency in cycles per world unit.
    pub stripes: f64,
    pub checker: bool,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec { seed: 0, base: [0.6, 0.5, 0.4], accent: [0.2, 0.3, 0.5], complexity: 0.3, cell: 0.5, stripes: 1.0, checker: false }
    }
}

fn hash(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = hash(seed ^ hash((ix as u64).wrapping_mul(0x1000_0000_01b3) ^ hash(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (math::floor(x), math::floor(y));
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

impl TextureSpec {
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let n = 0.65 * value_noise(u / self.cell, v / self.cell, self.seed) + 0.35 * value_noise(2.0 * u / self.cell, 2.0 * v / self.cell, self.seed ^ 0x55);
        let pattern = if self.checker {
            let s = math::sin(core::f64::consts::PI * self.stripes * u) * math::sin(core::f64::consts::PI * self.stripes * v);
            0.5 + 0.5 * s.clamp(-1.0, 1.0)
        } else {
            0.5 + 0.5 * math::sin(2.0 * core::f64::consts::PI * self.stripes * (0.8 * u + 0.6 * v))
        };
        let t = ((1.0 - self.complexity) * n + self.complexity * pattern).clamp(0.0, 1.0);
        core::array::from_fn(|k| self.base[k] + (self.accent[k] - self.base[k]) * t)
    }

    fn reseeded(&self, seed: u64) -> Self {
        let mut t = *self;
        t.seed = hash(self.seed ^ seed);
        // a swapped surface is clearly lighter or darker than the original
        let dark = crate::scene::luma(&self.base) > 0.45;
        let (lo, span) = if dark { (0.05, 0.3) } else { (0.65, 0.3) };
        let r = |k: u64| lo + span * lattice(k as i64, 7, t.seed);
        t.base = [r(1), r(2), r(3)];
        t.accent = [r(4), r(5), r(6)];
        t.stripes *= 1.7;
        t.checker = !t.checker;
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub point: Vec3,
    pub normal: Vec3,
    /// In-plane texture axis; projected onto the plane.
    pub u_axis: Vec3,
    pub texture: TextureSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: Vec3,
    pub max: Vec3,
    pub texture: TextureSpec,
}

impl BoxSpec {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }
}

/// Per-view deviation of the pseudo-inpainting from the true background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    /// Magnitude of a global RGB offset inside the mask.
    pub color_shift: f64,
    /// Amplitude of a smooth displacement field, in pixels.
    pub jitter_px: f64,
    /// Probability that the masked content is replaced by a different texture.
    pub swap_probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthCorruption {
    pub scale: f64,
    pub shift: f64,
    /// Amplitude of smooth additive noise.
    pub noise: f64,
    /// Noise correlation length in pixels.
    pub noise_cell_px: f64,
}

impl Default for DepthCorruption {
    fn default() -> Self {
        DepthCorruption { scale: 0.5, shift: 0.3, noise: 0.0, noise_cell_px: 16.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub view_count: usize,
    pub ring_radius: f64,
    /// Vertical offset of the camera ring (negative is up).
    pub elevation: f64,
    /// Point every camera looks at.
    pub target: Vec3,
    pub planes: Vec<PlaneSpec>,
    pub boxes: Vec<BoxSpec>,
    pub occluder: BoxSpec,
    /// One entry per view; missing entries mean no corruption.
    pub corruption: Vec<Corruption>,
    pub depth: DepthCorruption,
    pub sparse_per_view: usize,
    /// Supersampling factor per axis for color.
    pub supersample: usize,
    pub reference_view: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::desk(0)
    }
}

impl SynthSpec {
    /// Small forward-facing scene: a back wall, a floor, a box and a box occluder.
    pub fn desk(seed: u64) -> Self {
        let tex = |k: u64, base: [f64; 3], accent: [f64; 3], complexity: f64, checker: bool| TextureSpec {
            seed: hash(seed ^ k),
            base,
            accent,
            complexity,
            cell: 0.45,
            stripes: 1.2,
            checker,
        };
        SynthSpec {
            width: 64,
            height: 48,
            focal: 56.0,
            view_count: 5,
            ring_radius: 0.35,
            elevation: -0.3,
            target: Vec3::new(0.0, 0.3, 4.0),
            planes: vec![
                PlaneSpec {
                    point: Vec3::new(0.0, 0.0, 6.0),
                    normal: Vec3::new(0.0, 0.0, -1.0),
                    u_axis: Vec3::new(1.0, 0.0, 0.0),
                    texture: tex(1, [0.75, 0.7, 0.6], [0.35, 0.45, 0.6], 0.35, false),
                },
                PlaneSpec {
                    point: Vec3::new(0.0, 1.0, 0.0),
                    normal: Vec3::new(0.0, -1.0, 0.0),
                    u_axis: Vec3::new(1.0, 0.0, 0.0),
                    texture: tex(2, [0.45, 0.35, 0.25], [0.7, 0.55, 0.35], 0.4, true),
                },
            ],
            boxes: vec![BoxSpec {
                min: Vec3::new(-1.9, 0.2, 4.4),
                max: Vec3::new(-1.0, 1.0, 5.2),
                texture: tex(3, [0.3, 0.6, 0.35], [0.8, 0.8, 0.3], 0.3, false),
            }],
            occluder: BoxSpec {
                min: Vec3::new(-0.45, -0.1, 3.0),
                max: Vec3::new(0.45, 1.0, 3.5),
                texture: tex(4, [0.8, 0.15, 0.15], [0.9, 0.5, 0.1], 0.2, false),
            },
            corruption: Vec::new(),
            depth: DepthCorruption::default(),
            sparse_per_view: 500,
            supersample: 3,
            reference_view: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_count < 3 {
            return Err(Error::Synth(format!("need at least 3 views, got {}", self.view_count)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Synth("images must be at least 16x16".into()));
        }
        if !(self.focal > 0.0) || self.supersample == 0 {
            return Err(Error::Synth("focal length and supersampling must be positive".into()));
        }
        if self.reference_view >= self.view_count {
            return Err(Error::ReferenceOutOfRange { id: self.reference_view, count: self.view_count });
        }
        if self.corruption.len() > self.view_count {
            return Err(Error::Synth("more corruption entries than views".into()));
        }
        for c in self.cameras() {
            let e = c.center();
            if self.boxes.iter().chain(core::iter::once(&self.occluder)).any(|b| b.contains(&e)) {
                return Err(Error::Synth("camera inside scene geometry".into()));
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<CameraView> {
        (0..self.view_count)
            .map(|k| {
                let th = 2.0 * core::f64::consts::PI * k as f64 / self.view_count as f64;
                let eye = Vec3::new(self.ring_radius * math::cos(th), self.elevation + self.ring_radius * math::sin(th), 0.0);
                CameraView::look_at(eye, self.target, Vec3::new(0.0, -1.0, 0.0), self.focal, self.focal, self.width, self.height)
            })
            .collect()
    }

    pub fn corruption_of(&self, view: usize) -> Corruption {
        self.corruption.get(view).copied().unwrap_or_default()
    }
}

/// Nearest surface hit along a ray.
#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    color: [f64; 3],
    occluder: bool,
}

fn shade(c: [f64; 3], n: &Vec3) -> [f64; 3] {
    let l = Vec3::new(0.3, -0.8, -0.5).normalized().unwrap();
    let k = 0.7 + 0.3 * n.dot(&l).abs();
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

fn hit_plane(p: &PlaneSpec, o: &Vec3, d: &Vec3) -> Option<(f64, [f64; 3])> {
    let n = p.normal.normalized()?;
    let den = n.dot(d);
    if den.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&(p.point - *o)) / den;
    if t <= 1e-9 {
        return None;
    }
    let x = *o + d.scale(t);
    let ua = (p.u_axis - n.scale(n.dot(&p.u_axis))).normalized()?;
    let va = n.cross(&ua);
    let r = x - p.point;
    Some((t, shade(p.texture.sample(r.dot(&ua), r.dot(&va)), &n)))
}

fn hit_box(b: &BoxSpec, o: &Vec3, d: &Vec3) -> Option<(f64, [f64; 3])> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let (mut a, mut c) = ((b.min[k] - o[k]) / d[k], (b.max[k] - o[k]) / d[k]);
        if a > c {
            core::mem::swap(&mut a, &mut c);
        }
        if a > t0 {
            t0 = a;
            axis = k;
        }
        t1 = t1.min(c);
    }
    if t0 > t1 || t0 <= 1e-9 {
        return None;
    }
    let x = *o + d.scale(t0);
    let (ua, va) = match axis {
        0 => (x[2], x[1]),
        1 => (x[0], x[2]),
        _ => (x[0], x[1]),
    };
    let mut n = Vec3::ZERO;
    n.0[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    Some((t0, shade(b.texture.sample(ua, va), &n)))
}

fn cast(spec: &SynthSpec, o: &Vec3, d: &Vec3, with_occluder: bool, swap: Option<u64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |r: Option<(f64, [f64; 3])>, occ: bool| {
        if let Some((t, color)) = r {
            if best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, color, occluder: occ });
            }
        }
    };
    for p in &spec.planes {
        match swap {
            Some(s) => consider(hit_plane(&PlaneSpec { texture: p.texture.reseeded(s), ..*p }, o, d), false),
            None => consider(hit_plane(p, o, d), false),
        }
    }
    for b in &spec.boxes {
        match swap {
            Some(s) => consider(hit_box(&BoxSpec { texture: b.texture.reseeded(s), ..*b }, o, d), false),
            None => consider(hit_box(b, o, d), false),
        }
    }
    if with_occluder {
        consider(hit_box(&spec.occluder, o, d), true);
    }
    best
}

/// Analytic render of one view: supersampled color, center-ray view-space
/// depth, and the set of pixels where any subsample sees the occluder.
pub struct AnalyticRender {
    pub color: ImageBuffer,
    pub depth: DepthMap,
    pub occluded: MaskImage,
}

pub fn render_analytic(spec: &SynthSpec, cam: &CameraView, with_occluder: bool, swap: Option<u64>) -> AnalyticRender {
    let (w, h) = cam.dims();
    let o = cam.center();
    let rt = cam.rotation.transpose();
    let dir = |u: f64, v: f64| rt.mul_vec(&Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0));
    let s = spec.supersample.max(1);
    let mut color = ImageBuffer::new(w, h, [0.0; 3]);
    let mut depth = DepthMap::invalid(w, h);
    let mut occluded = MaskImage::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut occ = false;
            for sy in 0..s {
                for sx in 0..s {
                    let u = x as f64 + (sx as f64 + 0.5) / s as f64 - 0.5;
                    let v = y as f64 + (sy as f64 + 0.5) / s as f64 - 0.5;
                    if let Some(hit) = cast(spec, &o, &dir(u, v), with_occluder, swap) {
                        for k in 0..3 {
                            acc[k] += hit.color[k];
                        }
                        occ |= hit.occluder;
                    }
                }
            }
            let n = (s * s) as f64;
            color.set(x, y, acc.map(|v| v / n));
            occluded.set(x, y, occ);
            // the direction has unit camera-space z, so t is the view depth
            if let Some(hit) = cast(spec, &o, &dir(x as f64, y as f64), with_occluder, swap) {
                depth.set(x, y, Some(hit.t));
            }
        }
    }
    AnalyticRender { color, depth, occluded }
}

/// A generated scene with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthScene {
    /// Views carry the captured image, exact mask, exact background depth
    /// (before any corruption) and sparse samples.
    pub dataset: SceneDataset,
    pub gt_depth: Vec<DepthMap>,
}

pub fn generate_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut views = Vec::with_capacity(spec.view_count);
    let mut gt = Vec::with_capacity(spec.view_count);
    let mut gt_depth = Vec::with_capacity(spec.view_count);
    for (k, cam) in spec.cameras().into_iter().enumerate() {
        let with = render_analytic(spec, &cam, true, None);
        let bg = render_analytic(spec, &cam, false, None);
        if with.occluded.is_empty() {
            return Err(Error::Synth(format!("occluder not visible in view {k}")));
        }
        if bg.depth.valid_count() != cam.width * cam.height {
            return Err(Error::Synth(format!("view {k} sees empty space")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(31).wrapping_add(k as u64));
        let free: Vec<usize> = with.occluded.outside().collect();
        let mut samples = Vec::with_capacity(spec.sparse_per_view);
        for _ in 0..spec.sparse_per_view.min(free.len()) {
            let i = free[rng.random_range(0..free.len())];
            let (u, v) = (i % cam.width, i / cam.width);
            samples.push(SparseSample { u, v, depth: bg.depth.values[i] });
        }
        views.push(ViewRecord {
            camera: cam,
            image: with.color,
            mask: with.occluded,
            depth: bg.depth.clone(),
            sparse: SparseDepthSamples { samples },
            inpainted: None,
        });
        gt.push(bg.color);
        gt_depth.push(bg.depth);
    }
    Ok(SynthScene { dataset: SceneDataset { views, reference_view_id: spec.reference_view, ground_truth: Some(gt) }, gt_depth })
}

/// Smooth 2D displacement field with amplitude `amp` pixels.
fn displacement(x: usize, y: usize, amp: f64, seed: u64) -> (f64, f64) {
    let (u, v) = (x as f64 / 8.0, y as f64 / 8.0);
    (amp * (2.0 * value_noise(u, v, seed) - 1.0), amp * (2.0 * value_noise(u, v, seed ^ 0xabc) - 1.0))
}

/// Per-view stand-ins for generative inpaintings of the background.
pub fn make_pseudo_inpaintings(dataset: &SceneDataset, gt_background: &[ImageBuffer], spec: &SynthSpec) -> Result<Vec<ImageBuffer>> {
    if gt_background.len() != dataset.views.len() {
        return Err(Error::Synth("one background render per view required".into()));
    }
    let mut out = Vec::with_capacity(dataset.views.len());
    for (k, (view, bg)) in dataset.views.iter().zip(gt_background).enumerate() {
        let c = spec.corruption_of(k);
        let mut rng = ChaCha8Rng::seed_from_u64(hash(spec.seed ^ 0x5eed ^ k as u64));
        let swap = rng.random::<f64>() < c.swap_probability;
        let content = if swap { render_analytic(spec, &view.camera, false, Some(0x5a5a + k as u64)).color } else { bg.clone() };
        // a tinted brightening: every channel moves up, so luminance always changes
        let dir = Vec3::new(0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>()).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
        let field_seed = hash(spec.seed ^ 0xf1e1d ^ k as u64);
        let (w, h) = view.dims();
        let img = ImageBuffer::from_fn(w, h, |x, y| {
            if !view.mask.get(x, y) {
                return bg.get(x, y);
            }
            let mut p = if c.jitter_px > 0.0 {
                let (dx, dy) = displacement(x, y, c.jitter_px, field_seed);
                content.sample_bilinear(x as f64 + dx, y as f64 + dy)
            } else {
                content.get(x, y)
            };
            for ch in 0..3 {
                p[ch] = (p[ch] + c.color_shift * dir[ch]).clamp(0.0, 1.0);
            }
            p
        });
        out.push(img);
    }
    Ok(out)
}

/// `a·D + b` plus smooth noise of amplitude `noise`; invalid where `D` is.
pub fn make_pseudo_mono_depth(gt: &DepthMap, params: &DepthCorruption, seed: u64) -> DepthMap {
    let cell = params.noise_cell_px.max(1.0);
    let mut out = DepthMap::invalid(gt.width, gt.height);
    for y in 0..gt.height {
        for x in 0..gt.width {
            if let Some(d) = gt.get(x, y) {
                let n = if params.noise > 0.0 { params.noise * (2.0 * value_noise(x as f64 / cell, y as f64 / cell, seed) - 1.0) } else { 0.0 };
                let v = params.scale * d + params.shift + n;
                out.set(x, y, (v > 0.0).then_some(v));
            }
        }
    }
    out
}

/// Generated scene with pseudo-inpaintings attached and the exact depth
/// replaced by pseudo-monocular estimates.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthScene> {
    let mut scene = generate_scene(spec)?;
    let gt = scene.dataset.ground_truth.clone().unwrap_or_default();
    let inp = make_pseudo_inpaintings(&scene.dataset, &gt, spec)?;
    for (k, (v, img)) in scene.dataset.views.iter_mut().zip(inp).enumerate() {
        v.inpainted = Some(img);
        v.depth = make_pseudo_mono_depth(&scene.gt_depth[k], &spec.depth, hash(spec.seed ^ 0xde97 ^ k as u64));
    }
    Ok(scene)
}
