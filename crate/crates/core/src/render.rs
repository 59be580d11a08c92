//! Tile-based alpha-compositing rasterizer for 3D Gaussians with a matching
//! reverse-mode pass for every Gaussian parameter.
//!
//! Color and depth share the compositing weights `w_i = α'_i Π_{j<i}(1 - α'_j)`,
//! where `α'_i` is the stored opacity times the 2D falloff at the pixel. Splats
//! are ordered by view-space z of their center.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::depth::{normal_from_depth, NormalMap};
use crate::math::{self, quat_to_mat_backward, Mat3, Vec3};
use crate::scene::{CameraView, DepthMap, Gaussian3D, ImageBuffer};

pub const TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub near_plane: f64,
    /// Added to the diagonal of every 2D covariance (px²).
    pub cov_blur: f64,
    /// Mahalanobis radius beyond which a splat does not touch a pixel.
    pub cutoff_radius: f64,
    /// Falloff-modulated opacities below this are skipped.
    pub min_alpha: f64,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Rendered depth is valid where accumulated alpha reaches this floor.
    pub depth_alpha_floor: f64,
    /// Divide composited depth by accumulated alpha.
    pub normalize_depth: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: [0.0; 3],
            near_plane: 0.01,
            cov_blur: 0.3,
            cutoff_radius: 3.0,
            min_alpha: 1.0 / 255.0,
            min_transmittance: 1e-4,
            depth_alpha_floor: 0.5,
            normalize_depth: false,
        }
    }
}

impl RenderSettings {
    /// Settings with every truncation disabled, so the rendered image is a smooth
    /// function of the parameters. Used by finite-difference checks.
    pub fn untruncated() -> Self {
        RenderSettings { cutoff_radius: f64::INFINITY, min_alpha: 0.0, min_transmittance: 0.0, ..Default::default() }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected2D {
    pub mean2d: [f64; 2],
    /// Regularized 2D covariance.
    pub cov2d: [[f64; 2]; 2],
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub view_depth: f64,
    pub source_index: usize,
    pub opacity: f64,
    pub color: Vec3,
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    cam_point: Vec3,
    cov_cam: Mat3,
}

/// Projects `g` into `cam`. Returns `None` when the Gaussian is culled.
pub fn project_gaussian(g: &Gaussian3D, index: usize, cam: &CameraView, settings: &RenderSettings) -> Option<Projected2D> {
    let t = cam.world_to_camera(&g.position);
    if !(t.z() > settings.near_plane) {
        return None;
    }
    let sigma = g.covariance();
    let w = &cam.rotation;
    let cov_cam = w.mul_mat(&sigma).mul_mat(&w.transpose());
    let j = jacobian(cam, &t);
    let c = project_cov(&j, &cov_cam);
    let a = c[0][0] + settings.cov_blur;
    let b = c[0][1];
    let cc = c[1][1] + settings.cov_blur;
    let det = a * cc - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cc / det, -b / det, a / det];
    let (u, v) = cam.project(&t);
    let mid = 0.5 * (a + cc);
    let lambda_max = mid + math::sqrt((mid * mid - det).max(0.0));
    let radius = settings.cutoff_radius * math::sqrt(lambda_max);
    let (wf, hf) = (cam.width as f64, cam.height as f64);
    let bbox = if radius.is_finite() {
        let (x0, x1) = (u - radius, u + radius);
        let (y0, y1) = (v - radius, v + radius);
        if x1 < -0.5 || y1 < -0.5 || x0 > wf - 0.5 || y0 > hf - 0.5 {
            return None;
        }
        let clampi = |x: f64, hi: usize| math::round(x).clamp(0.0, (hi - 1) as f64) as usize;
        (clampi(x0, cam.width), clampi(y0, cam.height), clampi(x1, cam.width), clampi(y1, cam.height))
    } else {
        (0, 0, cam.width - 1, cam.height - 1)
    };
    Some(Projected2D {
        mean2d: [u, v],
        cov2d: [[a, b], [b, cc]],
        conic,
        view_depth: t.z(),
        source_index: index,
        opacity: g.opacity(),
        color: g.color,
        bbox,
        cam_point: t,
        cov_cam,
    })
}

/// Rows of the 2×3 perspective Jacobian.
#[inline]
fn jacobian(cam: &CameraView, t: &Vec3) -> [[f64; 3]; 2] {
    let (tx, ty, tz) = (t.x(), t.y(), t.z());
    [[cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)], [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)]]
}

#[inline]
fn project_cov(j: &[[f64; 3]; 2], s: &Mat3) -> [[f64; 2]; 2] {
    let mut js = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = (0..3).map(|k| j[r][k] * s.0[k][c]).sum();
        }
    }
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = (0..3).map(|k| js[r][k] * j[c][k]).sum();
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    /// Composited depth with validity where accumulated alpha reaches the floor.
    pub depth: DepthMap,
    /// Composited depth at every pixel, including low-alpha pixels.
    pub depth_raw: Vec<f64>,
    pub alpha: Vec<f64>,
    pub normal: NormalMap,
}

/// Projected splats, depth-sorted, and per-tile lists into that order.
struct Prepared {
    splats: Vec<Projected2D>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
}

fn prepare(gaussians: &[Gaussian3D], cam: &CameraView, settings: &RenderSettings) -> Prepared {
    let mut splats: Vec<Projected2D> =
        gaussians.iter().enumerate().filter_map(|(i, g)| project_gaussian(g, i, cam, settings)).collect();
    splats.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth).then(a.source_index.cmp(&b.source_index)));
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let (x0, y0, x1, y1) = s.bbox;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Prepared { splats, tiles_x, tile_lists }
}

/// One composited splat at a pixel.
#[derive(Clone, Copy)]
struct Contribution {
    slot: u32,
    alpha: f64,
    falloff: f64,
    transmittance: f64,
    dx: f64,
    dy: f64,
}

/// Composites one pixel. Returns `(color, raw depth, final transmittance)`.
fn composite_pixel(
    prep: &Prepared,
    list: &[u32],
    slots: &[u32],
    x: usize,
    y: usize,
    settings: &RenderSettings,
    mut record: Option<&mut Vec<Contribution>>,
) -> ([f64; 3], f64, f64) {
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let cutoff2 = settings.cutoff_radius * settings.cutoff_radius;
    let (px, py) = (x as f64, y as f64);
    for &slot in slots {
        let s = &prep.splats[list[slot as usize] as usize];
        if x < s.bbox.0 || x > s.bbox.2 {
            continue;
        }
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let [a, b, c] = s.conic;
        let m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if m2 > cutoff2 {
            continue;
        }
        let falloff = math::exp(-0.5 * m2);
        let alpha = s.opacity * falloff;
        if alpha < settings.min_alpha {
            continue;
        }
        let wgt = alpha * t;
        for ch in 0..3 {
            color[ch] += s.color[ch] * wgt;
        }
        depth += s.view_depth * wgt;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution { slot, alpha, falloff, transmittance: t, dx, dy });
        }
        t *= 1.0 - alpha;
        if t < settings.min_transmittance {
            break;
        }
    }
    for ch in 0..3 {
        color[ch] += t * settings.background[ch];
    }
    (color, depth, t)
}

/// Slots of `list` whose bounding box covers row `y`, in compositing order.
fn row_slots(prep: &Prepared, list: &[u32], y: usize, out: &mut Vec<u32>) {
    out.clear();
    for (slot, &k) in list.iter().enumerate() {
        let b = prep.splats[k as usize].bbox;
        if y >= b.1 && y <= b.3 {
            out.push(slot as u32);
        }
    }
}

struct TileImage {
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
    trans: Vec<f64>,
}

fn tile_bounds(cam: &CameraView, tiles_x: usize, tile: usize) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, y0, (x0 + TILE_SIZE).min(cam.width), (y0 + TILE_SIZE).min(cam.height))
}

fn render_tile(prep: &Prepared, cam: &CameraView, settings: &RenderSettings, tile: usize) -> TileImage {
    let (x0, y0, x1, y1) = tile_bounds(cam, prep.tiles_x, tile);
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileImage { color: Vec::with_capacity(n), depth: Vec::with_capacity(n), trans: Vec::with_capacity(n) };
    let list = &prep.tile_lists[tile];
    let mut slots = Vec::with_capacity(list.len());
    for y in y0..y1 {
        row_slots(prep, list, y, &mut slots);
        for x in x0..x1 {
            let (c, d, t) = composite_pixel(prep, list, &slots, x, y, settings, None);
            out.color.push(c);
            out.depth.push(d);
            out.trans.push(t);
        }
    }
    out
}

#[cfg(feature = "parallel")]
fn map_tiles<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_tiles<T>(count: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..count).map(f).collect()
}

/// Renders color, depth, accumulated alpha and normals.
pub fn render(gaussians: &[Gaussian3D], cam: &CameraView, settings: &RenderSettings) -> RenderOutput {
    let prep = prepare(gaussians, cam, settings);
    let (w, h) = cam.dims();
    let tiles = map_tiles(prep.tile_lists.len(), |t| render_tile(&prep, cam, settings, t));
    let mut color = ImageBuffer::new(w, h, [0.0; 3]);
    let mut depth_raw = vec![0.0; w * h];
    let mut alpha = vec![0.0; w * h];
    for (tile, img) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_bounds(cam, prep.tiles_x, tile);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                color.pixels[i] = img.color[k];
                alpha[i] = 1.0 - img.trans[k];
                depth_raw[i] = if settings.normalize_depth {
                    if alpha[i] > 0.0 {
                        img.depth[k] / alpha[i]
                    } else {
                        0.0
                    }
                } else {
                    img.depth[k]
                };
                k += 1;
            }
        }
    }
    let mut depth = DepthMap::invalid(w, h);
    for i in 0..w * h {
        if alpha[i] >= settings.depth_alpha_floor && depth_raw[i] > 0.0 && depth_raw[i].is_finite() {
            depth.values[i] = depth_raw[i];
            depth.valid[i] = true;
        }
    }
    let normal = normal_from_depth(&depth, cam);
    RenderOutput { color, depth, depth_raw, alpha, normal }
}

/// Gradient of a scalar loss with respect to every Gaussian parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianGrad {
    pub position: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl GaussianGrad {
    pub fn add_scaled(&mut self, o: &GaussianGrad, s: f64) {
        self.position += o.position.scale(s);
        for k in 0..4 {
            self.rotation[k] += o.rotation[k] * s;
        }
        self.log_scale += o.log_scale.scale(s);
        self.opacity_logit += o.opacity_logit * s;
        self.color += o.color.scale(s);
    }

    pub fn as_array(&self) -> [f64; 14] {
        let mut a = [0.0; 14];
        a[0..3].copy_from_slice(&self.position.0);
        a[3..7].copy_from_slice(&self.rotation);
        a[7..10].copy_from_slice(&self.log_scale.0);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color.0);
        a
    }
}

/// Gradients for a whole scene, plus the screen-space mean gradient norm used by
/// density control.
#[derive(Clone, Debug, Default)]
pub struct SceneGradients {
    pub per_gaussian: Vec<GaussianGrad>,
    pub mean2d_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Upstream gradients per pixel: `dL/dC` (RGB) and `dL/dD` on the composited depth.
#[derive(Clone, Debug)]
pub struct PixelGrads {
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl PixelGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        PixelGrads { color: vec![[0.0; 3]; width * height], depth: vec![0.0; width * height] }
    }

    pub fn add_scaled(&mut self, o: &PixelGrads, s: f64) {
        for (a, b) in self.color.iter_mut().zip(&o.color) {
            for k in 0..3 {
                a[k] += s * b[k];
            }
        }
        for (a, b) in self.depth.iter_mut().zip(&o.depth) {
            *a += s * b;
        }
    }
}

/// Per-splat accumulators in screen space:
/// `[du, dv, dconic_a, dconic_b, dconic_c, dopacity, dr, dg, db, ddepth]`.
type ScreenGrad = [f64; 10];

fn backward_tile(
    prep: &Prepared,
    cam: &CameraView,
    settings: &RenderSettings,
    tile: usize,
    grads: &PixelGrads,
) -> Vec<ScreenGrad> {
    let (x0, y0, x1, y1) = tile_bounds(cam, prep.tiles_x, tile);
    let list = &prep.tile_lists[tile];
    let mut acc = vec![[0.0; 10]; list.len()];
    let mut contribs = Vec::new();
    let bg = settings.background;
    let mut slots = Vec::with_capacity(list.len());
    for y in y0..y1 {
        row_slots(prep, list, y, &mut slots);
        for x in x0..x1 {
            let i = y * cam.width + x;
            let gc = grads.color[i];
            let mut gd = grads.depth[i];
            if gc == [0.0; 3] && gd == 0.0 {
                continue;
            }
            contribs.clear();
            let (_, raw_depth, t_final) = composite_pixel(prep, list, &slots, x, y, settings, Some(&mut contribs));
            // dL/dT_final from the background term and optional depth normalization
            let mut g_tfinal = gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2];
            if settings.normalize_depth {
                let a = 1.0 - t_final;
                if a > 0.0 {
                    let g_raw = gd / a;
                    let g_a = -gd * raw_depth / (a * a);
                    g_tfinal -= g_a;
                    gd = g_raw;
                } else {
                    gd = 0.0;
                }
            }
            let mut acc_c = [0.0; 3];
            let mut acc_d = 0.0;
            let mut suffix = 1.0;
            for c in contribs.iter().rev() {
                let slot = c.slot as usize;
                let s = &prep.splats[list[slot] as usize];
                let wgt = c.alpha * c.transmittance;
                let mut g_alpha = 0.0;
                for ch in 0..3 {
                    g_alpha += gc[ch] * c.transmittance * (s.color[ch] - acc_c[ch]);
                }
                g_alpha += gd * c.transmittance * (s.view_depth - acc_d);
                g_alpha -= g_tfinal * c.transmittance * suffix;

                let a = &mut acc[slot];
                for ch in 0..3 {
                    a[6 + ch] += gc[ch] * wgt;
                }
                a[9] += gd * wgt;
                a[5] += g_alpha * c.falloff;
                let g_power = g_alpha * c.alpha;
                let [ca, cb, cc] = s.conic;
                a[0] += g_power * (ca * c.dx + cb * c.dy);
                a[1] += g_power * (cb * c.dx + cc * c.dy);
                a[2] += g_power * (-0.5 * c.dx * c.dx);
                a[3] += g_power * (-c.dx * c.dy);
                a[4] += g_power * (-0.5 * c.dy * c.dy);

                for ch in 0..3 {
                    acc_c[ch] = s.color[ch] * c.alpha + (1.0 - c.alpha) * acc_c[ch];
                }
                acc_d = s.view_depth * c.alpha + (1.0 - c.alpha) * acc_d;
                suffix *= 1.0 - c.alpha;
            }
        }
    }
    acc
}

/// Chains screen-space gradients of one splat back to the Gaussian parameters.
fn splat_backward(g: &Gaussian3D, s: &Projected2D, cam: &CameraView, sg: &ScreenGrad) -> GaussianGrad {
    let t = s.cam_point;
    let (tx, ty, tz) = (t.x(), t.y(), t.z());
    let (fx, fy) = (cam.fx, cam.fy);

    // conic -> covariance: dL/dΣ2 = -Q G Q with G the full-matrix gradient of Q
    let [qa, qb, qc] = s.conic;
    let gq = [[sg[2], 0.5 * sg[3]], [0.5 * sg[3], sg[4]]];
    let q = [[qa, qb], [qb, qc]];
    let mut tmp = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            tmp[r][c] = (0..2).map(|k| q[r][k] * gq[k][c]).sum();
        }
    }
    let mut g_cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            g_cov[r][c] = -(0..2).map(|k| tmp[r][k] * q[k][c]).sum::<f64>();
        }
    }

    let j = jacobian(cam, &t);
    // dL/dΣc = Jᵀ G J
    let mut g_sc = Mat3::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            let mut v = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    v += j[r][a] * g_cov[r][c] * j[c][b];
                }
            }
            g_sc.0[a][b] = v;
        }
    }
    // dL/dJ = G J Σcᵀ + Gᵀ J Σc = 2 G J Σc (both symmetric)
    let sc = &s.cov_cam;
    let mut js = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = (0..3).map(|k| j[r][k] * sc.0[k][c]).sum();
        }
    }
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            g_j[r][c] = 2.0 * (0..2).map(|k| g_cov[r][k] * js[k][c]).sum::<f64>();
        }
    }

    let mut g_t = Vec3::ZERO;
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    g_t[0] += g_j[0][2] * (-fx / tz2);
    g_t[1] += g_j[1][2] * (-fy / tz2);
    g_t[2] += g_j[0][0] * (-fx / tz2) + g_j[0][2] * (2.0 * fx * tx / tz3) + g_j[1][1] * (-fy / tz2) + g_j[1][2] * (2.0 * fy * ty / tz3);
    // mean2d
    g_t[0] += sg[0] * fx / tz;
    g_t[1] += sg[1] * fy / tz;
    g_t[2] += -sg[0] * fx * tx / tz2 - sg[1] * fy * ty / tz2;
    // view depth
    g_t[2] += sg[9];

    let w = &cam.rotation;
    let position = w.transpose().mul_vec(&g_t);

    // Σc = W Σ Wᵀ  ->  dL/dΣ = Wᵀ G W
    let g_sigma = w.transpose().mul_mat(&g_sc).mul_mat(w);
    // Σ = M Mᵀ, M = R S  ->  dL/dM = (G + Gᵀ) M
    let r = g.rotation_matrix();
    let sc3 = g.scale();
    let mut m = r;
    for row in m.0.iter_mut() {
        for (jj, v) in row.iter_mut().enumerate() {
            *v *= sc3[jj];
        }
    }
    let g_sym = g_sigma.add(&g_sigma.transpose());
    let g_m = g_sym.mul_mat(&m);
    let mut g_r = Mat3::ZERO;
    let mut g_s = Vec3::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            g_r.0[a][b] = g_m.0[a][b] * sc3[b];
            g_s[b] += g_m.0[a][b] * r.0[a][b];
        }
    }
    let log_scale = Vec3::new(g_s[0] * sc3[0], g_s[1] * sc3[1], g_s[2] * sc3[2]);
    let rotation = quat_to_mat_backward(&g.rotation, &g_r);

    let op = s.opacity;
    GaussianGrad {
        position,
        rotation,
        log_scale,
        opacity_logit: sg[5] * op * (1.0 - op),
        color: Vec3::new(sg[6], sg[7], sg[8]),
    }
}

/// Reverse-mode pass: per-Gaussian gradients of a loss whose per-pixel
/// derivatives with respect to the rendered color and depth are `grads`.
/// Gaussians that touch no pixel get exact zeros.
pub fn render_with_gradients(gaussians: &[Gaussian3D], cam: &CameraView, settings: &RenderSettings, grads: &PixelGrads) -> SceneGradients {
    let prep = prepare(gaussians, cam, settings);
    let tile_accs = map_tiles(prep.tile_lists.len(), |t| backward_tile(&prep, cam, settings, t, grads));
    let mut screen = vec![[0.0; 10]; prep.splats.len()];
    // fixed tile order keeps the reduction deterministic
    for (tile, acc) in tile_accs.iter().enumerate() {
        for (slot, &k) in prep.tile_lists[tile].iter().enumerate() {
            let dst = &mut screen[k as usize];
            for c in 0..10 {
                dst[c] += acc[slot][c];
            }
        }
    }
    let n = gaussians.len();
    let mut out = SceneGradients {
        per_gaussian: vec![GaussianGrad::default(); n],
        mean2d_norm: vec![0.0; n],
        visible: vec![false; n],
    };
    for (s, sg) in prep.splats.iter().zip(&screen) {
        let idx = s.source_index;
        if sg.iter().all(|v| *v == 0.0) {
            continue;
        }
        out.per_gaussian[idx] = splat_backward(&gaussians[idx], s, cam, sg);
        out.mean2d_norm[idx] = math::sqrt(sg[0] * sg[0] + sg[1] * sg[1]);
        out.visible[idx] = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize, f: f64) -> CameraView {
        CameraView {
            fx: f,
            fy: f,
            cx: (w as f64) / 2.0,
            cy: (h as f64) / 2.0,
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            width: w,
            height: h,
        }
    }

    #[test]
    fn on_axis_projection() {
        let c = cam(100, 100, 100.0);
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.01, 0.5, Vec3::ZERO);
        let p = project_gaussian(&g, 0, &c, &RenderSettings::default()).unwrap();
        assert_eq!(p.mean2d, [50.0, 50.0]);
        assert_eq!(p.view_depth, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let c = cam(100, 100, 100.0);
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, -1.0), 0.01, 0.5, Vec3::ZERO);
        assert!(project_gaussian(&g, 0, &c, &RenderSettings::default()).is_none());
        let off = Gaussian3D::isotropic(Vec3::new(50.0, 0.0, 1.0), 0.01, 0.5, Vec3::ZERO);
        assert!(project_gaussian(&off, 0, &c, &RenderSettings::default()).is_none());
    }

    #[test]
    fn fronto_parallel_covariance_closed_form() {
        let c = cam(100, 100, 120.0);
        let (s, z) = (0.05, 2.0);
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, z), s, 0.5, Vec3::ZERO);
        let settings = RenderSettings { cov_blur: 0.0, ..Default::default() };
        let p = project_gaussian(&g, 0, &c, &settings).unwrap();
        let expect = (120.0 * s / z) * (120.0 * s / z);
        assert!((p.cov2d[0][0] - expect).abs() < 1e-12);
        assert!((p.cov2d[1][1] - expect).abs() < 1e-12);
        assert!(p.cov2d[0][1].abs() < 1e-15);
    }

    #[test]
    fn empty_scene_renders_background() {
        let c = cam(20, 10, 20.0);
        let settings = RenderSettings { background: [0.1, 0.2, 0.3], ..Default::default() };
        let out = render(&[], &c, &settings);
        assert!(out.color.pixels.iter().all(|p| *p == [0.1, 0.2, 0.3]));
        assert!(out.alpha.iter().all(|a| *a == 0.0));
        assert_eq!(out.depth.valid_count(), 0);
    }

    #[test]
    fn single_opaque_splat() {
        let c = cam(16, 16, 16.0);
        let mut g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.5, 0.5, Vec3::new(1.0, 0.0, 0.0));
        g.opacity_logit = 40.0;
        let out = render(&[g], &c, &RenderSettings::default());
        let p = out.color.get(8, 8);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
    }

    #[test]
    fn two_splat_compositing_arithmetic() {
        // huge, flat splats so the falloff at the center pixel is ~1
        let c = cam(16, 16, 16.0);
        let mk = |z: f64, col: Vec3| Gaussian3D::isotropic(Vec3::new(0.0, 0.0, z), 1e4, 0.5, col);
        let scene = [mk(2.0, Vec3::new(0.0, 1.0, 0.0)), mk(1.0, Vec3::new(1.0, 0.0, 0.0))];
        let settings = RenderSettings { cov_blur: 0.0, ..Default::default() };
        let out = render(&scene, &c, &settings);
        let p = out.color.get(8, 8);
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.25).abs() < 1e-9 && p[2].abs() < 1e-12);
        assert!((out.depth_raw[8 * 16 + 8] - 1.0).abs() < 1e-9);
        assert!((out.alpha[8 * 16 + 8] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = cam(16, 16, 16.0);
        let g = Gaussian3D::isotropic(Vec3::new(0.1, 0.0, 1.0), 0.2, 0.5, Vec3::new(1.0, 0.5, 0.0));
        let out = render_with_gradients(&[g], &c, &RenderSettings::default(), &PixelGrads::zeros(16, 16));
        assert_eq!(out.per_gaussian[0], GaussianGrad::default());
    }
}
