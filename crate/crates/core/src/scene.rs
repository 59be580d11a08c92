//! Scene-level domain types: splats, cameras, images, masks and depth maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::math::{self, quat_to_mat, Mat3, Vec3};

/// Scalars per Gaussian.
pub const PARAM_COUNT: usize = 14;

/// One anisotropic 3D Gaussian with view-independent color.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub position: Vec3,
    /// `(w, x, y, z)`, kept at unit norm by the optimizer.
    pub rotation: [f64; 4],
    /// Natural log of the per-axis standard deviation.
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl Gaussian3D {
    pub fn isotropic(position: Vec3, sigma: f64, opacity: f64, color: Vec3) -> Self {
        let ls = math::ln(sigma);
        Gaussian3D {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::new(ls, ls, ls),
            opacity_logit: math::logit(opacity),
            color,
        }
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn scale(&self) -> Vec3 {
        Vec3::new(math::exp(self.log_scale[0]), math::exp(self.log_scale[1]), math::exp(self.log_scale[2]))
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_mat(&self.rotation)
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = self.scale();
        let mut m = r;
        for row in m.0.iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= s[j];
            }
        }
        m.mul_mat(&m.transpose())
    }

    pub fn normalize_rotation(&mut self) {
        let n = math::sqrt(self.rotation.iter().map(|v| v * v).sum());
        if n > 0.0 && n.is_finite() {
            for v in self.rotation.iter_mut() {
                *v /= n;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    /// Flat parameter vector: position, rotation, log-scale, opacity logit, color.
    pub fn to_params(&self) -> [f64; PARAM_COUNT] {
        let mut a = [0.0; PARAM_COUNT];
        a[0..3].copy_from_slice(&self.position.0);
        a[3..7].copy_from_slice(&self.rotation);
        a[7..10].copy_from_slice(&self.log_scale.0);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color.0);
        a
    }

    pub fn from_params(a: &[f64; PARAM_COUNT]) -> Self {
        Gaussian3D {
            position: Vec3::new(a[0], a[1], a[2]),
            rotation: [a[3], a[4], a[5], a[6]],
            log_scale: Vec3::new(a[7], a[8], a[9]),
            opacity_logit: a[10],
            color: Vec3::new(a[11], a[12], a[13]),
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason| Err(Error::InvalidGaussian { index, reason });
        if !self.position.is_finite() || !self.color.is_finite() || !self.log_scale.is_finite() {
            return fail("non-finite parameter");
        }
        let qn = math::sqrt(self.rotation.iter().map(|v| v * v).sum());
        if (qn - 1.0).abs() > 1e-6 {
            return fail("rotation quaternion is not unit length");
        }
        let s = self.scale();
        if !(s.is_finite() && s.0.iter().all(|&v| v > 0.0)) {
            return fail("scale must be positive and finite");
        }
        let a = self.opacity();
        if !(a > 0.0 && a < 1.0) {
            return fail("opacity must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Pixel `(i, j)` has its center at continuous coordinate `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    /// Camera at `eye` looking at `target`; +y of the image points along `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        // camera +x right, +y down, +z forward
        let right = forward.cross(&up).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
        let down = forward.cross(&right);
        let rotation = Mat3([right.0, down.0, forward.0]);
        let translation = -rotation.mul_vec(&eye);
        CameraView {
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = Error::InvalidCamera;
        if self.rotation.orthonormality_error() > 1e-9 || (self.rotation.det() - 1.0).abs() > 1e-9 {
            return Err(err("rotation is not orthonormal with determinant +1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(err("zero image dimension".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(err(format!("principal point ({}, {}) outside the image", self.cx, self.cy)));
        }
        if !self.translation.is_finite() {
            return Err(err("non-finite translation".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(&(*p - self.translation))
    }

    pub fn center(&self) -> Vec3 {
        self.camera_to_world(&Vec3::ZERO)
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    #[inline]
    pub fn project(&self, pc: &Vec3) -> (f64, f64) {
        (self.fx * pc.x() / pc.z() + self.cx, self.fy * pc.y() / pc.z() + self.cy)
    }

    /// Camera-space point at view-space depth `z` along the ray through `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        ImageBuffer { width, height, pixels: vec![fill; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        ImageBuffer { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Bilinear sample at continuous coordinates, clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = math::floor(x) as usize;
        let y0 = math::floor(y) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0; 3];
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        for k in 0..3 {
            out[k] = (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy;
        }
        out
    }

    pub fn crop(&self, rect: &PatchRect) -> ImageBuffer {
        ImageBuffer::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y))
    }

    /// Rec. 601 luma per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| luma(p)).collect()
    }

    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })).collect(),
        }
    }
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[inline]
pub fn luma(p: &[f64; 3]) -> f64 {
    LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
}

/// Per-pixel depth with an explicit validity flag. Invalid pixels store `0.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap { width, height, values: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    /// Builds a map from raw values; non-positive or non-finite entries become invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        let mut out = DepthMap { width, height, values, valid: vec![false; width * height] };
        for i in 0..out.values.len() {
            let v = out.values[i];
            if v > 0.0 && v.is_finite() {
                out.valid[i] = true;
            } else {
                out.values[i] = 0.0;
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Option<f64>) {
        let i = y * self.width + x;
        match v {
            Some(d) if d > 0.0 && d.is_finite() => {
                self.values[i] = d;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `(min, max)` over valid pixels.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(d, _)| *d);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }
}

/// Binary inpaint mask; `true` marks the region `M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl MaskImage {
    pub fn empty(width: usize, height: usize) -> Self {
        MaskImage { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        MaskImage { width, height, bits }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Linear indices of `M`.
    pub fn inside(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Linear indices of the complement `Mᶜ`.
    pub fn outside(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| !**b).map(|(i, _)| i)
    }

    pub fn complement(&self) -> MaskImage {
        MaskImage { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn union(&self, other: &MaskImage) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersect(&self, other: &MaskImage) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// Square-structuring-element dilation.
    pub fn dilate(&self, radius: usize) -> MaskImage {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        let r = radius as isize;
        MaskImage::from_fn(w, h, |x, y| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h && self.get(xx as usize, yy as usize) {
                        return true;
                    }
                }
            }
            false
        })
    }

    pub fn crop(&self, rect: &PatchRect) -> MaskImage {
        MaskImage::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y))
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchRect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn to_mask(&self, width: usize, height: usize) -> MaskImage {
        MaskImage::from_fn(width, height, |x, y| self.contains(x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSample {
    pub u: usize,
    pub v: usize,
    pub depth: f64,
}

/// Sparse metric depth samples (the structure-from-motion stand-in).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseDepthSamples {
    pub samples: Vec<SparseSample>,
}

impl SparseDepthSamples {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for s in &self.samples {
            if s.u >= width || s.v >= height {
                return Err(Error::Config(format!("sparse sample ({}, {}) out of bounds", s.u, s.v)));
            }
            if !(s.depth > 0.0 && s.depth.is_finite()) {
                return Err(Error::Config(format!("sparse sample ({}, {}) has non-positive depth", s.u, s.v)));
            }
        }
        Ok(())
    }
}

/// Everything known about one training view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub camera: CameraView,
    /// Captured image (with the object present).
    pub image: ImageBuffer,
    pub mask: MaskImage,
    /// Estimated depth, before affine alignment.
    pub depth: DepthMap,
    pub sparse: SparseDepthSamples,
    /// Per-view inpainting of the background render, when available.
    pub inpainted: Option<ImageBuffer>,
}

impl ViewRecord {
    pub fn dims(&self) -> (usize, usize) {
        self.camera.dims()
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let d = self.camera.dims();
        check_dims("image", d, self.image.dims())?;
        check_dims("mask", d, self.mask.dims())?;
        check_dims("depth", d, self.depth.dims())?;
        if let Some(inp) = &self.inpainted {
            check_dims("inpainted image", d, inp.dims())?;
        }
        self.sparse.validate(d.0, d.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub views: Vec<ViewRecord>,
    pub reference_view_id: usize,
    /// Background-only renders for evaluation.
    pub ground_truth: Option<Vec<ImageBuffer>>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if self.reference_view_id >= self.views.len() {
            return Err(Error::ReferenceOutOfRange { id: self.reference_view_id, count: self.views.len() });
        }
        for v in &self.views {
            v.validate()?;
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.views.len() {
                return Err(Error::Config(format!("{} ground-truth renders for {} views", gt.len(), self.views.len())));
            }
            for (g, v) in gt.iter().zip(&self.views) {
                check_dims("ground truth", v.dims(), g.dims())?;
            }
        }
        Ok(())
    }

    pub fn reference(&self) -> &ViewRecord {
        &self.views[self.reference_view_id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_partition_visits_each_pixel_once() {
        let m = MaskImage::from_fn(7, 5, |x, y| (x * 3 + y) % 4 == 0);
        let mut seen = vec![0u8; 35];
        for i in m.inside().chain(m.outside()) {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|c| *c == 1));
        assert_eq!(m.count() + m.complement().count(), 35);
    }

    #[test]
    fn camera_look_at_is_valid_and_projects_target_to_center() {
        let cam = CameraView::look_at(Vec3::new(0.3, -0.2, -1.0), Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, -1.0, 0.0), 80.0, 80.0, 65, 49);
        cam.validate().unwrap();
        let pc = cam.world_to_camera(&Vec3::new(0.0, 0.0, 3.0));
        let (u, v) = cam.project(&pc);
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
        let back = cam.camera_to_world(&pc);
        assert!((back - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_validation_rejects_reflection() {
        let mut cam = CameraView::look_at(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0), 50.0, 50.0, 32, 32);
        cam.rotation.0[0][0] = -cam.rotation.0[0][0];
        assert!(matches!(cam.validate(), Err(Error::InvalidCamera(_))));
    }

    #[test]
    fn depth_from_values_marks_sentinels_invalid() {
        let d = DepthMap::from_values(2, 2, vec![1.0, 0.0, -3.0, f64::NAN]);
        assert_eq!(d.valid, vec![true, false, false, false]);
        assert_eq!(d.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_validation() {
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vec3::new(0.2, 0.3, 0.4));
        g.validate(0).unwrap();
        let mut bad = g;
        bad.rotation = [2.0, 0.0, 0.0, 0.0];
        assert!(bad.validate(3).is_err());
        bad.normalize_rotation();
        bad.validate(3).unwrap();
    }
}
