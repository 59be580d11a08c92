//! Image quality metrics for rendered views, restricted to the bounding box
//! of the inpainted region.

use serde::{Deserialize, Serialize};

use crate::confidence::{ensure_min_size, extract_patch};
use crate::error::{check_dims, Result};
use crate::math;
use crate::perceptual::{MultiScaleStructural, PerceptualMetric};
use crate::scene::{ImageBuffer, MaskImage, PatchRect};

pub use crate::ssim::ssim;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims("mse", a.dims(), b.dims())?;
    let mut s = 0.0;
    for (p, q) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = p[c] - q[c];
            s += d * d;
        }
    }
    Ok(s / (3 * a.pixels.len()).max(1) as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * math::log10(m)).min(PSNR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub ssim: f64,
    pub psnr_db: f64,
    pub perceptual: f64,
    pub bbox: PatchRect,
}

/// Evaluation box for a mask: the padded bounding box, grown to the smallest
/// size every metric accepts.
pub fn evaluation_box(mask: &MaskImage, margin_frac: f64) -> Result<PatchRect> {
    let (w, h) = mask.dims();
    let min = MultiScaleStructural::default().min_size();
    Ok(ensure_min_size(extract_patch(mask, margin_frac)?, min, w, h))
}

pub fn evaluate_inpaint_region(render: &ImageBuffer, gt: &ImageBuffer, mask: &MaskImage, margin_frac: f64) -> Result<RegionReport> {
    check_dims("evaluation render", gt.dims(), render.dims())?;
    check_dims("evaluation mask", gt.dims(), mask.dims())?;
    let bbox = evaluation_box(mask, margin_frac)?;
    let (a, b) = (render.crop(&bbox), gt.crop(&bbox));
    Ok(RegionReport {
        ssim: ssim(&a, &b)?,
        psnr_db: psnr(&a, &b)?,
        perceptual: MultiScaleStructural::default().distance(&a, &b)?,
        bbox,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn psnr_cases() {
        let a = ImageBuffer::new(8, 8, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = ImageBuffer::new(8, 8, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn identical_region_is_perfect() {
        let img = ImageBuffer::from_fn(40, 30, |x, y| [x as f64 / 40.0, y as f64 / 30.0, 0.3]);
        let mask = MaskImage::from_fn(40, 30, |x, y| (10..20).contains(&x) && (8..14).contains(&y));
        let r = evaluate_inpaint_region(&img, &img, &mask, 0.1).unwrap();
        assert_eq!(r.ssim, 1.0);
        assert_eq!(r.perceptual, 0.0);
        assert_eq!(r.psnr_db, PSNR_CAP_DB);
        assert!(r.bbox.width >= 16 && r.bbox.height >= 16);
        let empty = MaskImage::from_fn(40, 30, |_, _| false);
        assert_eq!(evaluate_inpaint_region(&img, &img, &empty, 0.1), Err(Error::EmptyMask));
    }
}
