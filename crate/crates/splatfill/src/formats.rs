//! Binary depth maps, Gaussian checkpoints and 8-bit PNG images.
//!
//! `depth.f32`: `u32` width, `u32` height, then `width*height` little-endian
//! `f32` values (0 where invalid), then one validity byte per pixel.
//!
//! `.gsbin`: magic `GSBN`, `u32` version, `u64` count, then per Gaussian 14
//! little-endian `f64`: position, rotation (w, x, y, z), log scale, opacity
//! logit, color.

use std::fs;
use std::path::Path;

use splatfill_core::scene::{DepthMap, Gaussian3D, ImageBuffer, MaskImage, PARAM_COUNT};

use crate::error::{Error, Result};

pub const GSBIN_MAGIC: &[u8; 4] = b"GSBN";
pub const GSBIN_VERSION: u32 = 1;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn depth_to_bytes(d: &DepthMap) -> Vec<u8> {
    let n = d.width * d.height;
    let mut out = Vec::with_capacity(8 + 5 * n);
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    for i in 0..n {
        let v = if d.valid[i] { d.values[i] as f32 } else { 0.0 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(d.valid.iter().map(|v| *v as u8));
    out
}

pub fn depth_from_bytes(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "depth header truncated"));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = w * h;
    if bytes.len() != 8 + 5 * n {
        return Err(Error::format(path, format!("depth file is {} bytes, expected {} for {w}x{h}", bytes.len(), 8 + 5 * n)));
    }
    let mut d = DepthMap::invalid(w, h);
    for i in 0..n {
        let v = f32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as f64;
        let flag = bytes[8 + 4 * n + i];
        if flag > 1 {
            return Err(Error::format(path, format!("bad validity byte {flag} at pixel {i}")));
        }
        if flag == 1 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::format(path, format!("valid pixel {i} has non-positive depth {v}")));
            }
            d.values[i] = v;
            d.valid[i] = true;
        }
    }
    Ok(d)
}

pub fn save_depth(d: &DepthMap, path: &Path) -> Result<()> {
    write_bytes(path, &depth_to_bytes(d))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    depth_from_bytes(&read(path)?, path)
}

pub fn gaussians_to_bytes(g: &[Gaussian3D]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + g.len() * PARAM_COUNT * 8);
    out.extend_from_slice(GSBIN_MAGIC);
    out.extend_from_slice(&GSBIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.len() as u64).to_le_bytes());
    for x in g {
        for v in x.to_params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn gaussians_from_bytes(bytes: &[u8], path: &Path) -> Result<Vec<Gaussian3D>> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "checkpoint header truncated"));
    }
    if &bytes[0..4] != GSBIN_MAGIC {
        return Err(Error::format(path, "not a gsbin checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GSBIN_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let rec = PARAM_COUNT * 8;
    let body = &bytes[16..];
    if count.checked_mul(rec) != Some(body.len()) {
        return Err(Error::format(path, format!("checkpoint truncated: {} bytes for {count} records", body.len())));
    }
    let mut out = Vec::with_capacity(count);
    for (k, chunk) in body.chunks_exact(rec).enumerate() {
        let mut p = [0.0; PARAM_COUNT];
        for (j, b) in chunk.chunks_exact(8).enumerate() {
            p[j] = f64::from_le_bytes(b.try_into().unwrap());
        }
        let g = Gaussian3D::from_params(&p);
        g.validate(k)?;
        out.push(g);
    }
    Ok(out)
}

pub fn save_gaussians(g: &[Gaussian3D], path: &Path) -> Result<()> {
    write_bytes(path, &gaussians_to_bytes(g))
}

pub fn load_gaussians(path: &Path) -> Result<Vec<Gaussian3D>> {
    gaussians_from_bytes(&read(path)?, path)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(path: &Path, w: usize, h: usize, data: Vec<u8>, color: image::ExtendedColorType) -> Result<()> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(&data, w as u32, h as u32, color)
        .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?;
    write_bytes(path, &buf)
}

/// Writes an 8-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let data = img.pixels.iter().flat_map(|p| p.map(to_u8)).collect();
    encode_png(path, img.width, img.height, data, image::ExtendedColorType::Rgb8)
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Ok(ImageBuffer { width: w, height: h, pixels })
}

/// Writes an 8-bit gray PNG, 255 inside the mask.
pub fn save_mask(m: &MaskImage, path: &Path) -> Result<()> {
    let data = m.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
    encode_png(path, m.width, m.height, data, image::ExtendedColorType::L8)
}

/// Reads a mask; gray values of 128 and above are inside.
pub fn load_mask(path: &Path) -> Result<MaskImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(MaskImage { width: w, height: h, bits: img.pixels().map(|p| p.0[0] >= 128).collect() })
}

/// Gray visualization of a depth map, near bright; invalid pixels black.
pub fn depth_preview(d: &DepthMap) -> ImageBuffer {
    let (lo, hi) = d.valid_range().unwrap_or((0.0, 1.0));
    let span = (hi - lo).max(1e-12);
    ImageBuffer::from_fn(d.width, d.height, |x, y| match d.get(x, y) {
        Some(v) => [1.0 - 0.9 * (v - lo) / span; 3],
        None => [0.0; 3],
    })
}
