//! On-disk dataset layout.
//!
//! ```text
//! cameras.json            intrinsics, row-major rotation, translation, size, reference_view_id
//! view_<k>/image.png      captured image
//! view_<k>/mask.png       255 = inpaint region
//! view_<k>/depth.f32      estimated depth
//! view_<k>/sparse.json    [[u, v, depth], ...]
//! view_<k>/inpainted.png  optional per-view inpainting
//! gt/view_<k>/image.png   optional background-only render
//! gt/view_<k>/depth.f32   optional exact background depth
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatfill_core::math::{Mat3, Vec3};
use splatfill_core::scene::{CameraView, DepthMap, SceneDataset, SparseDepthSamples, SparseSample, ViewRecord};

use crate::error::{Error, Result};
use crate::formats::{load_depth, load_mask, load_png, save_depth, save_mask, save_png, write_bytes};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl From<&CameraView> for CameraJson {
    fn from(c: &CameraView) -> Self {
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: c.rotation.0,
            translation: c.translation.0,
            width: c.width,
            height: c.height,
        }
    }
}

impl From<&CameraJson> for CameraView {
    fn from(c: &CameraJson) -> Self {
        CameraView {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: Mat3(c.rotation),
            translation: Vec3(c.translation),
            width: c.width,
            height: c.height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub views: Vec<CameraJson>,
    pub reference_view_id: usize,
}

pub fn view_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("view_{k}"))
}

pub fn gt_dir(root: &Path, k: usize) -> PathBuf {
    root.join("gt").join(format!("view_{k}"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn load_cameras(path: &Path) -> Result<CamerasFile> {
    read_json(path)
}

/// Writes every view, the optional inpaintings and, when given, ground truth.
pub fn save_dataset(ds: &SceneDataset, root: &Path, gt_depth: Option<&[DepthMap]>) -> Result<()> {
    let cams = CamerasFile { views: ds.views.iter().map(|v| CameraJson::from(&v.camera)).collect(), reference_view_id: ds.reference_view_id };
    write_json(&cams, &root.join("cameras.json"))?;
    for (k, v) in ds.views.iter().enumerate() {
        let dir = view_dir(root, k);
        save_png(&v.image, &dir.join("image.png"))?;
        save_mask(&v.mask, &dir.join("mask.png"))?;
        save_depth(&v.depth, &dir.join("depth.f32"))?;
        let sparse: Vec<(usize, usize, f64)> = v.sparse.samples.iter().map(|s| (s.u, s.v, s.depth)).collect();
        write_json(&sparse, &dir.join("sparse.json"))?;
        if let Some(inp) = &v.inpainted {
            save_png(inp, &dir.join("inpainted.png"))?;
        }
    }
    if let Some(gt) = &ds.ground_truth {
        for (k, g) in gt.iter().enumerate() {
            save_png(g, &gt_dir(root, k).join("image.png"))?;
        }
    }
    if let Some(depths) = gt_depth {
        for (k, d) in depths.iter().enumerate() {
            save_depth(d, &gt_dir(root, k).join("depth.f32"))?;
        }
    }
    Ok(())
}

fn require(path: PathBuf, view: usize) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::format(&path, format!("view {view}: missing file")))
    }
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<SceneDataset> {
    let cams = load_cameras(&root.join("cameras.json"))?;
    let mut views = Vec::with_capacity(cams.views.len());
    for (k, c) in cams.views.iter().enumerate() {
        let camera = CameraView::from(c);
        camera.validate().map_err(|e| Error::format(&root.join("cameras.json"), format!("view {k}: {e}")))?;
        let dir = view_dir(root, k);
        let image = load_png(&require(dir.join("image.png"), k)?)?;
        let mask = load_mask(&require(dir.join("mask.png"), k)?)?;
        let depth = load_depth(&require(dir.join("depth.f32"), k)?)?;
        let raw: Vec<(usize, usize, f64)> = read_json(&require(dir.join("sparse.json"), k)?)?;
        let sparse = SparseDepthSamples { samples: raw.into_iter().map(|(u, v, depth)| SparseSample { u, v, depth }).collect() };
        let inp = dir.join("inpainted.png");
        let inpainted = if inp.is_file() { Some(load_png(&inp)?) } else { None };
        let view = ViewRecord { camera, image, mask, depth, sparse, inpainted };
        view.validate().map_err(|e| Error::format(&dir, format!("view {k}: {e}")))?;
        views.push(view);
    }
    let gt_paths: Vec<PathBuf> = (0..views.len()).map(|k| gt_dir(root, k).join("image.png")).collect();
    let ground_truth = if !views.is_empty() && gt_paths.iter().all(|p| p.is_file()) {
        Some(gt_paths.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let ds = SceneDataset { views, reference_view_id: cams.reference_view_id, ground_truth };
    ds.validate()?;
    Ok(ds)
}
