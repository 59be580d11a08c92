//! Command-line pipeline: synthesize, train, score, render, evaluate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use splatfill_core::metrics::{evaluate_inpaint_region, RegionReport};
use splatfill_core::render::render;
use splatfill_core::scene::{CameraView, ImageBuffer, PatchRect};
use splatfill_core::synth::{synthesize, SynthSpec};
use splatfill_core::train::{refresh_confidences, surface_depth, train_initial, train_inpaint, LogRecord, TrainConfig, WeightMode};

use crate::dataset::{load_cameras, load_dataset, read_json, save_dataset, write_json};
use crate::error::{Error, Result};
use crate::formats::{depth_preview, load_gaussians, load_mask, load_png, save_depth, save_gaussians, save_png};

#[derive(Debug, Parser)]
#[command(name = "splatfill", version, about = "Reference-guided Gaussian-splatting scene inpainting")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fixed reduction order everywhere; outputs are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightModeArg {
    Uniform,
    Threshold,
    Confidence,
}

impl From<WeightModeArg> for WeightMode {
    fn from(m: WeightModeArg) -> Self {
        match m {
            WeightModeArg::Uniform => WeightMode::Uniform,
            WeightModeArg::Threshold => WeightMode::Threshold,
            WeightModeArg::Confidence => WeightMode::Confidence,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the background scene outside the mask.
    TrainInitial {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-view background renders.
        #[arg(long)]
        renders: PathBuf,
        /// NDJSON training log (default: next to the checkpoint).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score every view's inpainting against the reference.
    Confidence {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        reference: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the inpainted scene.
    TrainInpaint {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        reference: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        weight_mode: Option<WeightModeArg>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render color, depth and normals for one camera.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score renders against ground truth inside each mask's bounding box.
    Eval {
        #[arg(long)]
        renders: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        margin: f64,
    },
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    // Every reduction in the core already runs in a fixed order, so
    // --deterministic needs no extra switch; it is accepted for scripts.
    let threads = match cli.threads {
        Some(0) => return Err(Error::Usage("--threads must be at least 1".into())),
        t => t.unwrap_or(0),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, out } => cmd_synth(spec, out),
        Command::TrainInitial { data, config, out, renders, log } => cmd_train_initial(data, config.as_deref(), out, renders, log.as_deref()),
        Command::Confidence { data, scene, reference, config, out } => cmd_confidence(data, scene, *reference, config.as_deref(), out),
        Command::TrainInpaint { data, scene, reference, config, out, weight_mode, log } => {
            cmd_train_inpaint(data, scene, *reference, config.as_deref(), out, *weight_mode, log.as_deref())
        }
        Command::Render { scene, camera, view, out } => cmd_render(scene, camera, *view, out),
        Command::Eval { renders, gt, masks, out, margin } => cmd_eval(renders, gt, masks, out, *margin),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// NDJSON log whose first line echoes the full configuration.
struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl LogWriter {
    fn create(path: &Path, config: &TrainConfig) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = LogWriter { path: path.to_path_buf(), out: BufWriter::new(file), error: None };
        w.line(&serde_json::json!({ "config": config }));
        Ok(w)
    }

    fn line<T: Serialize>(&mut self, value: &T) {
        if self.error.is_some() {
            return;
        }
        let text = serde_json::to_string(value).expect("log records serialize");
        if let Err(e) = writeln!(self.out, "{text}") {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(Error::io(&self.path, e));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn default_log(out: &Path) -> PathBuf {
    out.with_extension("log.ndjson")
}

fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: SynthSpec = read_json(spec_path)?;
    spec.validate()?;
    let scene = synthesize(&spec)?;
    save_dataset(&scene.dataset, out, Some(&scene.gt_depth))?;
    write_json(&spec, &out.join("spec.json"))?;
    println!("wrote {} views to {}", scene.dataset.views.len(), out.display());
    Ok(())
}

fn cmd_train_initial(data: &Path, config: Option<&Path>, out: &Path, renders: &Path, log: Option<&Path>) -> Result<()> {
    let ds = load_dataset(data)?;
    let cfg = load_config(config)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| default_log(out));
    let mut lw = LogWriter::create(&log_path, &cfg)?;
    let gaussians = train_initial(&ds, &cfg, &mut |r: &LogRecord| lw.line(r))?;
    lw.finish()?;
    save_gaussians(&gaussians, out)?;
    for (k, v) in ds.views.iter().enumerate() {
        let r = render(&gaussians, &v.camera, &cfg.render);
        save_png(&r.color, &renders.join(format!("view_{k}.png")))?;
        save_depth(&surface_depth(&r, &cfg.render), &renders.join(format!("view_{k}_depth.f32")))?;
    }
    println!("{} gaussians -> {}", gaussians.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConfidenceEntry {
    view_id: usize,
    conf: f64,
    weight: f64,
    iteration: usize,
    coverage: f64,
    patch: PatchRect,
    diagnostic: Option<String>,
    thumbnail: String,
}

#[derive(Debug, Serialize)]
struct ConfidenceReport {
    reference_view_id: usize,
    views: Vec<ConfidenceEntry>,
}

fn with_reference(data: &Path, reference: usize) -> Result<splatfill_core::scene::SceneDataset> {
    let mut ds = load_dataset(data)?;
    if reference >= ds.views.len() {
        return Err(splatfill_core::Error::ReferenceOutOfRange { id: reference, count: ds.views.len() }.into());
    }
    ds.reference_view_id = reference;
    Ok(ds)
}

fn cmd_confidence(data: &Path, scene: &Path, reference: usize, config: Option<&Path>, out: &Path) -> Result<()> {
    let ds = with_reference(data, reference)?;
    let cfg = load_config(config)?;
    let gaussians = load_gaussians(scene)?;
    let refresh = refresh_confidences(&ds, &gaussians, &cfg, 0)?;
    let thumbs = out.with_extension("thumbs");
    let mut views = Vec::with_capacity(refresh.records.len());
    for r in &refresh.records {
        let thumb = thumbs.join(format!("view_{}.png", r.view_id));
        if let Some(img) = &ds.views[r.view_id].inpainted {
            save_png(&img.crop(&r.patch), &thumb)?;
        }
        println!("view {}: conf {:.4} weight {:.4} thumbnail {}", r.view_id, r.conf, r.weight, thumb.display());
        views.push(ConfidenceEntry {
            view_id: r.view_id,
            conf: r.conf,
            weight: r.weight,
            iteration: r.last_update_iteration,
            coverage: r.coverage,
            patch: r.patch,
            diagnostic: r.diagnostic.clone(),
            thumbnail: thumb.display().to_string(),
        });
    }
    write_json(&ConfidenceReport { reference_view_id: reference, views }, out)
}

fn cmd_train_inpaint(
    data: &Path,
    scene: &Path,
    reference: usize,
    config: Option<&Path>,
    out: &Path,
    mode: Option<WeightModeArg>,
    log: Option<&Path>,
) -> Result<()> {
    let ds = with_reference(data, reference)?;
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.weight_mode = m.into();
    }
    let gaussians = load_gaussians(scene)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| default_log(out));
    let mut lw = LogWriter::create(&log_path, &cfg)?;
    let outcome = train_inpaint(&ds, gaussians, &cfg, &mut |r: &LogRecord| lw.line(r))?;
    for d in &outcome.last_refresh.diagnostics {
        lw.line(&serde_json::json!({ "diagnostic": d }));
    }
    lw.finish()?;
    save_gaussians(&outcome.gaussians, out)?;
    println!("{} gaussians -> {} ({} confidence refreshes)", outcome.gaussians.len(), out.display(), outcome.refreshes);
    Ok(())
}

/// `dir/stem_suffix.ext` next to `path`.
fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn cmd_render(scene: &Path, camera: &Path, view: usize, out: &Path) -> Result<()> {
    let cams = load_cameras(camera)?;
    let cam = cams
        .views
        .get(view)
        .map(CameraView::from)
        .ok_or_else(|| Error::format(camera, format!("view {view} out of range for {} cameras", cams.views.len())))?;
    cam.validate()?;
    let gaussians = load_gaussians(scene)?;
    let settings = TrainConfig::default().render;
    let r = render(&gaussians, &cam, &settings);
    save_png(&r.color, out)?;
    let depth = surface_depth(&r, &settings);
    save_depth(&depth, &sibling(out, "depth", "f32"))?;
    save_png(&depth_preview(&depth), &sibling(out, "depth", "png"))?;
    let n = &r.normal;
    let normals = ImageBuffer::from_fn(n.width, n.height, |x, y| {
        let i = y * n.width + x;
        if n.valid[i] {
            n.normals[i].0.map(|c| 0.5 * (c + 1.0))
        } else {
            [0.0; 3]
        }
    });
    save_png(&normals, &sibling(out, "normal", "png"))
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum EvalEntry {
    Ok {
        view_id: usize,
        #[serde(flatten)]
        report: RegionReport,
    },
    Failed {
        view_id: usize,
        error: String,
    },
}

#[derive(Debug, Serialize)]
struct EvalMeans {
    ssim: f64,
    psnr_db: f64,
    perceptual: f64,
    views: usize,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    views: Vec<EvalEntry>,
    mean: Option<EvalMeans>,
    /// Reserved; not computed.
    fid: Option<f64>,
}

/// First existing candidate among `dir/view_k.png` and `dir/view_k/<name>.png`.
fn find_view_file(dir: &Path, k: usize, name: &str) -> Option<PathBuf> {
    [dir.join(format!("view_{k}.png")), dir.join(format!("view_{k}")).join(format!("{name}.png"))].into_iter().find(|p| p.is_file())
}

fn view_ids(dir: &Path) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let stem = name.strip_suffix(".png").unwrap_or(&name);
        if let Some(k) = stem.strip_prefix("view_").and_then(|s| s.parse::<usize>().ok()) {
            if find_view_file(dir, k, "mask").is_some() {
                ids.push(k);
            }
        }
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn eval_view(renders: &Path, gt: &Path, masks: &Path, k: usize, margin: f64) -> Result<RegionReport> {
    let missing = |dir: &Path, what: &str| Error::format(dir, format!("view {k}: missing {what}"));
    let r = load_png(&find_view_file(renders, k, "image").ok_or_else(|| missing(renders, "render"))?)?;
    let g = load_png(&find_view_file(gt, k, "image").ok_or_else(|| missing(gt, "ground truth"))?)?;
    let m = load_mask(&find_view_file(masks, k, "mask").ok_or_else(|| missing(masks, "mask"))?)?;
    Ok(evaluate_inpaint_region(&r, &g, &m, margin)?)
}

fn cmd_eval(renders: &Path, gt: &Path, masks: &Path, out: &Path, margin: f64) -> Result<()> {
    let ids = view_ids(masks)?;
    if ids.is_empty() {
        return Err(Error::format(masks, "no view masks found"));
    }
    let mut views = Vec::with_capacity(ids.len());
    let (mut s, mut p, mut d, mut n) = (0.0, 0.0, 0.0, 0usize);
    for k in ids {
        match eval_view(renders, gt, masks, k, margin) {
            Ok(report) => {
                s += report.ssim;
                p += report.psnr_db;
                d += report.perceptual;
                n += 1;
                views.push(EvalEntry::Ok { view_id: k, report });
            }
            Err(e) => views.push(EvalEntry::Failed { view_id: k, error: e.to_string() }),
        }
    }
    let mean = (n > 0).then(|| {
        let c = n as f64;
        EvalMeans { ssim: s / c, psnr_db: p / c, perceptual: d / c, views: n }
    });
    write_json(&EvalReport { views, mean, fid: None }, out)
}
