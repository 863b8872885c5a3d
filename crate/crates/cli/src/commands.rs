//! Implementations behind the `semfield` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use semfield::optim::{fit, init_from_costvolume, write_history_csv, FitConfig, InitConfig};
use semfield::render::{render_pose_path, render_with, RenderOptions};
use semfield::scene::{load_scene, ring_cameras, synth_scene, SynthConfig};
use semfield::segment::{miou_macc, open_vocab_segment, pca_project, prompt_grid_eval, prompt_segment, psnr, ssim};
use semfield::tensor::{write_gray_image, write_image, write_tensor};
use semfield::{CameraView, Error, GaussianField, Result, Scene, Tensor};

use crate::service::label_map_image;

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub gaussians: usize,
    pub views: usize,
    pub heldout: usize,
    pub size: usize,
}

/// Generates a synthetic scene directory with its oracle `field.sspt`.
pub fn synth(a: &SynthArgs) -> Result<Scene> {
    let cfg = SynthConfig {
        n_gaussians: a.gaussians,
        n_views: a.views,
        heldout: a.heldout,
        width: a.size,
        height: a.size,
        seed: a.seed,
        ..Default::default()
    };
    let s = synth_scene(&cfg)?;
    s.write(&a.out)?;
    Ok(s.scene)
}

/// Reads a [`FitConfig`] from TOML; missing keys take their defaults.
pub fn load_fit_config(path: Option<&Path>) -> Result<FitConfig> {
    match path {
        None => Ok(FitConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub scene: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    /// Start from this field instead of the cost-volume initialization.
    pub init: Option<PathBuf>,
    pub stride: usize,
    pub history: Option<PathBuf>,
}

pub fn fit_scene(a: &FitArgs) -> Result<GaussianField> {
    let scene = load_scene(&a.scene)?;
    let cfg = load_fit_config(a.config.as_deref())?;
    let start = match &a.init {
        Some(p) => GaussianField::load(p)?,
        None => init_from_costvolume(&scene, &InitConfig { stride: a.stride, seed: cfg.seed, ..Default::default() })?,
    };
    log::info!("fitting {} Gaussians", start.len());
    let res = fit(&scene, &start, &cfg)?;
    res.field.save(&a.out)?;
    if let Some(h) = &a.history {
        write_history_csv(h, &res.history)?;
    }
    Ok(res.field)
}

/// Which cameras `render` uses.
#[derive(Debug, Clone, PartialEq)]
pub enum Cameras {
    /// Every view in the scene.
    Views,
    /// `n` cameras on a ring around the field, elevated like the training
    /// cameras.
    Ring(usize),
    /// One pose, row-major `[R|T]`.
    Pose(Vec<f64>),
}

/// Renders color, alpha, depth and PCA feature images for each camera and
/// returns the written color image paths.
pub fn render_cameras(scene: &Scene, field: &GaussianField, which: &Cameras, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let template = &scene
        .views
        .first()
        .ok_or_else(|| Error::Manifest("scene has no views".into()))?
        .camera;
    let cams: Vec<(String, CameraView)> = match which {
        Cameras::Views => scene.views.iter().map(|v| (v.name.clone(), v.camera.clone())).collect(),
        Cameras::Pose(p) => vec![("pose".into(), template.with_pose12(p)?)],
        Cameras::Ring(n) => {
            let (center, radius, elevation) = ring_geometry(scene, field);
            ring_cameras(template, center, radius, elevation, *n, 0.0)?
                .into_iter()
                .enumerate()
                .map(|(k, c)| (format!("ring_{k:03}"), c))
                .collect()
        }
    };
    let views: Vec<CameraView> = cams.iter().map(|c| c.1.clone()).collect();
    let renders = render_pose_path(field, &views, &RenderOptions::default())?;
    let mut written = Vec::new();
    for ((name, _), r) in cams.iter().zip(&renders) {
        let color = out.join(format!("{name}.png"));
        write_image(&r.color, &color)?;
        write_gray_image(&r.alpha, out.join(format!("{name}_alpha.png")))?;
        write_tensor(&r.depth, out.join(format!("{name}_depth.sspt")))?;
        if field.seg_dim() > 0 {
            write_image(&pca_project(&r.feat_seg)?, out.join(format!("{name}_seg_pca.png")))?;
        }
        if field.lang_dim() > 0 {
            write_image(&pca_project(&r.feat_lang)?, out.join(format!("{name}_lang_pca.png")))?;
        }
        written.push(color);
    }
    Ok(written)
}

/// Field centroid, mean training-camera distance to it and mean camera
/// elevation in degrees.
fn ring_geometry(scene: &Scene, field: &GaussianField) -> ([f64; 3], f64, f64) {
    let mut c = [0.0; 3];
    for i in 0..field.len() {
        let p = field.position(i);
        for k in 0..3 {
            c[k] += p[k] as f64 / field.len().max(1) as f64;
        }
    }
    let (mut radius, mut elev) = (0.0, 0.0);
    let n = scene.views.len() as f64;
    for v in &scene.views {
        let e = v.camera.center();
        let d = [e[0] - c[0], e[1] - c[1], e[2] - c[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        radius += r / n;
        elev += (d[2] / r.max(1e-12)).asin().to_degrees() / n;
    }
    (c, radius, elev)
}

/// What `segment` should compute.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentMode {
    /// Point prompt at `(x, y)` with thresholds for the three levels.
    Point { x: usize, y: usize, thresholds: [f64; 3] },
    /// Open-vocabulary labels from the scene's label set.
    Labels,
}

/// Segments one scene view and writes mask or label-map PNGs to `out`.
pub fn segment_view(scene: &Scene, field: &GaussianField, view: usize, mode: &SegmentMode, out: &Path) -> Result<Vec<PathBuf>> {
    let v = scene
        .views
        .get(view)
        .ok_or_else(|| Error::invalid(format!("view {view} out of range ({} views)", scene.views.len())))?;
    std::fs::create_dir_all(out)?;
    let (h, w) = (v.camera.height, v.camera.width);
    match mode {
        SegmentMode::Point { x, y, thresholds } => {
            if *x >= w || *y >= h {
                return Err(Error::invalid(format!("pixel ({x}, {y}) outside {w}x{h}")));
            }
            let r = render_with(field, &v.camera, &RenderOptions { seg: true, lang: false, ..Default::default() })?;
            let pm = prompt_segment(&r.feat_seg, *y, *x, *thresholds)?;
            let mut paths = Vec::new();
            for (k, level) in ["small", "medium", "large"].iter().enumerate() {
                let m = Tensor::new(vec![h, w, 1], pm.masks[k].iter().map(|&b| if b { 1.0f32 } else { 0.0 }).collect())?;
                let p = out.join(format!("{}_{level}.png", v.name));
                write_gray_image(&m, &p)?;
                paths.push(p);
            }
            Ok(paths)
        }
        SegmentMode::Labels => {
            let labels = scene.labels.as_ref().ok_or_else(|| Error::invalid("scene has no label set"))?;
            let r = render_with(field, &v.camera, &RenderOptions { seg: false, lang: true, ..Default::default() })?;
            let seg = open_vocab_segment(&r.feat_lang, labels)?;
            let (img, legend) = label_map_image(&seg.labels, labels.names());
            let p = out.join(format!("{}_labels.png", v.name));
            write_image(&img, &p)?;
            for e in legend.iter().filter(|e| e.pixels > 0) {
                log::info!("{}: {} px, color {:?}", e.name, e.pixels, e.color);
            }
            Ok(vec![p])
        }
    }
}

/// Per-view metrics of a fitted field.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Open-vocabulary mIoU and mAcc, when the view has class labels.
    pub label: Option<(f64, f64)>,
    /// Grid-prompt mIoU and mAcc, when the view has instance ids.
    pub prompt: Option<(f64, f64)>,
}

/// Scores the held-out views, or every view when none are held out.
pub fn evaluate(scene: &Scene, field: &GaussianField, grid: usize, thresholds: [f64; 3]) -> Result<Vec<ViewMetrics>> {
    let mut views: Vec<_> = scene.heldout_views().collect();
    if views.is_empty() {
        views = scene.views.iter().collect();
    }
    let mut rows = Vec::new();
    for v in views {
        let r = render_with(field, &v.camera, &RenderOptions::default())?;
        let label = match (&scene.labels, &v.labels) {
            (Some(ls), Some(gt)) if field.lang_dim() > 0 => {
                let seg = open_vocab_segment(&r.feat_lang, ls)?;
                Some(miou_macc(&seg.labels, gt, ls.len())?)
            }
            _ => None,
        };
        let prompt = match &v.instances {
            Some(inst) if field.seg_dim() > 0 => {
                let g = prompt_grid_eval(&[&r.feat_seg], &[inst], grid, thresholds)?;
                Some((g.miou, g.macc))
            }
            _ => None,
        };
        rows.push(ViewMetrics { view: v.name.clone(), psnr: psnr(&r.color, &v.image)?, ssim: ssim(&r.color, &v.image)?, label, prompt });
    }
    Ok(rows)
}

pub fn metrics_csv(rows: &[ViewMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("view,psnr,ssim,miou,macc,prompt_miou,prompt_macc\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{},{},{}",
            r.view,
            r.psnr,
            r.ssim,
            opt(r.label.map(|l| l.0)),
            opt(r.label.map(|l| l.1)),
            opt(r.prompt.map(|p| p.0)),
            opt(r.prompt.map(|p| p.1)),
        );
    }
    s
}
