//! Synthetic oracle scenes with known geometry, features and labels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::manifest::record_camera_fields;
use super::{ring_cameras, CameraView, CostVolumeSettings, Gaussian, GaussianField, LinearHead, Scene, SceneManifest, SceneView, Split, ViewRecord, MANIFEST_FILE};
use crate::costvolume::color_features;
use crate::render::{render_with, RenderOptions};
use crate::segment::{LabelSet, DEFAULT_LABELS};
use crate::tensor::{write_image, write_tensor};
use crate::{real::logit, Error, Result, Tensor};

/// Number of semantic classes a synthetic Gaussian may take (all labels
/// except the trailing "Others").
const OBJECT_CLASSES: usize = 7;
/// Pixels below this RGB norm carry no matching signal.
const MATCH_DARK: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_gaussians: usize,
    pub n_views: usize,
    pub heldout: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub n_instances: usize,
    /// Instance-code dimensions appended to the one-hot class block.
    pub code_dim: usize,
    pub seg_dim: usize,
    pub lang_dim: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    /// Plane-sweep settings written to the manifest.
    pub costvolume: CostVolumeSettings,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_gaussians: 20,
            n_views: 6,
            heldout: 2,
            width: 64,
            height: 64,
            seed: 1,
            n_instances: 4,
            code_dim: 8,
            seg_dim: 16,
            lang_dim: 16,
            radius: 2.5,
            elevation_deg: 25.0,
            costvolume: CostVolumeSettings { downsample: 1, candidates: 64, temperature: 0.01 },
        }
    }
}

impl SynthConfig {
    pub fn latent_dim(&self) -> usize {
        DEFAULT_LABELS.len() + self.code_dim
    }
}

/// A generated scene with the field that produced it.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub field: GaussianField<f32>,
    pub labels: LabelSet,
    /// Class id of every Gaussian.
    pub classes: Vec<usize>,
    /// Instance id of every Gaussian.
    pub instances: Vec<usize>,
}

/// Matches what a PNG round trip returns.
fn quantize(t: &Tensor<f32>) -> Tensor<f32> {
    let inv = 1.0f32 / 255.0;
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() * inv)
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Builds the oracle field, renders every view and derives labels, masks
/// and feature targets from it.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    if cfg.n_gaussians == 0 || cfg.n_views < 2 || cfg.n_instances == 0 {
        return Err(Error::invalid("synthetic scenes need Gaussians, instances and at least 2 views"));
    }
    if cfg.lang_dim < DEFAULT_LABELS.len() {
        return Err(Error::invalid(format!("lang_dim must be at least {}", DEFAULT_LABELS.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = LabelSet::synthetic(&DEFAULT_LABELS, cfg.lang_dim, cfg.seed ^ 0x1abe1)?;
    let nc = DEFAULT_LABELS.len();
    let d = cfg.latent_dim();

    let inst_class: Vec<usize> = (0..cfg.n_instances).map(|_| rng.random_range(0..OBJECT_CLASSES)).collect();
    let inst_code: Vec<Vec<f32>> = (0..cfg.n_instances).map(|_| random_unit(&mut rng, cfg.code_dim.max(1))).collect();
    let inst_center: Vec<[f32; 3]> = (0..cfg.n_instances)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.28..0.28)))
        .collect();

    let mut seg_w = vec![0.0f32; d * cfg.seg_dim];
    for r in nc..d {
        for c in 0..cfg.seg_dim {
            seg_w[r * cfg.seg_dim + c] = rng.random_range(-1.0..1.0);
        }
    }
    let mut lang_w = vec![0.0f32; d * cfg.lang_dim];
    for k in 0..nc {
        lang_w[k * cfg.lang_dim..(k + 1) * cfg.lang_dim].copy_from_slice(labels.embedding(k));
    }
    let mut field = GaussianField::empty(d, cfg.seg_dim, cfg.lang_dim);
    field.seg_head = LinearHead { in_dim: d, out_dim: cfg.seg_dim, weight: seg_w, bias: vec![0.0; cfg.seg_dim] };
    field.lang_head = LinearHead { in_dim: d, out_dim: cfg.lang_dim, weight: lang_w, bias: vec![0.0; cfg.lang_dim] };

    let mut classes = Vec::with_capacity(cfg.n_gaussians);
    let mut instances = Vec::with_capacity(cfg.n_gaussians);
    for i in 0..cfg.n_gaussians {
        // every instance gets at least one Gaussian
        let inst = if i < cfg.n_instances { i } else { rng.random_range(0..cfg.n_instances) };
        let c = inst_center[inst];
        let position = std::array::from_fn(|k| c[k] + rng.random_range(-0.12f32..0.12));
        let log_scale = std::array::from_fn(|_| rng.random_range(0.06f32..0.16).ln());
        let q = random_unit(&mut rng, 4);
        let mut latent = vec![0.0f32; d];
        latent[inst_class[inst]] = 1.0;
        latent[nc..].copy_from_slice(&inst_code[inst][..cfg.code_dim]);
        field.push(Gaussian {
            position,
            opacity_logit: logit(rng.random_range(0.5f32..0.95)),
            log_scale,
            rotation: [q[0], q[1], q[2], q[3]],
            color: std::array::from_fn(|_| logit(rng.random_range(0.1f32..0.9))),
            latent,
        })?;
        classes.push(inst_class[inst]);
        instances.push(inst);
    }

    let focal = 1.1 * cfg.width as f64;
    let template = CameraView::look_at(
        [0.0, -cfg.radius, 0.0],
        [0.0; 3],
        [0.0, 0.0, 1.0],
        focal,
        cfg.width,
        cfg.height,
        1.0,
        4.0,
    )?;
    let mut cams: Vec<(CameraView, Split)> = ring_cameras(&template, [0.0; 3], cfg.radius, cfg.elevation_deg, cfg.n_views, 0.0)?
        .into_iter()
        .map(|c| (c, Split::Train))
        .collect();
    let half = ring_cameras(&template, [0.0; 3], cfg.radius, cfg.elevation_deg, cfg.n_views, 0.5)?;
    for j in 0..cfg.heldout.min(cfg.n_views) {
        cams.push((half[j * cfg.n_views / cfg.heldout.max(1)].clone(), Split::Heldout));
    }

    let opts = RenderOptions { track_dominant: true, ..Default::default() };
    let others = labels.others_index() as f32;
    let mut views = Vec::with_capacity(cams.len());
    for (idx, (camera, split)) in cams.into_iter().enumerate() {
        let out = render_with(&field, &camera, &opts)?;
        let (h, w) = (cfg.height, cfg.width);
        let dom = out.dominant.as_ref().expect("dominant tracking requested");
        let alpha = out.alpha.data();
        let mut label_map = vec![others; h * w];
        let mut inst_map = vec![-1.0f32; h * w];
        for p in 0..h * w {
            if alpha[p] >= 0.5 && dom[p] >= 0 {
                let g = dom[p] as usize;
                label_map[p] = classes[g] as f32;
                inst_map[p] = instances[g] as f32;
            }
        }
        let depth = out.depth.data().iter().zip(alpha).map(|(&z, &a)| if a > 1e-6 { z / a } else { 0.0 }).collect();
        let masks = mask_sets(&label_map, &inst_map, h, w, cfg.n_instances)?;
        let image = quantize(&out.color);
        views.push(SceneView {
            name: format!("view_{idx:03}"),
            split,
            camera,
            match_features: Some(color_features(&image, MATCH_DARK)?),
            image,
            seg_target: Some(out.feat_seg),
            lang_target: Some(out.feat_lang),
            depth: Some(Tensor::new(vec![h, w], depth)?),
            labels: Some(Tensor::new(vec![h, w], label_map)?),
            instances: Some(Tensor::new(vec![h, w], inst_map)?),
            masks: Some(masks),
        });
    }

    let manifest = SceneManifest {
        version: 1,
        near: 1.0,
        far: 4.0,
        latent_dim: d,
        seg_dim: cfg.seg_dim,
        lang_dim: cfg.lang_dim,
        labels: Some("labels.toml".into()),
        costvolume: cfg.costvolume,
        views: views.iter().map(view_record).collect(),
    };
    Ok(SynthScene { scene: Scene { manifest, views, labels: Some(labels.clone()) }, field, labels, classes, instances })
}

/// Small (instance), medium (class) and large (foreground) mask stacks.
fn mask_sets(labels: &[f32], inst: &[f32], h: usize, w: usize, n_instances: usize) -> Result<[Tensor<f32>; 3]> {
    let stack = |ids: &[i64]| -> Result<Tensor<f32>> {
        let mut data = Vec::new();
        let mut k = 0;
        let mut present: Vec<i64> = ids.iter().copied().filter(|&v| v >= 0).collect();
        present.sort_unstable();
        present.dedup();
        for id in present {
            data.extend(ids.iter().map(|&v| if v == id { 1.0 } else { 0.0 }));
            k += 1;
        }
        Tensor::new(vec![k, h, w], data)
    };
    let small: Vec<i64> = inst.iter().map(|&v| v as i64).collect();
    let medium: Vec<i64> = labels.iter().zip(inst).map(|(&l, &i)| if i >= 0.0 { l as i64 } else { -1 }).collect();
    let large: Vec<i64> = inst.iter().map(|&i| if i >= 0.0 { 0 } else { -1 }).collect();
    debug_assert!(small.iter().all(|&v| v < n_instances as i64));
    Ok([stack(&small)?, stack(&medium)?, stack(&large)?])
}

fn view_record(v: &SceneView) -> ViewRecord {
    let (intrinsics, rotation, translation) = record_camera_fields(&v.camera);
    let n = &v.name;
    ViewRecord {
        name: n.clone(),
        split: v.split,
        image: format!("images/{n}.png"),
        width: v.camera.width,
        height: v.camera.height,
        intrinsics,
        rotation,
        translation,
        seg_features: v.seg_target.as_ref().map(|_| format!("features/{n}_seg.sspt")),
        lang_features: v.lang_target.as_ref().map(|_| format!("features/{n}_lang.sspt")),
        match_features: v.match_features.as_ref().map(|_| format!("features/{n}_match.sspt")),
        depth: v.depth.as_ref().map(|_| format!("depth/{n}.sspt")),
        labels: v.labels.as_ref().map(|_| format!("labels/{n}_class.sspt")),
        instances: v.instances.as_ref().map(|_| format!("labels/{n}_inst.sspt")),
        masks: v.masks.as_ref().map(|_| ["s", "m", "l"].map(|s| format!("masks/{n}_{s}.sspt"))),
    }
}

impl SynthScene {
    /// Writes the scene as a loadable directory, plus the oracle field as
    /// `field.sspt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_scene(&self.scene, dir.as_ref())?;
        self.field.save(dir.as_ref().join("field.sspt"))
    }
}

/// Writes a scene under `dir` following its manifest's relative paths.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<()> {
    for sub in ["images", "features", "depth", "labels", "masks"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    for (rec, v) in scene.manifest.views.iter().zip(&scene.views) {
        write_image(&v.image, dir.join(&rec.image))?;
        let pairs = [
            (&rec.seg_features, &v.seg_target),
            (&rec.lang_features, &v.lang_target),
            (&rec.match_features, &v.match_features),
            (&rec.depth, &v.depth),
            (&rec.labels, &v.labels),
            (&rec.instances, &v.instances),
        ];
        for (path, t) in pairs {
            if let (Some(p), Some(t)) = (path, t) {
                write_tensor(t, dir.join(p))?;
            }
        }
        if let (Some(paths), Some(masks)) = (&rec.masks, &v.masks) {
            for (p, m) in paths.iter().zip(masks) {
                write_tensor(m, dir.join(p))?;
            }
        }
    }
    if let (Some(p), Some(ls)) = (&scene.manifest.labels, &scene.labels) {
        ls.save(dir.join(p))?;
    }
    std::fs::write(dir.join(MANIFEST_FILE), scene.manifest.to_toml()?)?;
    Ok(())
}

/// Two views of a textured fronto-parallel plane.
#[derive(Debug, Clone)]
pub struct PlaneScene {
    pub cameras: Vec<CameraView>,
    pub images: Vec<Tensor<f32>>,
    /// Plane depth in the first view.
    pub depth: f64,
}

/// Renders a plane at view-0 depth `depth` textured with smooth value
/// noise, seen by two cameras separated by `baseline` along x.
pub fn textured_plane(size: usize, focal: f64, baseline: f64, depth: f64, near: f64, far: f64, seed: u64) -> Result<PlaneScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = 96usize;
    let grid: Vec<f32> = (0..cells * cells).map(|_| rng.random()).collect();
    // texture spans a square wide enough for both frusta
    let extent = 2.0 * depth * size as f64 / focal + 2.0 * baseline;
    let tex = |x: f64, y: f64| -> f32 {
        let gx = ((x / extent + 0.5) * (cells - 1) as f64).clamp(0.0, (cells - 1) as f64 - 1e-9);
        let gy = ((y / extent + 0.5) * (cells - 1) as f64).clamp(0.0, (cells - 1) as f64 - 1e-9);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (tx, ty) = ((gx - x0 as f64) as f32, (gy - y0 as f64) as f32);
        let g = |i: usize, j: usize| grid[j * cells + i];
        let top = g(x0, y0) + (g(x0 + 1, y0) - g(x0, y0)) * tx;
        let bot = g(x0, y0 + 1) + (g(x0 + 1, y0 + 1) - g(x0, y0 + 1)) * tx;
        top + (bot - top) * ty
    };
    let c = size as f64 / 2.0;
    let k = [[focal, 0.0, c], [0.0, focal, c], [0.0, 0.0, 1.0]];
    let i3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let cameras = vec![
        CameraView::new(k, i3, [0.0; 3], near, far, size, size)?,
        CameraView::new(k, i3, [-baseline, 0.0, 0.0], near, far, size, size)?,
    ];
    let images = cameras
        .iter()
        .map(|cam| {
            Tensor::from_fn(&[size, size, 3], |i| {
                let p = i / 3;
                let world = cam.unproject_point((p % size) as f64 + 0.5, (p / size) as f64 + 0.5, depth);
                tex(world[0], world[1])
            })
        })
        .collect();
    Ok(PlaneScene { cameras, images, depth })
}
