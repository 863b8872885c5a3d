//! Scene manifests.
//!
//! A scene directory holds `scene.toml` plus the files it references, all
//! paths relative to the manifest:
//!
//! ```toml
//! version = 1
//! near = 1.0
//! far = 4.0
//! latent_dim = 32
//! seg_dim = 32
//! lang_dim = 32
//! labels = "labels.toml"          # optional label set
//!
//! [costvolume]                    # optional, defaults shown
//! downsample = 4
//! candidates = 64
//! temperature = 0.02
//!
//! [[views]]
//! name = "view_000"
//! split = "train"                 # or "heldout"
//! image = "images/view_000.png"
//! width = 64
//! height = 64
//! intrinsics = [fx, s, cx, 0, fy, cy, 0, 0, 1]
//! rotation = [9 values, row-major, world to camera]
//! translation = [tx, ty, tz]
//! seg_features = "features/seg_000.sspt"    # optional [H',W',d_S]
//! lang_features = "features/lang_000.sspt"  # optional [H',W',d_L]
//! match_features = "features/match_000.sspt"# optional [h,w,C] for plane sweep
//! depth = "depth/view_000.sspt"             # optional [H,W]
//! labels = "labels/class_000.sspt"          # optional [H,W] class ids
//! instances = "labels/inst_000.sspt"        # optional [H,W] ids, -1 = none
//! masks = ["m/s.sspt", "m/m.sspt", "m/l.sspt"]  # optional [K,H,W] per scale
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CameraView;
use crate::segment::LabelSet;
use crate::tensor::{read_image, read_tensor, resample_bilinear};
use crate::{Error, Result, Tensor};

pub const MANIFEST_FILE: &str = "scene.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Heldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostVolumeSettings {
    pub downsample: usize,
    pub candidates: usize,
    pub temperature: f64,
}

impl Default for CostVolumeSettings {
    fn default() -> Self {
        CostVolumeSettings { downsample: 4, candidates: 64, temperature: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub name: String,
    #[serde(default)]
    pub split: Split,
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang_features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub near: f64,
    pub far: f64,
    pub latent_dim: usize,
    pub seg_dim: usize,
    pub lang_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default)]
    pub costvolume: CostVolumeSettings,
    pub views: Vec<ViewRecord>,
}

impl SceneManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }
}

/// One view with its supervision loaded.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub name: String,
    pub split: Split,
    pub camera: CameraView,
    pub image: Tensor<f32>,
    /// Segmentation feature target, resampled to image resolution.
    pub seg_target: Option<Tensor<f32>>,
    /// Language feature target, resampled to image resolution.
    pub lang_target: Option<Tensor<f32>>,
    pub match_features: Option<Tensor<f32>>,
    pub depth: Option<Tensor<f32>>,
    pub labels: Option<Tensor<f32>>,
    pub instances: Option<Tensor<f32>>,
    /// Small, medium and large mask sets, each `[K,H,W]`.
    pub masks: Option<[Tensor<f32>; 3]>,
}

/// A loaded scene: the manifest plus every tensor it references.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    pub views: Vec<SceneView>,
    pub labels: Option<LabelSet>,
}

impl Scene {
    pub fn training_views(&self) -> impl Iterator<Item = &SceneView> {
        self.views.iter().filter(|v| v.split == Split::Train)
    }

    pub fn heldout_views(&self) -> impl Iterator<Item = &SceneView> {
        self.views.iter().filter(|v| v.split == Split::Heldout)
    }

    pub fn has_seg_targets(&self) -> bool {
        self.training_views().all(|v| v.seg_target.is_some())
    }

    pub fn has_lang_targets(&self) -> bool {
        self.training_views().all(|v| v.lang_target.is_some())
    }
}

pub(crate) fn camera_from_record(rec: &ViewRecord, near: f64, far: f64) -> Result<CameraView> {
    let k = &rec.intrinsics;
    let r = &rec.rotation;
    CameraView::new(
        [[k[0], k[1], k[2]], [k[3], k[4], k[5]], [k[6], k[7], k[8]]],
        [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        rec.translation,
        near,
        far,
        rec.width,
        rec.height,
    )
    .map_err(|e| Error::InvalidCamera(format!("view {}: {e}", rec.name)))
}

pub(crate) fn record_camera_fields(cam: &CameraView) -> ([f64; 9], [f64; 9], [f64; 3]) {
    let k = &cam.intrinsics;
    let r = &cam.rotation;
    (
        [k[0][0], k[0][1], k[0][2], k[1][0], k[1][1], k[1][2], k[2][0], k[2][1], k[2][2]],
        [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
        cam.translation,
    )
}

fn resolve(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = root.join(rel);
    if !p.exists() {
        return Err(Error::MissingFile(p));
    }
    Ok(p)
}

fn load_feature(root: &Path, rel: &str, dim: usize, h: usize, w: usize, what: &str) -> Result<Tensor<f32>> {
    let t: Tensor<f32> = read_tensor(resolve(root, rel)?)?;
    let (fh, fw, c) = match t.dims() {
        &[a, b, c] => (a, b, c),
        d => return Err(Error::shape(format!("{what} {rel}: expected [H,W,C], got {d:?}"))),
    };
    if c != dim {
        return Err(Error::shape(format!("{what} {rel}: last dim {c}, manifest declares {dim}")));
    }
    if (fh, fw) == (h, w) {
        Ok(t)
    } else {
        resample_bilinear(&t, h, w)
    }
}

fn load_map(root: &Path, rel: &str, h: usize, w: usize, what: &str) -> Result<Tensor<f32>> {
    let t: Tensor<f32> = read_tensor(resolve(root, rel)?)?;
    if t.dims() != [h, w] {
        return Err(Error::shape(format!("{what} {rel}: expected [{h},{w}], got {:?}", t.dims())));
    }
    Ok(t)
}

/// Loads a manifest file, or `scene.toml` inside a directory.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Error::MissingFile(file));
    }
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = SceneManifest::from_toml(&std::fs::read_to_string(&file)?)?;
    if manifest.version != 1 {
        return Err(Error::Manifest(format!("unsupported manifest version {}", manifest.version)));
    }
    if !(manifest.near > 0.0 && manifest.near < manifest.far) {
        return Err(Error::Manifest(format!("invalid depth range {}..{}", manifest.near, manifest.far)));
    }
    let cv = &manifest.costvolume;
    if cv.downsample == 0 || cv.candidates < 2 || !(cv.temperature > 0.0) {
        return Err(Error::Manifest("invalid costvolume settings".into()));
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for rec in &manifest.views {
        let camera = camera_from_record(rec, manifest.near, manifest.far)?;
        let image: Tensor<f32> = read_image(resolve(&root, &rec.image)?)?;
        let (h, w, _) = image.hwc()?;
        if (w, h) != (rec.width, rec.height) {
            return Err(Error::shape(format!(
                "view {}: image is {w}x{h}, manifest says {}x{}",
                rec.name, rec.width, rec.height
            )));
        }
        let feat = |p: &Option<String>, dim, what| p.as_deref().map(|p| load_feature(&root, p, dim, h, w, what)).transpose();
        let map = |p: &Option<String>, what| p.as_deref().map(|p| load_map(&root, p, h, w, what)).transpose();
        let match_features = match &rec.match_features {
            Some(p) => Some(read_tensor::<f32>(resolve(&root, p)?)?),
            None => None,
        };
        let masks = match &rec.masks {
            Some(paths) => {
                let mut sets = Vec::with_capacity(3);
                for p in paths {
                    let t: Tensor<f32> = read_tensor(resolve(&root, p)?)?;
                    if t.ndim() != 3 || t.dims()[1..] != [h, w] {
                        return Err(Error::shape(format!("mask set {p}: expected [K,{h},{w}], got {:?}", t.dims())));
                    }
                    sets.push(t);
                }
                let l = sets.pop().unwrap();
                let m = sets.pop().unwrap();
                let s = sets.pop().unwrap();
                Some([s, m, l])
            }
            None => None,
        };
        views.push(SceneView {
            name: rec.name.clone(),
            split: rec.split,
            camera,
            image,
            seg_target: feat(&rec.seg_features, manifest.seg_dim, "seg_features")?,
            lang_target: feat(&rec.lang_features, manifest.lang_dim, "lang_features")?,
            match_features,
            depth: map(&rec.depth, "depth")?,
            labels: map(&rec.labels, "labels")?,
            instances: map(&rec.instances, "instances")?,
            masks,
        });
    }
    let labels = match &manifest.labels {
        Some(p) => Some(LabelSet::load(resolve(&root, p)?)?),
        None => None,
    };
    if let Some(ls) = &labels {
        if ls.dim() != manifest.lang_dim {
            return Err(Error::shape(format!("label embeddings have {} dims, lang_dim is {}", ls.dim(), manifest.lang_dim)));
        }
    }
    Ok(Scene { manifest, views, labels })
}
