use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costvolume::{build_cost_volume, depth_candidates, fuse_conditions, patch_features, regress_depth, CostVolume};
use crate::real::logit;
use crate::scene::{Gaussian, GaussianField, LinearHead, Scene};
use crate::tensor::resample_bilinear;
use crate::{Error, Exec, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Pixel stride of the Gaussian subsample at image resolution.
    pub stride: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { stride: 2, seed: 0, exec: Exec::default() }
    }
}

fn seeded_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..rows * cols).map(|_| (Distribution::<f64>::sample(&StandardNormal, rng) * scale) as f32).collect()
}

/// Cost volumes of the training views at the manifest's downsample factor.
pub fn training_cost_volumes(scene: &Scene, exec: Exec) -> Result<Vec<CostVolume>> {
    let m = &scene.manifest;
    let s = m.costvolume.downsample;
    let views: Vec<_> = scene.training_views().collect();
    let cams: Vec<_> = views.iter().map(|v| v.camera.downsampled(s)).collect();
    let feats: Vec<Tensor<f32>> = views
        .iter()
        .zip(&cams)
        .map(|(v, c)| match &v.match_features {
            Some(f) => resample_bilinear(f, c.height, c.width),
            None => patch_features(&v.image, c.height, c.width),
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<f32>> = feats.iter().collect();
    let cand = depth_candidates(m.near, m.far, m.costvolume.candidates)?;
    build_cost_volume(&refs, &cams, &cand, s, exec)
}

/// Seeds one Gaussian per strided pixel of every training view at the
/// depth regressed from its cost volume.
pub fn init_from_costvolume(scene: &Scene, cfg: &InitConfig) -> Result<GaussianField> {
    let m = &scene.manifest;
    if !(m.near > 0.0 && m.far > m.near) {
        return Err(Error::invalid(format!("degenerate depth range {}..{}", m.near, m.far)));
    }
    if cfg.stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let cvs = training_cost_volumes(scene, cfg.exec)?;
    let spacing = cvs[0].spacing();
    let d = m.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field = GaussianField::empty(d, m.seg_dim, m.lang_dim);
    field.seg_head = LinearHead {
        in_dim: d,
        out_dim: m.seg_dim,
        weight: seeded_matrix(d, m.seg_dim, 1.0 / (d as f64).sqrt(), &mut rng),
        bias: vec![0.0; m.seg_dim],
    };
    field.lang_head = LinearHead {
        in_dim: d,
        out_dim: m.lang_dim,
        weight: seeded_matrix(d, m.lang_dim, 1.0 / (d as f64).sqrt(), &mut rng),
        bias: vec![0.0; m.lang_dim],
    };
    let mut projection: Option<Vec<f32>> = None;
    for (view, cv) in scene.training_views().zip(&cvs) {
        let (h, w, _) = view.image.hwc()?;
        let depth = regress_depth(cv, m.costvolume.temperature)?;
        let depth = resample_bilinear(&depth, h, w)?;
        let conds: Vec<&Tensor<f32>> = [&view.seg_target, &view.lang_target].into_iter().flatten().collect();
        let fused = resample_bilinear(&fuse_conditions(cv, &conds)?, h, w)?;
        let cf = fused.dims()[2];
        let proj = projection.get_or_insert_with(|| seeded_matrix(cf, d, 1.0 / (cf as f64).sqrt(), &mut rng));
        let fx = view.camera.intrinsics[0][0];
        for y in (0..h).step_by(cfg.stride) {
            for x in (0..w).step_by(cfg.stride) {
                let z = depth.data()[y * w + x] as f64;
                let p = view.camera.unproject_point(x as f64 + 0.5, y as f64 + 0.5, z);
                let footprint = z * cfg.stride as f64 / fx;
                let ls = spacing.max(footprint).ln() as f32;
                let rgb = view.image.pixel(y, x);
                let cond = fused.pixel(y, x);
                let latent = (0..d).map(|k| cond.iter().enumerate().map(|(c, &v)| v * proj[c * d + k]).sum()).collect();
                field.push(Gaussian {
                    position: [p[0] as f32, p[1] as f32, p[2] as f32],
                    opacity_logit: 0.0,
                    log_scale: [ls; 3],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    color: std::array::from_fn(|k| logit(rgb[k].clamp(0.02, 0.98))),
                    latent,
                })?;
            }
        }
    }
    Ok(field)
}
