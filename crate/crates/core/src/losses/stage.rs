use serde::{Deserialize, Serialize};

use super::{cosine_distill_loss, mask_loss, photometric_loss, PerceptualHook, COSINE_EPS, FOCAL_ALPHA, FOCAL_GAMMA, LAMBDA1, LAMBDA_MASK};
use crate::render::{RenderGrads, RenderOutput};
use crate::segment::{norm, DEFAULT_THRESHOLDS};
use crate::tensor::ensure_same_dims;
use crate::{Error, Real, Result, Tensor};

/// Loss weights and constants for both fitting stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub photometric_weight: f64,
    pub sam_weight: f64,
    pub clip_weight: f64,
    pub lambda1: f64,
    pub lambda_mask: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Similarity thresholds of the three prompt mask levels.
    pub prompt_thresholds: [f64; 3],
    /// Width of the sigmoid that turns similarity into a soft mask.
    pub prompt_sharpness: f64,
    /// Distill language features against mask-pooled targets.
    pub pooled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            photometric_weight: 1.0,
            sam_weight: 1.0,
            clip_weight: 1.0,
            lambda1: LAMBDA1,
            lambda_mask: LAMBDA_MASK,
            focal_alpha: FOCAL_ALPHA,
            focal_gamma: FOCAL_GAMMA,
            prompt_thresholds: DEFAULT_THRESHOLDS,
            prompt_sharpness: 0.05,
            pooled: false,
        }
    }
}

/// Total loss of one view, its named terms and the gradients on the
/// rendered maps.
#[derive(Debug, Clone)]
pub struct StageLoss<T = f32> {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
    pub grads: RenderGrads<T>,
    /// Target pixels skipped for zero norm.
    pub skipped: usize,
}

impl<T> StageLoss<T> {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.0 == name).map(|t| t.1)
    }
}

pub struct Stage1Targets<'a, T = f32> {
    pub image: &'a Tensor<T>,
    pub seg: &'a Tensor<T>,
    /// Per scale `[K,H,W]` binary masks.
    pub masks: Option<[&'a Tensor<T>; 3]>,
    /// Prompt pixels `(y, x)`.
    pub prompts: &'a [(usize, usize)],
}

/// Prompt-driven mask loss on a feature map: each prompt turns feature
/// similarity into three soft masks, one per threshold, each scored
/// against the mask of that scale containing the prompt. Returns the mean
/// over scored (prompt, scale) pairs, the gradient on `feat`, and the count.
pub fn prompt_mask_loss<T: Real>(
    feat: &Tensor<T>,
    masks: [&Tensor<T>; 3],
    prompts: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<(f64, Tensor<T>, usize)> {
    let (h, w, c) = feat.hwc()?;
    let hw = h * w;
    for m in &masks {
        let d = m.dims();
        if d.len() != 3 || d[1] != h || d[2] != w {
            return Err(Error::shape(format!("prompt masks {d:?} do not match features {h}x{w}")));
        }
    }
    let eps = T::lit(COSINE_EPS);
    let kappa = T::lit(cfg.prompt_sharpness);
    let half = T::lit(0.5);
    let fd = feat.data();
    let norms: Vec<T> = fd.chunks_exact(c).map(|p| norm(p).max(eps)).collect();
    let mut grad = vec![T::zero(); fd.len()];
    let (mut total, mut pairs) = (0.0f64, 0usize);
    for &(qy, qx) in prompts {
        if qy >= h || qx >= w {
            return Err(Error::invalid(format!("prompt ({qx}, {qy}) outside {w}x{h}")));
        }
        let q = qy * w + qx;
        let fq = &fd[q * c..(q + 1) * c];
        let nq = norms[q];
        let cos: Vec<T> = fd
            .chunks_exact(c)
            .zip(&norms)
            .map(|(p, &np)| p.iter().zip(fq).map(|(&a, &b)| a * b).sum::<T>() / (np * nq))
            .collect();
        for (level, m) in masks.iter().enumerate() {
            let Some(target) = m.data().chunks_exact(hw).find(|mk| mk[q] >= half) else { continue };
            let theta = T::lit(cfg.prompt_thresholds[level]);
            let soft: Vec<T> = cos.iter().map(|&s| crate::real::sigmoid((s - theta) / kappa)).collect();
            let soft = Tensor::new(vec![h, w], soft)?;
            let target = Tensor::new(vec![h, w], target.to_vec())?;
            let ml = mask_loss(&soft, &target, cfg.focal_alpha, cfg.focal_gamma)?;
            total += ml.value;
            pairs += 1;
            // back through sigmoid and cosine into both the pixel and the prompt feature
            let mut dq = vec![T::zero(); c];
            for p in 0..hw {
                let s = soft.data()[p];
                let dcos = ml.grad.data()[p] * s * (T::one() - s) / kappa;
                if dcos == T::zero() {
                    continue;
                }
                let fp = &fd[p * c..(p + 1) * c];
                let np = norms[p];
                let cs = cos[p];
                let g = &mut grad[p * c..(p + 1) * c];
                for k in 0..c {
                    g[k] += dcos * (fq[k] / (np * nq) - cs * fp[k] / (np * np));
                    dq[k] += dcos * (fp[k] / (np * nq) - cs * fq[k] / (nq * nq));
                }
            }
            grad[q * c..(q + 1) * c].iter_mut().zip(&dq).for_each(|(a, &b)| *a += b);
        }
    }
    if pairs > 0 {
        let n = T::lit(pairs as f64);
        grad.iter_mut().for_each(|g| *g /= n);
        total /= pairs as f64;
    }
    Ok((total, Tensor::new(feat.dims().to_vec(), grad)?, pairs))
}

/// Photometric plus segmentation distillation loss, and the prompt mask
/// loss when masks and prompts are supplied.
pub fn stage1_loss<T: Real>(
    render: &RenderOutput<T>,
    targets: &Stage1Targets<T>,
    cfg: &LossConfig,
    hook: Option<&PerceptualHook<T>>,
) -> Result<StageLoss<T>> {
    let photo = photometric_loss(&render.color, targets.image, cfg.lambda1, hook)?;
    ensure_same_dims(&render.feat_seg, targets.seg, "segmentation features")?;
    let dist = cosine_distill_loss(&render.feat_seg, targets.seg)?;
    let mut seg_grad = dist.grad;
    let mut sam = dist.value;
    let mut terms = vec![("photometric", photo.value), ("seg_distill", dist.value)];
    if let (Some(masks), false) = (targets.masks, targets.prompts.is_empty()) {
        let (v, g, _) = prompt_mask_loss(&render.feat_seg, masks, targets.prompts, cfg)?;
        let lm = T::lit(cfg.lambda_mask);
        seg_grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += lm * b);
        sam += cfg.lambda_mask * v;
        terms.push(("seg_mask", v));
    }
    let (wp, ws) = (T::lit(cfg.photometric_weight), T::lit(cfg.sam_weight));
    let color = photo.grad.map(|g| g * wp);
    let seg = seg_grad.map(|g| g * ws);
    Ok(StageLoss {
        total: cfg.photometric_weight * photo.value + cfg.sam_weight * sam,
        terms,
        grads: RenderGrads { color: Some(color), feat_seg: Some(seg), ..Default::default() },
        skipped: dist.skipped,
    })
}

/// Language distillation loss. With one target this is plain cosine
/// distillation; with several (the pooled targets per scale) it is their mean.
pub fn stage2_loss<T: Real>(render: &RenderOutput<T>, targets: &[&Tensor<T>], cfg: &LossConfig) -> Result<StageLoss<T>> {
    if targets.is_empty() {
        return Err(Error::invalid("stage 2 needs at least one language target"));
    }
    let mut grad = Tensor::zeros(render.feat_lang.dims());
    let (mut value, mut skipped) = (0.0, 0);
    let k = T::lit(cfg.clip_weight / targets.len() as f64);
    for t in targets {
        ensure_same_dims(&render.feat_lang, t, "language features")?;
        let l = cosine_distill_loss(&render.feat_lang, t)?;
        value += l.value / targets.len() as f64;
        skipped += l.skipped;
        grad.data_mut().iter_mut().zip(l.grad.data()).for_each(|(a, &b)| *a += k * b);
    }
    Ok(StageLoss {
        total: cfg.clip_weight * value,
        terms: vec![("lang_distill", value)],
        grads: RenderGrads { feat_lang: Some(grad), ..Default::default() },
        skipped,
    })
}
