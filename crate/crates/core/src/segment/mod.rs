//! Promptable and open-vocabulary segmentation over rendered feature maps,
//! image and segmentation metrics, and PCA feature visualization.

mod labels;
mod metrics;
mod pca;
mod prompt;

pub use labels::{LabelSet, DEFAULT_LABELS};
pub use metrics::{miou_macc, psnr, ssim, PSNR_CAP};
pub use pca::{pca_basis, pca_project, PcaBasis};
pub use prompt::{
    grid_points, prompt_grid_eval, prompt_segment, similarity_map, GridEval, PromptMasks, DEFAULT_THRESHOLDS,
};

use crate::{Error, Real, Result, Tensor};

/// Per-pixel label indices with their confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// `[H,W]` label indices stored as floats.
    pub labels: Tensor<f32>,
    /// `[H,W]` softmax probability of the chosen label.
    pub confidence: Tensor<f32>,
}

impl SegmentationResult {
    pub fn label_at(&self, y: usize, x: usize) -> usize {
        self.labels.data()[y * self.labels.dims()[1] + x] as usize
    }
}

#[inline]
pub(crate) fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Assigns every pixel the label whose embedding has the highest cosine
/// similarity with the pixel's language feature. Ties go to the lowest
/// index; zero-norm pixels get the "Others" label with zero confidence.
pub fn open_vocab_segment<T: Real>(feat_lang: &Tensor<T>, labels: &LabelSet) -> Result<SegmentationResult> {
    let (h, w, c) = feat_lang.hwc()?;
    if c != labels.dim() {
        return Err(Error::shape(format!("features have {c} channels, label embeddings {}", labels.dim())));
    }
    let emb: Vec<Vec<f64>> = (0..labels.len())
        .map(|k| {
            let e = labels.embedding(k);
            let n = norm(e) as f64;
            e.iter().map(|&v| v as f64 / n).collect()
        })
        .collect();
    let others = labels.others_index() as f32;
    let mut out = Vec::with_capacity(h * w);
    let mut conf = Vec::with_capacity(h * w);
    let mut sims = vec![0.0f64; labels.len()];
    for px in feat_lang.data().chunks_exact(c) {
        let p: Vec<f64> = px.iter().map(|v| v.to_f64_lossy()).collect();
        let n = norm(&p);
        if !(n > 1e-12) {
            out.push(others);
            conf.push(0.0);
            continue;
        }
        let mut best = 0;
        for (k, e) in emb.iter().enumerate() {
            sims[k] = dot(&p, e) / n;
            if sims[k] > sims[best] {
                best = k;
            }
        }
        let z: f64 = sims.iter().map(|s| (s - sims[best]).exp()).sum();
        out.push(best as f32);
        conf.push((1.0 / z) as f32);
    }
    Ok(SegmentationResult { labels: Tensor::new(vec![h, w], out)?, confidence: Tensor::new(vec![h, w], conf)? })
}
