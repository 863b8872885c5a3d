use super::{dot, norm};
use crate::{Error, Real, Result, Tensor};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.85, 0.7, 0.5];

/// Three nested binary masks answering a point prompt, smallest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMasks {
    pub height: usize,
    pub width: usize,
    pub masks: [Vec<bool>; 3],
    /// Mean cosine similarity to the query over each mask.
    pub confidence: [f64; 3],
}

impl PromptMasks {
    pub fn area(&self, level: usize) -> usize {
        self.masks[level].iter().filter(|&&m| m).count()
    }

    pub fn is_nested(&self) -> bool {
        (0..2).all(|h| self.masks[h].iter().zip(&self.masks[h + 1]).all(|(&a, &b)| !a || b))
    }
}

fn check_thresholds(t: &[f64; 3]) -> Result<()> {
    let in_range = t.iter().all(|v| *v > -1.0 && *v < 1.0);
    if !in_range || !(t[0] > t[1] && t[1] > t[2]) {
        return Err(Error::invalid(format!("thresholds must be strictly decreasing in (-1, 1), got {t:?}")));
    }
    Ok(())
}

/// Cosine similarity of every pixel to the feature at `(y, x)`.
pub fn similarity_map<T: Real>(feat: &Tensor<T>, y: usize, x: usize) -> Result<Vec<f64>> {
    let (h, w, c) = feat.hwc()?;
    if y >= h || x >= w {
        return Err(Error::invalid(format!("prompt ({x}, {y}) outside {w}x{h} image")));
    }
    let q = feat.pixel(y, x);
    let qn = norm(q);
    if !(qn > T::zero()) {
        return Err(Error::invalid(format!("feature at prompt ({x}, {y}) has zero norm")));
    }
    Ok(feat
        .data()
        .chunks_exact(c)
        .map(|p| {
            let n = norm(p);
            if n > T::zero() {
                (dot(p, q) / (n * qn)).to_f64_lossy()
            } else {
                0.0
            }
        })
        .collect())
}

/// Thresholds cosine similarity to the prompt pixel at three levels.
pub fn prompt_segment<T: Real>(feat_seg: &Tensor<T>, y: usize, x: usize, thresholds: [f64; 3]) -> Result<PromptMasks> {
    check_thresholds(&thresholds)?;
    let (h, w, _) = feat_seg.hwc()?;
    let sim = similarity_map(feat_seg, y, x)?;
    let masks: [Vec<bool>; 3] = std::array::from_fn(|k| sim.iter().map(|&s| s >= thresholds[k]).collect());
    let confidence = std::array::from_fn(|k| {
        let (sum, n) = sim.iter().zip(&masks[k]).filter(|(_, &m)| m).fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    });
    Ok(PromptMasks { height: h, width: w, masks, confidence })
}

/// `n × n` prompt grid at pixel centers of equal cells, returned as `(y, x)`.
pub fn grid_points(h: usize, w: usize, n: usize) -> Vec<(usize, usize)> {
    let coord = |i: usize, extent: usize| (((i as f64 + 0.5) * extent as f64 / n as f64).floor() as usize).min(extent - 1);
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            pts.push((coord(i, h), coord(j, w)));
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEval {
    pub miou: f64,
    pub macc: f64,
    /// Prompts that landed inside a GT mask and were scored.
    pub prompts: usize,
    /// Prompts outside every GT mask or on a zero-norm feature.
    pub skipped: usize,
    pub nested_ok: bool,
}

/// Grid-prompt protocol: each grid point in a GT instance is scored by the
/// best IoU (and best recall) over its three predicted masks.
///
/// `instances` holds `[H,W]` instance ids per view; negative ids mean no mask.
pub fn prompt_grid_eval<T: Real>(
    feats: &[&Tensor<T>],
    instances: &[&Tensor<f32>],
    grid: usize,
    thresholds: [f64; 3],
) -> Result<GridEval> {
    check_thresholds(&thresholds)?;
    if feats.len() != instances.len() {
        return Err(Error::shape(format!("{} feature maps but {} instance maps", feats.len(), instances.len())));
    }
    let (mut iou_sum, mut acc_sum, mut prompts, mut skipped, mut nested_ok) = (0.0, 0.0, 0usize, 0usize, true);
    for (feat, inst) in feats.iter().zip(instances) {
        let (h, w, _) = feat.hwc()?;
        if inst.dims() != [h, w] {
            return Err(Error::shape(format!("instance map {:?} does not match features {h}x{w}", inst.dims())));
        }
        let ids = inst.data();
        for (y, x) in grid_points(h, w, grid) {
            let id = ids[y * w + x];
            if id < 0.0 {
                skipped += 1;
                continue;
            }
            let pm = match prompt_segment(*feat, y, x, thresholds) {
                Ok(pm) => pm,
                Err(Error::InvalidArgument(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            nested_ok &= pm.is_nested();
            let gt_area = ids.iter().filter(|&&v| v == id).count();
            let (mut best_iou, mut best_acc) = (0.0f64, 0.0f64);
            for m in &pm.masks {
                let inter = m.iter().zip(ids).filter(|(&p, &g)| p && g == id).count();
                let union = gt_area + m.iter().filter(|&&p| p).count() - inter;
                best_iou = best_iou.max(inter as f64 / union as f64);
                best_acc = best_acc.max(inter as f64 / gt_area as f64);
            }
            iou_sum += best_iou;
            acc_sum += best_acc;
            prompts += 1;
        }
    }
    let denom = prompts.max(1) as f64;
    Ok(GridEval { miou: iou_sum / denom, macc: acc_sum / denom, prompts, skipped, nested_ok })
}
