//! Training losses with analytic gradients with respect to rendered maps.

mod pool;
mod stage;

pub use pool::hierarchical_pool;
pub use stage::{prompt_mask_loss, stage1_loss, stage2_loss, LossConfig, StageLoss, Stage1Targets};

use crate::tensor::ensure_same_dims;
use crate::{Real, Result, Tensor};

/// Weight of the perceptual term in the photometric loss.
pub const LAMBDA1: f64 = 0.05;
/// Weight of the mask loss inside the stage-1 segmentation loss.
pub const LAMBDA_MASK: f64 = 0.2;
/// Dice weight relative to focal in the mask loss.
pub const DICE_WEIGHT: f64 = 1.0 / 20.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const DICE_EPS: f64 = 1.0;
pub const COSINE_EPS: f64 = 1e-8;
pub const PROB_CLAMP: f64 = 1e-7;

/// A scalar loss and its gradient with respect to the first input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T = f32> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// Externally supplied perceptual distance: returns the value and its
/// gradient with respect to the rendered image.
pub type PerceptualHook<T> = dyn Fn(&Tensor<T>, &Tensor<T>) -> (f64, Tensor<T>) + Sync;

/// Mean absolute error plus `λ1` times an optional perceptual term.
pub fn photometric_loss<T: Real>(
    rendered: &Tensor<T>,
    target: &Tensor<T>,
    lambda1: f64,
    hook: Option<&PerceptualHook<T>>,
) -> Result<LossValue<T>> {
    ensure_same_dims(rendered, target, "photometric")?;
    let n = T::lit(rendered.len().max(1) as f64);
    let mut sum = T::zero();
    let grad = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(&r, &t)| {
            let d = r - t;
            sum += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    let mut out = LossValue { value: (sum / n).to_f64_lossy(), grad: Tensor::new(rendered.dims().to_vec(), grad)? };
    if let Some(hook) = hook {
        let (v, g) = hook(rendered, target);
        ensure_same_dims(&g, rendered, "perceptual gradient")?;
        out.value += lambda1 * v;
        let l = T::lit(lambda1);
        out.grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += l * b);
    }
    Ok(out)
}

/// Cosine distillation loss. Pixels whose target has zero norm are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss<T = f32> {
    pub value: f64,
    pub grad: Tensor<T>,
    pub skipped: usize,
}

/// Mean over pixels of `1 − cos(pred, target)`.
pub fn cosine_distill_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<CosineLoss<T>> {
    ensure_same_dims(pred, target, "cosine distillation")?;
    let (_, _, c) = pred.hwc()?;
    let eps = T::lit(COSINE_EPS);
    let mut grad = vec![T::zero(); pred.len()];
    let (mut sum, mut count, mut skipped) = (T::zero(), 0usize, 0usize);
    for ((p, t), g) in pred.data().chunks_exact(c).zip(target.data().chunks_exact(c)).zip(grad.chunks_exact_mut(c)) {
        let tn = crate::segment::norm(t);
        if !(tn > T::zero()) {
            skipped += 1;
            continue;
        }
        let pn = crate::segment::norm(p);
        let dp: T = p.iter().zip(t).map(|(&a, &b)| a * b).sum::<T>() / tn;
        count += 1;
        if pn >= eps {
            let cos = dp / pn;
            sum += T::one() - cos;
            for k in 0..c {
                g[k] = -(t[k] / tn - cos * p[k] / pn) / pn;
            }
        } else {
            sum += T::one() - dp / eps;
            for k in 0..c {
                g[k] = -t[k] / (tn * eps);
            }
        }
    }
    let n = T::lit(count.max(1) as f64);
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(CosineLoss { value: (sum / n).to_f64_lossy(), grad: Tensor::new(pred.dims().to_vec(), grad)?, skipped })
}

/// Mean focal loss of probabilities `p` against binary labels `y`.
pub fn focal_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>, alpha: f64, gamma: f64) -> Result<LossValue<T>> {
    ensure_same_dims(p, y, "focal")?;
    let (lo, hi) = (T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP));
    let (a, g) = (T::lit(alpha), T::lit(gamma));
    let n = T::lit(p.len().max(1) as f64);
    let half = T::lit(0.5);
    let mut sum = T::zero();
    let grad = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pv, &yv)| {
            let pc = pv.max(lo).min(hi);
            let pos = yv >= half;
            let (pt, at) = if pos { (pc, a) } else { (T::one() - pc, T::one() - a) };
            let q = T::one() - pt;
            sum += -at * q.powf(g) * pt.ln();
            // d/dpt of −α(1−pt)^γ log pt
            let dpt = at * (g * q.powf(g - T::one()) * pt.ln() - q.powf(g) / pt);
            let inside = pv > lo && pv < hi;
            let d = if !inside {
                T::zero()
            } else if pos {
                dpt
            } else {
                -dpt
            };
            d / n
        })
        .collect();
    Ok(LossValue { value: (sum / n).to_f64_lossy(), grad: Tensor::new(p.dims().to_vec(), grad)? })
}

/// Soft dice loss `1 − (2Σxy + ε)/(Σx + Σy + ε)`.
pub fn dice_loss<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<LossValue<T>> {
    ensure_same_dims(x, y, "dice")?;
    let eps = T::lit(DICE_EPS);
    let (mut inter, mut sx, mut sy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.data().iter().zip(y.data()) {
        inter += a * b;
        sx += a;
        sy += b;
    }
    let num = T::lit(2.0) * inter + eps;
    let den = sx + sy + eps;
    let grad = y.data().iter().map(|&b| -(T::lit(2.0) * b * den - num) / (den * den)).collect();
    Ok(LossValue { value: (T::one() - num / den).to_f64_lossy(), grad: Tensor::new(x.dims().to_vec(), grad)? })
}

/// Focal plus dice-weighted-by-1/20 loss, with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLoss<T = f32> {
    pub value: f64,
    pub focal: f64,
    pub dice: f64,
    pub grad: Tensor<T>,
}

pub fn mask_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>, alpha: f64, gamma: f64) -> Result<MaskLoss<T>> {
    let f = focal_loss(p, y, alpha, gamma)?;
    let d = dice_loss(p, y)?;
    let w = T::lit(DICE_WEIGHT);
    let mut grad = f.grad;
    grad.data_mut().iter_mut().zip(d.grad.data()).for_each(|(a, &b)| *a += w * b);
    Ok(MaskLoss { value: combine_mask(f.value, d.value), focal: f.value, dice: d.value, grad })
}

/// Mask loss from its focal and dice components.
pub fn combine_mask(focal: f64, dice: f64) -> f64 {
    focal + DICE_WEIGHT * dice
}

#[cfg(test)]
mod tests;
