//! Adam with cosine decay, cost-volume initialization and the two-stage
//! fitting loop.

mod fit;
mod init;

pub use fit::{fit, write_history_csv, FitConfig, FitResult, GroupLr, HistoryRow};
pub use init::{init_from_costvolume, training_cost_volumes, InitConfig};

use crate::scene::{GaussianField, ParamGroup};
use crate::{Error, Real, Result};

/// `base · ½(1 + cos(π·step/total))`, zero from `total` on.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments, step counter and schedule for one fitting stage.
#[derive(Debug, Clone)]
pub struct OptimState<T = f32> {
    pub m: GaussianField<T>,
    pub v: GaussianField<T>,
    pub step: usize,
    pub total_steps: usize,
    /// Peak learning rate per parameter group, in [`ParamGroup::ALL`] order.
    pub lrs: [f64; 10],
    /// Groups that receive updates; the rest stay bitwise unchanged.
    pub active: [bool; 10],
    pub stage: u8,
    pub adam: AdamParams,
}

impl<T: Real> OptimState<T> {
    pub fn new(field: &GaussianField<T>, lrs: [f64; 10], active: [bool; 10], total_steps: usize, stage: u8, adam: AdamParams) -> Self {
        OptimState { m: field.zeros_like(), v: field.zeros_like(), step: 0, total_steps, lrs, active, stage, adam }
    }

    /// Drops the moments of Gaussians removed by [`GaussianField::retain`].
    pub fn retain(&mut self, keep: &[bool]) -> Result<()> {
        self.m.retain(keep)?;
        self.v.retain(keep)
    }

    /// Zeroes both moments of one group.
    pub fn reset_group(&mut self, g: ParamGroup) {
        self.m.group_mut(g).iter_mut().for_each(|v| *v = T::zero());
        self.v.group_mut(g).iter_mut().for_each(|v| *v = T::zero());
    }

    /// Schedule multiplier in `[0, 1]` for the current step.
    pub fn schedule(&self) -> f64 {
        cosine_lr(1.0, self.step, self.total_steps)
    }
}

/// One bias-corrected Adam update of every active group.
pub fn adam_step<T: Real>(params: &mut GaussianField<T>, grads: &GaussianField<T>, state: &mut OptimState<T>) -> Result<()> {
    for (gi, g) in ParamGroup::ALL.into_iter().enumerate() {
        if !state.active[gi] {
            continue;
        }
        let gr = grads.group(g);
        if gr.len() != params.group(g).len() {
            return Err(Error::shape(format!("{} gradient has {} values, parameters {}", g.name(), gr.len(), params.group(g).len())));
        }
        if let Some(i) = gr.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: g.name(), index: i });
        }
    }
    let t = (state.step + 1) as i32;
    let a = state.adam;
    let (b1, b2) = (T::lit(a.beta1), T::lit(a.beta2));
    let c1 = 1.0 - a.beta1.powi(t);
    let c2 = 1.0 - a.beta2.powi(t);
    let sched = state.schedule();
    for (gi, g) in ParamGroup::ALL.into_iter().enumerate() {
        if !state.active[gi] {
            continue;
        }
        let lr = T::lit(state.lrs[gi] * sched / c1);
        let inv_c2 = T::lit(1.0 / c2);
        let eps = T::lit(a.eps);
        let gr = grads.group(g);
        let m = state.m.group_mut(g);
        let v = state.v.group_mut(g);
        let p = params.group_mut(g);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * gr[i];
            v[i] = b2 * v[i] + (T::one() - b2) * gr[i] * gr[i];
            p[i] -= lr * m[i] / ((v[i] * inv_c2).sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}
