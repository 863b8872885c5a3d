use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamParams, OptimState};
use crate::losses::{hierarchical_pool, stage1_loss, stage2_loss, LossConfig, Stage1Targets, StageLoss};
use crate::render::{render_backward, render_with, RenderOptions};
use crate::scene::{GaussianField, ParamGroup, Scene, SceneView};
use crate::real::logit;
use crate::{Error, Exec, Result, Tensor};

/// Learning rate of each parameter group as a multiple of the base rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupLr {
    pub positions: f64,
    pub opacity_logits: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub colors: f64,
    pub latents: f64,
    pub seg_head: f64,
    pub lang_head: f64,
}

impl Default for GroupLr {
    fn default() -> Self {
        GroupLr {
            positions: 5.0,
            opacity_logits: 250.0,
            log_scales: 50.0,
            rotations: 10.0,
            colors: 100.0,
            latents: 100.0,
            seg_head: 10.0,
            lang_head: 10.0,
        }
    }
}

impl GroupLr {
    fn table(&self, base: f64) -> [f64; 10] {
        let s = [
            self.positions,
            self.opacity_logits,
            self.log_scales,
            self.rotations,
            self.colors,
            self.latents,
            self.seg_head,
            self.seg_head,
            self.lang_head,
            self.lang_head,
        ];
        s.map(|k| k * base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub group_lr: GroupLr,
    pub loss: LossConfig,
    pub seed: u64,
    /// Record a history row every this many iterations (0 disables).
    pub log_every: usize,
    /// Also freeze the latents during stage 2.
    pub freeze_latent: bool,
    /// Random prompt pixels per view and iteration for the mask loss.
    pub prompts_per_view: usize,
    /// Stage 1 clamps every opacity down to `opacity_reset_value` at each
    /// multiple of this many iterations, up to half the stage (0 disables).
    pub opacity_reset_every: usize,
    pub opacity_reset_value: f64,
    /// Stage 1 removes Gaussians below `prune_opacity` every this many
    /// iterations (0 disables).
    pub prune_every: usize,
    pub prune_opacity: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            stage1_iterations: 2000,
            stage2_iterations: 2000,
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            group_lr: GroupLr::default(),
            loss: LossConfig::default(),
            seed: 0,
            log_every: 10,
            freeze_latent: false,
            prompts_per_view: 4,
            opacity_reset_every: 200,
            opacity_reset_value: 0.01,
            prune_every: 100,
            prune_opacity: 0.005,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub stage: u8,
    pub total: f64,
    pub photometric: f64,
    pub seg_distill: f64,
    pub seg_mask: f64,
    pub lang_distill: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub field: GaussianField,
    pub history: Vec<HistoryRow>,
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[HistoryRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,stage,total,photometric,seg_distill,seg_mask,lang_distill,lr")?;
    for r in history {
        writeln!(
            f,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.iteration, r.stage, r.total, r.photometric, r.seg_distill, r.seg_mask, r.lang_distill, r.lr
        )?;
    }
    f.flush()?;
    Ok(())
}

fn active(groups: &[ParamGroup]) -> [bool; 10] {
    ParamGroup::ALL.map(|g| groups.contains(&g))
}

fn sample_prompts(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    (0..n).map(|_| (rng.random_range(0..h), rng.random_range(0..w))).collect()
}

struct ViewStep {
    loss: StageLoss,
    grads: GaussianField,
}

fn mean_terms(steps: &[ViewStep]) -> (f64, [f64; 4]) {
    let n = steps.len() as f64;
    let mut total = 0.0;
    let mut t = [0.0; 4];
    for s in steps {
        total += s.loss.total / n;
        for (k, name) in ["photometric", "seg_distill", "seg_mask", "lang_distill"].into_iter().enumerate() {
            t[k] += s.loss.term(name).unwrap_or(0.0) / n;
        }
    }
    (total, t)
}

/// Sums per-view gradients in view order and averages them.
fn reduce(field: &GaussianField, steps: &[ViewStep]) -> GaussianField {
    let mut g = field.zeros_like();
    for s in steps {
        g.add_assign(&s.grads);
    }
    g.scale(1.0 / steps.len() as f32);
    g
}

/// Opacity reset and pruning between stage-1 steps.
fn maintain(field: &mut GaussianField, state: &mut OptimState, it: usize, iterations: usize, cfg: &FitConfig) -> Result<()> {
    if it == 0 {
        return Ok(());
    }
    if cfg.opacity_reset_every > 0 && it.is_multiple_of(cfg.opacity_reset_every) && 2 * it <= iterations {
        let cap = logit(cfg.opacity_reset_value as f32);
        field.opacity_logits.iter_mut().for_each(|v| *v = v.min(cap));
        state.reset_group(ParamGroup::OpacityLogits);
    }
    if cfg.prune_every > 0 && it.is_multiple_of(cfg.prune_every) {
        let keep: Vec<bool> = (0..field.len()).map(|i| f64::from(field.opacity(i)) >= cfg.prune_opacity).collect();
        if keep.iter().any(|&k| !k) {
            field.retain(&keep)?;
            state.retain(&keep)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_stage<F>(
    field: &mut GaussianField,
    stage: u8,
    iterations: usize,
    n_views: usize,
    groups: &[ParamGroup],
    cfg: &FitConfig,
    maintenance: bool,
    offset: usize,
    history: &mut Vec<HistoryRow>,
    step_view: F,
) -> Result<()>
where
    F: Fn(&GaussianField, usize, u64) -> Result<ViewStep> + Sync + Send,
{
    let adam = AdamParams { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let mut state = OptimState::new(field, cfg.group_lr.table(cfg.base_lr), active(groups), iterations, stage, adam);
    for it in 0..iterations {
        if maintenance {
            maintain(field, &mut state, it, iterations, cfg)?;
        }
        let f: &GaussianField = field;
        let diverged = |e| match e {
            Error::NonFinite { .. } => Error::Diverged { stage, iteration: it },
            e => e,
        };
        let steps = cfg
            .exec
            .map_range(n_views, |v| step_view(f, v, it as u64))
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(diverged)?;
        let (total, terms) = mean_terms(&steps);
        if !total.is_finite() {
            return Err(Error::Diverged { stage, iteration: it });
        }
        let lr = cfg.base_lr * state.schedule();
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == iterations) {
            history.push(HistoryRow {
                iteration: offset + it,
                stage,
                total,
                photometric: terms[0],
                seg_distill: terms[1],
                seg_mask: terms[2],
                lang_distill: terms[3],
                lr,
            });
        }
        let grads = reduce(field, &steps);
        adam_step(field, &grads, &mut state).map_err(diverged)?;
    }
    Ok(())
}

/// Two-stage fit: stage 1 fits geometry, color, latents and the
/// segmentation head to images and segmentation targets; stage 2 fits the
/// language head (and latents unless frozen) to language targets with
/// geometry and the segmentation head frozen.
pub fn fit(scene: &Scene, field: &GaussianField, cfg: &FitConfig) -> Result<FitResult> {
    let views: Vec<&SceneView> = scene.training_views().collect();
    if views.len() < 2 {
        return Err(Error::invalid(format!("fitting needs at least 2 training views, got {}", views.len())));
    }
    field.validate()?;
    let mut field = field.clone();
    let mut history = Vec::new();
    if cfg.stage1_iterations > 0 {
        if !scene.has_seg_targets() {
            return Err(Error::invalid("stage 1 needs segmentation targets for every training view"));
        }
        let opts = RenderOptions { seg: true, lang: false, track_dominant: false, exec: cfg.exec };
        let groups = [
            ParamGroup::Positions,
            ParamGroup::OpacityLogits,
            ParamGroup::LogScales,
            ParamGroup::Rotations,
            ParamGroup::Colors,
            ParamGroup::Latents,
            ParamGroup::SegWeight,
            ParamGroup::SegBias,
        ];
        let step_view = |f: &GaussianField, v: usize, it: u64| -> Result<ViewStep> {
            let view = views[v];
            let out = render_with(f, &view.camera, &opts)?;
            let (h, w) = (out.height(), out.width());
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (it << 16) ^ v as u64);
            let prompts = sample_prompts(&mut rng, cfg.prompts_per_view, h, w);
            let masks = view.masks.as_ref().map(|m| [&m[0], &m[1], &m[2]]);
            let targets = Stage1Targets {
                image: &view.image,
                seg: view.seg_target.as_ref().expect("checked above"),
                masks,
                prompts: &prompts,
            };
            let loss = stage1_loss(&out, &targets, &cfg.loss, None)?;
            let grads = render_backward(f, &view.camera, &opts, &loss.grads)?;
            Ok(ViewStep { loss, grads })
        };
        run_stage(&mut field, 1, cfg.stage1_iterations, views.len(), &groups, cfg, true, 0, &mut history, step_view)?;
    }
    if cfg.stage2_iterations > 0 {
        if !scene.has_lang_targets() {
            return Err(Error::invalid("stage 2 needs language targets for every training view"));
        }
        let opts = RenderOptions { seg: false, lang: true, track_dominant: false, exec: cfg.exec };
        let mut groups = vec![ParamGroup::LangWeight, ParamGroup::LangBias];
        if !cfg.freeze_latent {
            groups.push(ParamGroup::Latents);
        }
        let targets: Vec<Vec<Tensor>> = views
            .iter()
            .map(|v| {
                let t = v.lang_target.as_ref().expect("checked above");
                match (&v.masks, cfg.loss.pooled) {
                    (Some(m), true) => hierarchical_pool(t, &[&m[0], &m[1], &m[2]]),
                    _ => Ok(vec![t.clone()]),
                }
            })
            .collect::<Result<_>>()?;
        let step_view = |f: &GaussianField, v: usize, _: u64| -> Result<ViewStep> {
            let view = views[v];
            let out = render_with(f, &view.camera, &opts)?;
            let refs: Vec<&Tensor> = targets[v].iter().collect();
            let loss = stage2_loss(&out, &refs, &cfg.loss)?;
            let grads = render_backward(f, &view.camera, &opts, &loss.grads)?;
            Ok(ViewStep { loss, grads })
        };
        run_stage(&mut field, 2, cfg.stage2_iterations, views.len(), &groups, cfg, false, cfg.stage1_iterations, &mut history, step_view)?;
    }
    Ok(FitResult { field, history })
}
