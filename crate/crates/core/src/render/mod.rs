//! Differentiable tile rasterizer.
//!
//! Every Gaussian is projected to a 2D elliptical kernel, all kernels are
//! sorted by view depth, and each pixel composites front to back with
//! weights `w_i = α_i·G_i(X)·Π_{j<i}(1 − α_j·G_j(X))`. Color, segmentation
//! features, language features and depth share those weights exactly, which
//! is what makes the feature maps 3D consistent.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, RenderGrads};
pub use forward::{render, render_pose_path, render_with, RenderOutput};
pub use project::{project_gaussian, Projected2DGaussian};

use crate::Exec;

/// Added to the diagonal of every projected covariance, in px².
pub const BLUR_FLOOR: f64 = 0.3;
/// Kernel values below this are skipped.
pub const KERNEL_CUTOFF: f64 = 1.0 / 255.0;
/// A pixel stops compositing once its transmittance drops below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Render the segmentation head.
    pub seg: bool,
    /// Render the language head.
    pub lang: bool,
    /// Record, per pixel, the Gaussian with the largest compositing weight.
    pub track_dominant: bool,
    pub exec: Exec,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { seg: true, lang: true, track_dominant: false, exec: Exec::default() }
    }
}

impl RenderOptions {
    pub fn color_only() -> Self {
        RenderOptions { seg: false, lang: false, ..Default::default() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

/// Offsets of each channel group inside the per-Gaussian value vector and
/// the per-pixel composite.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub seg: usize,
    pub seg_len: usize,
    pub lang: usize,
    pub lang_len: usize,
    pub depth: usize,
    /// Values per Gaussian: color, seg, lang, depth.
    pub stride: usize,
}

impl Layout {
    pub fn new(seg_len: usize, lang_len: usize) -> Self {
        let seg = 3;
        let lang = seg + seg_len;
        let depth = lang + lang_len;
        Layout { seg, seg_len, lang, lang_len, depth, stride: depth + 1 }
    }

    /// Per-pixel composite width: the values plus accumulated alpha.
    pub fn pixel_stride(&self) -> usize {
        self.stride + 1
    }
}
