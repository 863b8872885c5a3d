//! Semantic anisotropic Gaussian fields.
//!
//! A field is a set of 3D Gaussians that carry, next to position, opacity,
//! covariance and color, a latent semantic vector. Two linear heads map the
//! latent to a segmentation feature and a language feature. All channels are
//! alpha-composited with the same front-to-back weights, so the field renders
//! color, features and depth in one pass.
//!
//! The crate covers the full loop at desk scale:
//!
//! - [`tensor`]: dense tensors, the `SSPT` file format, PNG I/O and resampling.
//! - [`scene`]: cameras, the Gaussian field, scene manifests and a seeded
//!   synthetic scene generator.
//! - [`render`]: differentiable tile rasterizer with analytic gradients.
//! - [`costvolume`]: plane-sweep warping, correlation volumes and depth
//!   regression.
//! - [`losses`]: photometric, cosine distillation, focal, dice and mask
//!   losses plus hierarchical mask pooling.
//! - [`optim`]: Adam with cosine decay, cost-volume initialization and the
//!   two-stage fitting loop.
//! - [`segment`]: promptable and open-vocabulary segmentation, metrics and
//!   PCA feature visualization.

pub mod costvolume;
pub mod error;
pub mod exec;
pub(crate) mod linalg;
pub mod losses;
pub mod optim;
pub mod real;
pub mod render;
pub mod scene;
pub mod segment;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use real::Real;
pub use render::{render, render_backward, RenderOptions, RenderOutput};
pub use scene::{CameraView, GaussianField, Scene, SceneManifest};
pub use tensor::Tensor;
