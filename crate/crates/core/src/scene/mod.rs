//! Cameras, the semantic Gaussian field, scene manifests and the synthetic
//! scene generator.

mod camera;
mod field;
mod manifest;
mod synth;

pub use camera::{ring_cameras, unproject, CameraView};
pub use field::{Gaussian, GaussianField, LinearHead, ParamGroup};
pub use manifest::{
    load_scene, CostVolumeSettings, Scene, SceneManifest, SceneView, Split, ViewRecord, MANIFEST_FILE,
};
pub use synth::{synth_scene, textured_plane, write_scene, PlaneScene, SynthConfig, SynthScene};
