//! Data pipeline: procedural portrait corpus, warp-blend synthetic fakes,
//! stratified train/test manifests, and Gaussian-blur augmentation.

pub mod blur;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod synth;

pub use blur::gaussian_blur;
pub use dataset::{
    augment_training_set, build_dataset, materialize_portraits, AugmentationConfig, FakeSource,
};
pub use error::{DataError, Result};
pub use manifest::{load_record_image, DatasetManifest, ManifestRecord, Split};
pub use synth::{generate_portrait, generate_synthetic_fake, BlendMode, SyntheticFakeConfig};
