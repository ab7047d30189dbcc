//! Core substrate for the deepfake-detector robustness workspace: CHW float
//! images, a tape-based autodiff engine whose op set is closed under its own
//! backward rules (so gradient-of-gradient training penalties are exact), the
//! two desk-scale detector architectures, and model persistence.

pub mod error;
pub mod image;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod reference;
pub mod seeds;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use image::{ImageTensor, DESK_IMAGE_SHAPE};
pub use model::{
    classify_score, softmax, DetectorModel, InputFunctional, LabelClass, Logits, ModelMetadata,
    Probabilities, TrainingProvenance,
};
pub use nn::ArchitectureId;
pub use tensor::Tensor;
