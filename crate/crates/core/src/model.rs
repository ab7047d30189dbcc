//! The two-class detector model: forward passes, input gradients, thresholded
//! classification, and on-disk persistence (raw weight file plus a JSON
//! metadata sidecar).

use crate::error::{CoreError, Result};
use crate::image::{self, ImageTensor};
use crate::nn::{self, ArchitectureId};
use crate::tape::Tape;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Class convention: fake is index 0, real is index 1. The reported score is
/// always P(real).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelClass {
    Fake,
    Real,
}

impl LabelClass {
    pub fn index(self) -> usize {
        match self {
            LabelClass::Fake => 0,
            LabelClass::Real => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(LabelClass::Fake),
            1 => Some(LabelClass::Real),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            LabelClass::Fake => LabelClass::Real,
            LabelClass::Real => LabelClass::Fake,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelClass::Fake => "fake",
            LabelClass::Real => "real",
        }
    }
}

impl std::str::FromStr for LabelClass {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fake" => Ok(LabelClass::Fake),
            "real" => Ok(LabelClass::Real),
            other => Err(CoreError::InvalidParameter(format!(
                "unknown label {other:?}"
            ))),
        }
    }
}

/// Pre-softmax 2-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logits(pub [f64; 2]);

impl Logits {
    pub fn get(&self, class: LabelClass) -> f64 {
        self.0[class.index()]
    }
}

/// Softmax probabilities; entries in [0,1] summing to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probabilities(pub [f64; 2]);

impl Probabilities {
    pub fn p_fake(&self) -> f64 {
        self.0[0]
    }
    pub fn p_real(&self) -> f64 {
        self.0[1]
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(logits: &Logits) -> Probabilities {
    let m = logits.0[0].max(logits.0[1]);
    let e0 = (logits.0[0] - m).exp();
    let e1 = (logits.0[1] - m).exp();
    let s = e0 + e1;
    Probabilities([e0 / s, e1 / s])
}

/// Scalar functional of the logits to differentiate with respect to the
/// input image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputFunctional {
    /// Constant functional; the gradient is identically zero.
    Constant,
    /// A single logit component Z(x)_c.
    Logit(LabelClass),
    /// Cross-entropy of the softmax against a true label.
    CrossEntropy(LabelClass),
    /// The thresholded class decision. Piecewise constant, so it has no
    /// usable gradient; requesting it is an error.
    PredictedLabel,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainingProvenance {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub seed: u64,
    pub augmented: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub architecture_id: ArchitectureId,
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    pub seed: u64,
    pub class_convention: ClassConvention,
    pub training: Option<TrainingProvenance>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassConvention {
    pub fake: usize,
    pub real: usize,
}

impl Default for ClassConvention {
    fn default() -> Self {
        ClassConvention { fake: 0, real: 1 }
    }
}

/// A detector: architecture id, flat parameter vector, and provenance.
/// Immutable after construction; training constructs new models.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    arch: ArchitectureId,
    input_shape: [usize; 3],
    params: Vec<f32>,
    pub metadata: ModelMetadata,
}

impl DetectorModel {
    /// Freshly initialized (untrained) model.
    pub fn new_random(arch: ArchitectureId, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        if !arch.validate_input_shape(input_shape) {
            return Err(CoreError::InvalidParameter(format!(
                "architecture {} cannot take input shape {input_shape:?}",
                arch.name()
            )));
        }
        let params = nn::init_params(&arch, input_shape, seed);
        Ok(DetectorModel {
            metadata: ModelMetadata {
                architecture_id: arch.clone(),
                input_shape,
                seed,
                class_convention: ClassConvention::default(),
                training: None,
            },
            arch,
            input_shape,
            params,
        })
    }

    pub fn from_params(
        arch: ArchitectureId,
        input_shape: [usize; 3],
        params: Vec<f32>,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let expect = nn::param_count(&arch, input_shape);
        if params.len() != expect {
            return Err(CoreError::InvalidParameter(format!(
                "parameter vector length {} does not match {} for {}",
                params.len(),
                expect,
                arch.name()
            )));
        }
        Ok(DetectorModel {
            arch,
            input_shape,
            params,
            metadata,
        })
    }

    pub fn architecture(&self) -> &ArchitectureId {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    /// Identifier used in reports and file names; training may override via
    /// metadata, this is the fallback.
    pub fn id(&self) -> String {
        match &self.metadata.training {
            Some(t) if t.augmented => format!("{}_aug", self.arch.name()),
            Some(t) if t.lambda > 0.0 => format!("{}_l{}", self.arch.name(), t.lambda),
            _ => self.arch.name().to_string(),
        }
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(CoreError::ShapeMismatch {
                expected: self.input_shape,
                got: image.shape(),
            });
        }
        Ok(())
    }

    pub fn forward_logits(&self, image: &ImageTensor) -> Result<Logits> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let net = nn::build_network(
            &mut tape,
            &self.arch,
            &self.params,
            image.to_tensor(),
            false,
            false,
        );
        let z = tape.value(net.logits);
        let out = Logits([z.data()[0] as f64, z.data()[1] as f64]);
        if !out.0[0].is_finite() || !out.0[1].is_finite() {
            return Err(CoreError::NonFinite("forward pass logits".into()));
        }
        Ok(out)
    }

    pub fn forward_probs(&self, image: &ImageTensor) -> Result<Probabilities> {
        Ok(softmax(&self.forward_logits(image)?))
    }

    /// P(real) score used throughout evaluation.
    pub fn score_real(&self, image: &ImageTensor) -> Result<f64> {
        Ok(self.forward_probs(image)?.p_real())
    }

    /// Gradient of a scalar functional of the logits with respect to the
    /// input image, same shape as the image.
    pub fn input_gradient(
        &self,
        image: &ImageTensor,
        functional: InputFunctional,
    ) -> Result<Tensor> {
        self.check_image(image)?;
        let [c, h, w] = self.input_shape;
        match functional {
            InputFunctional::Constant => Ok(Tensor::zeros(&[c, h, w])),
            InputFunctional::PredictedLabel => Err(CoreError::UnsupportedFunctional(
                "the thresholded class decision is piecewise constant".into(),
            )),
            InputFunctional::Logit(class) => {
                let mut tape = Tape::new();
                let net = nn::build_network(
                    &mut tape,
                    &self.arch,
                    &self.params,
                    image.to_tensor(),
                    true,
                    false,
                );
                let z = tape.select(net.logits, class.index());
                let grads = tape.backward(z);
                Ok(self.extract_input_grad(&tape, grads.get(net.input)))
            }
            InputFunctional::CrossEntropy(label) => {
                let mut tape = Tape::new();
                let net = nn::build_network(
                    &mut tape,
                    &self.arch,
                    &self.params,
                    image.to_tensor(),
                    true,
                    false,
                );
                let loss = tape.cross_entropy_logits(net.logits, label.index());
                let grads = tape.backward(loss);
                Ok(self.extract_input_grad(&tape, grads.get(net.input)))
            }
        }
    }

    fn extract_input_grad(&self, tape: &Tape, node: Option<crate::tape::NodeId>) -> Tensor {
        let [c, h, w] = self.input_shape;
        match node {
            Some(id) => tape.value(id).clone(),
            None => Tensor::zeros(&[c, h, w]),
        }
    }

    /// Thresholded decision on P(real): real only when the score strictly
    /// exceeds the threshold; ties classify fake.
    pub fn classify(&self, image: &ImageTensor, threshold_real: f64) -> Result<LabelClass> {
        let probs = self.forward_probs(image)?;
        classify_score(probs.p_real(), threshold_real)
    }

    pub fn save(&self, weights_path: &Path, metadata_path: &Path) -> Result<()> {
        image::write_tensor(
            weights_path,
            &Tensor::from_vec(&[self.params.len()], self.params.clone()),
        )?;
        let json = serde_json::to_string_pretty(&self.metadata)
            .map_err(|e| CoreError::Persistence(e.to_string()))?;
        std::fs::write(metadata_path, json)?;
        Ok(())
    }

    pub fn load(weights_path: &Path, metadata_path: &Path) -> Result<Self> {
        let meta: ModelMetadata = serde_json::from_str(&std::fs::read_to_string(metadata_path)?)
            .map_err(|e| {
                CoreError::Persistence(format!("{}: {e}", metadata_path.display()))
            })?;
        let t = image::read_tensor(weights_path)?;
        DetectorModel::from_params(
            meta.architecture_id.clone(),
            meta.input_shape,
            t.into_data(),
            meta,
        )
    }

    /// Save under `dir` as `<id>.bin` / `<id>.json`.
    pub fn save_in(&self, dir: &Path, id: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.save(&dir.join(format!("{id}.bin")), &dir.join(format!("{id}.json")))
    }

    pub fn load_from(dir: &Path, id: &str) -> Result<Self> {
        Self::load(&dir.join(format!("{id}.bin")), &dir.join(format!("{id}.json")))
    }

    /// New model with the same architecture and metadata but different
    /// parameters (used by training steps).
    pub fn with_params(&self, params: Vec<f32>) -> Result<Self> {
        DetectorModel::from_params(
            self.arch.clone(),
            self.input_shape,
            params,
            self.metadata.clone(),
        )
    }
}

/// Decision rule shared by direct classification and trace-based defenses.
pub fn classify_score(p_real: f64, threshold_real: f64) -> Result<LabelClass> {
    if !(0.0..=1.0).contains(&threshold_real) {
        return Err(CoreError::InvalidParameter(format!(
            "threshold {threshold_real} outside [0,1]"
        )));
    }
    Ok(if p_real > threshold_real {
        LabelClass::Real
    } else {
        LabelClass::Fake
    })
}
