//! Training loops. Batches are processed as per-image tapes whose gradients
//! are averaged in a fixed order (parallel map, sequential reduce), so a
//! fixed seed reproduces parameters bit-for-bit.

use crate::error::{Result, TrainError};
use crate::loss::check_double_backprop;
use crate::optimizer::{Adam, OptimizerId};
use dflab_core::nn::{self, ArchitectureId};
use dflab_core::tape::Tape;
use dflab_core::tensor::Tensor;
use dflab_core::{seeds, DetectorModel, LabelClass, TrainingProvenance};
use dflab_data::{load_record_image, DatasetManifest, Split};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer_id: OptimizerId,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer_id: OptimizerId::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub lambda: f64,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl RegularizationConfig {
    pub fn new(lambda: f64, input_shape: [usize; 3]) -> Self {
        RegularizationConfig {
            lambda,
            num_classes: nn::NUM_CLASSES,
            input_dim: input_shape.iter().product(),
        }
    }

    pub fn off(input_shape: [usize; 3]) -> Self {
        Self::new(0.0, input_shape)
    }

    pub fn validate(&self, input_shape: [usize; 3]) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if self.num_classes != nn::NUM_CLASSES {
            return Err(TrainError::InvalidConfig(format!(
                "num_classes {} unsupported",
                self.num_classes
            )));
        }
        let n: usize = input_shape.iter().product();
        if self.input_dim != n {
            return Err(TrainError::InvalidConfig(format!(
                "input_dim {} does not match model input dimensionality {n}",
                self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainedDetector {
    pub model: DetectorModel,
    pub curve: Vec<EpochStats>,
}

struct Sample {
    image: Tensor,
    label: LabelClass,
}

fn load_train_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    let records: Vec<_> = manifest.split(Split::Train).collect();
    if records.is_empty() {
        return Err(TrainError::InvalidConfig(
            "manifest has an empty TRAIN split".into(),
        ));
    }
    records
        .par_iter()
        .map(|r| {
            Ok(Sample {
                image: load_record_image(r)?.to_tensor(),
                label: r.label,
            })
        })
        .collect()
}

/// Per-image loss and flat parameter gradient. With lambda > 0 the loss is
/// augmented with the gradient-norm penalty and the parameter gradient is
/// computed by differentiating through the input-gradient computation.
fn image_loss_and_grad(
    arch: &ArchitectureId,
    params: &[f32],
    sample: &Sample,
    lambda: f64,
) -> (f64, bool, Vec<f32>) {
    let mut tape = Tape::new();
    let net = nn::build_network(
        &mut tape,
        arch,
        params,
        sample.image.clone(),
        lambda > 0.0,
        true,
    );
    let ce = tape.cross_entropy_logits(net.logits, sample.label.index());

    let loss_node = if lambda > 0.0 {
        let (_, h, w) = sample.image.chw();
        let n = sample.image.len();
        let _ = (h, w);
        let mut penalty_terms = Vec::with_capacity(nn::NUM_CLASSES);
        for class in 0..nn::NUM_CLASSES {
            let z = tape.select(net.logits, class);
            let grads = tape.backward(z);
            if let Some(gx) = grads.get(net.input) {
                penalty_terms.push(tape.sum_squares(gx));
            }
        }
        let mut penalty = match penalty_terms.first() {
            Some(&first) => first,
            None => tape.leaf(Tensor::scalar(0.0), false),
        };
        for &t in penalty_terms.iter().skip(1) {
            penalty = tape.add(penalty, t);
        }
        let scaled = tape.scale(
            penalty,
            (lambda / (nn::NUM_CLASSES * n) as f64) as f32,
        );
        tape.add(ce, scaled)
    } else {
        ce
    };

    let loss = tape.value(loss_node).item() as f64;
    let logits = tape.value(net.logits).data();
    let correct = prediction_is_correct(logits, sample.label);

    let grads = tape.backward(loss_node);
    let mut flat = vec![0.0f32; params.len()];
    let mut off = 0;
    let specs = nn::param_specs(arch, {
        let (c, h, w) = sample.image.chw();
        [c, h, w]
    });
    for (node, spec) in net.param_nodes.iter().zip(&specs) {
        let n: usize = spec.dims.iter().product();
        if let Some(g) = grads.get(*node) {
            flat[off..off + n].copy_from_slice(tape.value(g).data());
        }
        off += n;
    }
    (loss, correct, flat)
}

/// Decision at threshold 0.5 with ties classifying fake, in logit space.
fn prediction_is_correct(logits: &[f32], label: LabelClass) -> bool {
    let pred = if logits[1] as f64 > logits[0] as f64 {
        LabelClass::Real
    } else {
        LabelClass::Fake
    };
    pred == label
}

struct LoopOutput {
    params: Vec<f32>,
    curve: Vec<EpochStats>,
}

#[allow(clippy::too_many_arguments)]
fn run_training_loop(
    arch: &ArchitectureId,
    mut params: Vec<f32>,
    samples: &[Sample],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    lambda: f64,
    seed: u64,
    checkpoint: Option<(&Path, &DetectorModel)>,
) -> Result<LoopOutput> {
    let mut opt = Adam::new(learning_rate, params.len());
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seeds::rng(seed, "epoch-shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        let mut n_correct = 0usize;
        for (batch_idx, batch) in order.chunks(batch_size).enumerate() {
            let results: Vec<(f64, bool, Vec<f32>)> = batch
                .par_iter()
                .map(|&i| image_loss_and_grad(arch, &params, &samples[i], lambda))
                .collect();

            let mut grad = vec![0.0f32; params.len()];
            let inv = 1.0 / batch.len() as f32;
            for (loss, correct, g) in &results {
                if !loss.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch: epoch + 1,
                        batch: batch_idx + 1,
                        reason: format!("loss {loss}"),
                    });
                }
                loss_sum += loss;
                n_correct += *correct as usize;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += inv * v;
                }
            }
            opt.step(&mut params, &grad);
        }

        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / samples.len() as f64,
            train_accuracy: n_correct as f64 / samples.len() as f64,
        };
        if let Some((dir, template)) = checkpoint {
            let m = template.with_params(params.clone())?;
            m.save_in(&dir.join("checkpoints"), &format!("epoch_{:03}", epoch + 1))?;
        }
        curve.push(stats);
    }

    if epochs >= 2 {
        let first = curve.first().map(|s| s.mean_loss).unwrap_or(0.0);
        let last = curve.last().map(|s| s.mean_loss).unwrap_or(0.0);
        if !(last < first) {
            return Err(TrainError::NoProgress { first, last });
        }
    }
    Ok(LoopOutput { params, curve })
}

fn write_curve(dir: &Path, curve: &[EpochStats]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("curve.csv"))
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    w.write_record(["epoch", "loss", "train_acc"])
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    for s in curve {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.6}", s.mean_loss),
            format!("{:.6}", s.train_accuracy),
        ])
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Train a fresh detector on the manifest's TRAIN split. With
/// `reg.lambda > 0` the loss is augmented with the gradient-norm penalty
/// (capability-checked before the first epoch). `out_dir`, when given,
/// receives per-epoch checkpoints and the `epoch,loss,train_acc` curve.
pub fn train_detector(
    arch: ArchitectureId,
    input_shape: [usize; 3],
    manifest: &DatasetManifest,
    config: &TrainConfig,
    reg: &RegularizationConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedDetector> {
    config.validate()?;
    reg.validate(input_shape)?;
    if reg.lambda > 0.0 {
        check_double_backprop()?;
    }
    let samples = load_train_samples(manifest)?;
    let init = DetectorModel::new_random(arch.clone(), input_shape, config.seed)?;

    let out = run_training_loop(
        &arch,
        init.params().to_vec(),
        &samples,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        reg.lambda,
        config.seed,
        out_dir.map(|d| (d, &init)),
    )?;

    let mut model = init.with_params(out.params)?;
    model.metadata.training = Some(TrainingProvenance {
        lambda: reg.lambda,
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        optimizer: config.optimizer_id.name().to_string(),
        seed: config.seed,
        augmented: false,
    });
    if let Some(dir) = out_dir {
        write_curve(dir, &out.curve)?;
    }
    Ok(TrainedDetector {
        model,
        curve: out.curve,
    })
}

/// Continue training an existing detector on a blur-augmented manifest with
/// plain cross-entropy. `epochs == 0` returns the model unchanged (apart
/// from provenance marking it augmented).
pub fn fine_tune_blur(
    model: &DetectorModel,
    augmented_manifest: &DatasetManifest,
    epochs: usize,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainedDetector> {
    config.validate()?;
    let base_training = model.metadata.training.clone();
    let provenance = |e: usize| TrainingProvenance {
        lambda: 0.0,
        epochs: e,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        optimizer: config.optimizer_id.name().to_string(),
        seed: config.seed,
        augmented: true,
    };
    if epochs == 0 {
        let mut m = model.clone();
        m.metadata.training = Some(TrainingProvenance {
            epochs: base_training.map(|t| t.epochs).unwrap_or(0),
            ..provenance(0)
        });
        return Ok(TrainedDetector {
            model: m,
            curve: Vec::new(),
        });
    }
    let samples = load_train_samples(augmented_manifest)?;
    let out = run_training_loop(
        model.architecture(),
        model.params().to_vec(),
        &samples,
        epochs,
        config.batch_size,
        config.learning_rate,
        0.0,
        config.seed,
        out_dir.map(|d| (d, model)),
    )?;
    let mut tuned = model.with_params(out.params)?;
    tuned.metadata.training = Some(provenance(epochs));
    if let Some(dir) = out_dir {
        write_curve(dir, &out.curve)?;
    }
    Ok(TrainedDetector {
        model: tuned,
        curve: out.curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dflab_data::{build_dataset, FakeSource, SyntheticFakeConfig};
    use std::path::PathBuf;

    fn tiny_dataset(dir: &Path, n_per_class: usize) -> DatasetManifest {
        let reals = dir.join("real");
        dflab_data::materialize_portraits(&reals, n_per_class, 32, 32, 5).unwrap();
        build_dataset(
            &reals,
            FakeSource::Synthetic {
                config: &SyntheticFakeConfig::default(),
                count: n_per_class,
                out_dir: &dir.join("fake"),
            },
            0.75,
            5,
        )
        .unwrap()
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 2e-3,
            optimizer_id: OptimizerId::Adam,
            seed: 13,
        }
    }

    #[test]
    fn training_reduces_loss_and_records_provenance() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(tmp.path(), 24);
        let out = train_detector(
            ArchitectureId::ConvNetA,
            [3, 32, 32],
            &manifest,
            &quick_config(3),
            &RegularizationConfig::off([3, 32, 32]),
            Some(&tmp.path().join("run")),
        )
        .unwrap();
        assert!(out.curve.last().unwrap().mean_loss < out.curve[0].mean_loss);
        let prov = out.model.metadata.training.as_ref().unwrap();
        assert_eq!(prov.lambda, 0.0);
        assert_eq!(prov.epochs, 3);
        assert!(!prov.augmented);
        assert!(tmp.path().join("run/curve.csv").is_file());
        assert!(tmp
            .path()
            .join("run/checkpoints/epoch_003.bin")
            .is_file());
    }

    #[test]
    fn regularized_training_stores_lambda() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(tmp.path(), 12);
        let out = train_detector(
            ArchitectureId::ConvNetB,
            [3, 32, 32],
            &manifest,
            &quick_config(2),
            &RegularizationConfig::new(5000.0, [3, 32, 32]),
            None,
        )
        .unwrap();
        assert_eq!(out.model.metadata.training.as_ref().unwrap().lambda, 5000.0);
    }

    #[test]
    fn training_is_deterministic_under_fixed_seed() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(tmp.path(), 12);
        let run = || {
            train_detector(
                ArchitectureId::ConvNetA,
                [3, 32, 32],
                &manifest,
                &quick_config(2),
                &RegularizationConfig::off([3, 32, 32]),
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn fine_tune_zero_epochs_returns_model_unchanged() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(tmp.path(), 12);
        let base = train_detector(
            ArchitectureId::ConvNetA,
            [3, 32, 32],
            &manifest,
            &quick_config(2),
            &RegularizationConfig::off([3, 32, 32]),
            None,
        )
        .unwrap()
        .model;
        let tuned = fine_tune_blur(&base, &manifest, 0, &quick_config(1), None).unwrap();
        assert_eq!(base.params(), tuned.model.params());
        assert!(tuned.model.metadata.training.as_ref().unwrap().augmented);
    }

    #[test]
    fn fine_tune_marks_augmented_provenance() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(tmp.path(), 12);
        let aug = dflab_data::augment_training_set(
            &manifest,
            &dflab_data::AugmentationConfig {
                blur_fraction: 0.4,
                sigma_range: [1.0, 2.0],
                seed: 3,
            },
            &tmp.path().join("aug"),
        )
        .unwrap();
        let base = train_detector(
            ArchitectureId::ConvNetA,
            [3, 32, 32],
            &manifest,
            &quick_config(2),
            &RegularizationConfig::off([3, 32, 32]),
            None,
        )
        .unwrap()
        .model;
        let tuned = fine_tune_blur(&base, &aug, 2, &quick_config(1), None).unwrap();
        let prov = tuned.model.metadata.training.as_ref().unwrap();
        assert!(prov.augmented);
        assert_eq!(prov.epochs, 2);
        assert_ne!(base.params(), tuned.model.params());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig {
            epochs: 0,
            ..quick_config(1)
        };
        assert!(bad.validate().is_err());
        let reg = RegularizationConfig {
            lambda: -1.0,
            num_classes: 2,
            input_dim: 3 * 32 * 32,
        };
        assert!(reg.validate([3, 32, 32]).is_err());
        let reg = RegularizationConfig {
            lambda: 1.0,
            num_classes: 2,
            input_dim: 7,
        };
        assert!(reg.validate([3, 32, 32]).is_err());
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let manifest = DatasetManifest::new(
            vec![dflab_data::ManifestRecord {
                path: PathBuf::from("x.png"),
                label: LabelClass::Real,
                split: Split::Test,
                augmented: false,
                sigma: None,
            }],
            0,
        )
        .unwrap();
        let err = train_detector(
            ArchitectureId::ConvNetA,
            [3, 32, 32],
            &manifest,
            &quick_config(1),
            &RegularizationConfig::off([3, 32, 32]),
            None,
        );
        assert!(err.is_err());
    }
}
