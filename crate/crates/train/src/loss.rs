//! Loss terms. The gradient-norm penalty averages the squared L2 norms of
//! the per-class logit gradients with respect to the input, scaled by
//! 1/(C*N); training differentiates it with exact double backprop, never
//! finite differences.

use crate::error::{Result, TrainError};
use dflab_core::nn;
use dflab_core::tape::Tape;
use dflab_core::tensor::Tensor;
use dflab_core::{DetectorModel, ImageTensor, LabelClass, Logits};

/// Cross-entropy of the softmax prediction against the true label, in nats.
pub fn cross_entropy_loss(logits: &Logits, label: LabelClass) -> f64 {
    let z = logits.0;
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label.index()]
}

/// (1/(C*N)) * sum_i |grad_x Z(x)_i|^2 for the 2-class detector.
pub fn lipschitz_penalty(model: &DetectorModel, image: &ImageTensor) -> Result<f64> {
    let mut tape = Tape::new();
    let net = nn::build_network(
        &mut tape,
        model.architecture(),
        model.params(),
        image.to_tensor(),
        true,
        false,
    );
    let n: usize = model.input_shape().iter().product();
    let mut total = 0.0f64;
    for class in 0..nn::NUM_CLASSES {
        let z = tape.select(net.logits, class);
        let grads = tape.backward(z);
        let gx = match grads.get(net.input) {
            Some(g) => g,
            None => continue,
        };
        let ss = tape.sum_squares(gx);
        total += tape.value(ss).item() as f64;
    }
    let penalty = total / (nn::NUM_CLASSES * n) as f64;
    if !penalty.is_finite() {
        return Err(TrainError::Diverged {
            epoch: 0,
            batch: 0,
            reason: "non-finite gradient-norm penalty".into(),
        });
    }
    Ok(penalty)
}

/// Augmented training loss: cross-entropy plus lambda times the penalty
/// (the penalty already carries its 1/(C*N) normalization).
pub fn augmented_loss(logits: &Logits, label: LabelClass, penalty: f64, lambda: f64) -> f64 {
    cross_entropy_loss(logits, label) + lambda * penalty
}

/// Startup self-check that the substrate supports gradient-of-gradient. Runs
/// a bilinear toy problem whose second-order gradient is known analytically
/// and fails loudly on mismatch, so a regularized run aborts before training
/// rather than mid-epoch.
pub fn check_double_backprop() -> Result<()> {
    let mut tape = Tape::new();
    let w0 = [0.3f32, -0.7, 1.1];
    let x = tape.leaf(Tensor::from_vec(&[3], vec![0.5, 0.25, -0.75]), true);
    let w = tape.leaf(Tensor::from_vec(&[3], w0.to_vec()), true);
    let prod = tape.mul(w, x);
    let y = tape.sum_all(prod);
    let g1 = tape.backward(y);
    let dx = g1.get(x).ok_or_else(|| {
        TrainError::Core(dflab_core::CoreError::Capability(
            "no first-order input gradient".into(),
        ))
    })?;
    let pen = tape.sum_squares(dx);
    let g2 = tape.backward(pen);
    let dpen_dw = g2.get(w).ok_or_else(|| {
        TrainError::Core(dflab_core::CoreError::Capability(
            "no second-order parameter gradient".into(),
        ))
    })?;
    for (got, want) in tape.value(dpen_dw).data().iter().zip(w0.iter()) {
        if (got - 2.0 * want).abs() > 1e-5 {
            return Err(TrainError::Core(dflab_core::CoreError::Capability(
                format!("second-order gradient {got} != {}", 2.0 * want),
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dflab_core::ArchitectureId;

    #[test]
    fn uniform_prediction_costs_ln2() {
        let l = cross_entropy_loss(&Logits([0.0, 0.0]), LabelClass::Fake);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = cross_entropy_loss(&Logits([0.0, 0.0]), LabelClass::Real);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_costs_almost_nothing() {
        // softmax([10,-10])[0] = 1/(1+e^-20); loss = ln(1+e^-20) ~ 2.061e-9
        let l = cross_entropy_loss(&Logits([10.0, -10.0]), LabelClass::Fake);
        let expect = (1.0 + (-20.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 2.0611536e-9).abs() < 1e-13);
    }

    #[test]
    fn loss_is_shift_invariant() {
        for shift in [-30.0, -1.0, 0.5, 25.0] {
            let a = cross_entropy_loss(&Logits([1.2, -0.4]), LabelClass::Real);
            let b = cross_entropy_loss(&Logits([1.2 + shift, -0.4 + shift]), LabelClass::Real);
            assert!((a - b).abs() < 1e-9, "shift {shift}: {a} vs {b}");
        }
    }

    #[test]
    fn constant_model_has_zero_penalty() {
        let arch = ArchitectureId::LinearProbe {
            channels: 1,
            height: 1,
            width: 4,
        };
        let zero =
            DetectorModel::from_params(arch.clone(), [1, 1, 4], vec![0.0; 10], {
                let m = DetectorModel::new_random(arch, [1, 1, 4], 0).unwrap();
                m.metadata
            })
            .unwrap();
        let img = ImageTensor::new(1, 1, 4, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let p = lipschitz_penalty(&zero, &img).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn linear_probe_penalty_is_mean_row_norm() {
        // Z = Wx: penalty = (1/(C*N)) * sum_i |w_i|^2
        let arch = ArchitectureId::LinearProbe {
            channels: 1,
            height: 1,
            width: 3,
        };
        let params = vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 0.0, 0.0];
        let meta = DetectorModel::new_random(arch.clone(), [1, 1, 3], 0)
            .unwrap()
            .metadata;
        let m = DetectorModel::from_params(arch, [1, 1, 3], params, meta).unwrap();
        let img = ImageTensor::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let p = lipschitz_penalty(&m, &img).unwrap();
        let expect = ((1.0f64 + 4.0 + 1.0) + (0.25 + 0.0 + 9.0)) / (2.0 * 3.0);
        assert!((p - expect).abs() < 1e-6, "{p} vs {expect}");
    }

    #[test]
    fn penalty_is_deterministic() {
        let m = DetectorModel::new_random(ArchitectureId::ConvNetA, [3, 64, 64], 5).unwrap();
        let img = dflab_data::generate_portrait(64, 64, 9);
        let a = lipschitz_penalty(&m, &img).unwrap();
        let b = lipschitz_penalty(&m, &img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn penalty_matches_f64_reference() {
        for (seed, arch) in [(1u64, ArchitectureId::ConvNetA), (2, ArchitectureId::ConvNetB)] {
            let m = DetectorModel::new_random(arch, [3, 64, 64], seed).unwrap();
            let img = dflab_data::generate_portrait(64, 64, seed + 40);
            let got = lipschitz_penalty(&m, &img).unwrap();
            let want = dflab_core::reference::lipschitz_penalty(
                &m,
                &dflab_core::reference::pixels_f64(&img),
            );
            assert!(
                (got - want).abs() <= 1e-3 * (1.0 + want.abs()),
                "{}: {got} vs reference {want}",
                m.architecture().name()
            );
        }
    }

    #[test]
    fn augmented_loss_combines_linearly() {
        let logits = Logits([0.4, -0.2]);
        let ce = cross_entropy_loss(&logits, LabelClass::Fake);
        assert_eq!(augmented_loss(&logits, LabelClass::Fake, 0.01, 0.0), ce);
        let a = augmented_loss(&logits, LabelClass::Fake, 0.01, 5.0);
        assert!((a - (ce + 0.05)).abs() < 1e-12);
        // non-decreasing in lambda at fixed penalty
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 5.0, 50.0, 500.0, 5000.0] {
            let v = augmented_loss(&logits, LabelClass::Fake, 0.01, lambda);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn double_backprop_self_check_passes() {
        check_double_backprop().unwrap();
    }
}
