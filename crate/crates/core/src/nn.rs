//! Network definitions. Both detector architectures take a CHW image, end in
//! global average pooling plus a 1x1-conv head, and emit a 2-logit vector.
//! `ConvNetA` is a plain stack of 3x3 convolutions; `ConvNetB` uses residual
//! blocks, giving the pair structurally distinct decision surfaces for
//! transfer experiments.

use crate::seeds;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArchitectureId {
    ConvNetA,
    ConvNetB,
    /// Flat affine map from pixels to logits. A diagnostic architecture used
    /// by oracle tests and calibration, not by the experiment pipeline.
    LinearProbe {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl ArchitectureId {
    pub fn name(&self) -> &'static str {
        match self {
            ArchitectureId::ConvNetA => "convnet_a",
            ArchitectureId::ConvNetB => "convnet_b",
            ArchitectureId::LinearProbe { .. } => "linear_probe",
        }
    }

    /// Expected input shape (channels, height, width), if the architecture
    /// constrains it. ConvNets accept any spatial size divisible by 16.
    pub fn fixed_input_shape(&self) -> Option<[usize; 3]> {
        match self {
            ArchitectureId::LinearProbe {
                channels,
                height,
                width,
            } => Some([*channels, *height, *width]),
            _ => None,
        }
    }

    pub fn validate_input_shape(&self, shape: [usize; 3]) -> bool {
        match self {
            ArchitectureId::ConvNetA | ArchitectureId::ConvNetB => {
                shape[0] == 3 && shape[1] % 16 == 0 && shape[2] % 16 == 0 && shape[1] > 0
            }
            ArchitectureId::LinearProbe { .. } => self.fixed_input_shape() == Some(shape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// He-style normal init with std sqrt(2 / fan_in).
    HeNormal { fan_in: usize },
    Zero,
}

fn conv_spec(name: &str, co: usize, ci: usize, k: usize) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        dims: vec![co, ci, k, k],
        init: Init::HeNormal { fan_in: ci * k * k },
    }
}

fn bias_spec(name: &str, c: usize) -> ParamSpec {
    ParamSpec {
        name: name.to_string(),
        dims: vec![c],
        init: Init::Zero,
    }
}

/// Parameter layout of an architecture, in flat-vector order.
pub fn param_specs(arch: &ArchitectureId, input_shape: [usize; 3]) -> Vec<ParamSpec> {
    match arch {
        ArchitectureId::ConvNetA => {
            let widths = [8usize, 16, 32, 32];
            let mut specs = Vec::new();
            let mut ci = input_shape[0];
            for (i, &co) in widths.iter().enumerate() {
                specs.push(conv_spec(&format!("conv{}.w", i + 1), co, ci, 3));
                specs.push(bias_spec(&format!("conv{}.b", i + 1), co));
                ci = co;
            }
            specs.push(conv_spec("head.w", NUM_CLASSES, ci, 1));
            specs.push(bias_spec("head.b", NUM_CLASSES));
            specs
        }
        ArchitectureId::ConvNetB => {
            let widths = [8usize, 16, 32];
            let mut specs = Vec::new();
            specs.push(conv_spec("stem.w", widths[0], input_shape[0], 3));
            specs.push(bias_spec("stem.b", widths[0]));
            for (i, &c) in widths.iter().enumerate() {
                specs.push(conv_spec(&format!("block{}.conv1.w", i + 1), c, c, 3));
                specs.push(bias_spec(&format!("block{}.conv1.b", i + 1), c));
                specs.push(conv_spec(&format!("block{}.conv2.w", i + 1), c, c, 3));
                specs.push(bias_spec(&format!("block{}.conv2.b", i + 1), c));
                if i + 1 < widths.len() {
                    specs.push(conv_spec(
                        &format!("trans{}.w", i + 1),
                        widths[i + 1],
                        c,
                        1,
                    ));
                    specs.push(bias_spec(&format!("trans{}.b", i + 1), widths[i + 1]));
                }
            }
            specs.push(conv_spec("head.w", NUM_CLASSES, widths[2], 1));
            specs.push(bias_spec("head.b", NUM_CLASSES));
            specs
        }
        ArchitectureId::LinearProbe { .. } => {
            let n: usize = input_shape.iter().product();
            vec![
                conv_spec("probe.w", NUM_CLASSES, n, 1),
                bias_spec("probe.b", NUM_CLASSES),
            ]
        }
    }
}

pub fn param_count(arch: &ArchitectureId, input_shape: [usize; 3]) -> usize {
    param_specs(arch, input_shape)
        .iter()
        .map(|s| s.dims.iter().product::<usize>())
        .sum()
}

/// Draw a fresh flat parameter vector.
pub fn init_params(arch: &ArchitectureId, input_shape: [usize; 3], seed: u64) -> Vec<f32> {
    let mut rng = seeds::rng(seed, "param-init", 0);
    let mut out = Vec::with_capacity(param_count(arch, input_shape));
    for spec in param_specs(arch, input_shape) {
        let n: usize = spec.dims.iter().product();
        match spec.init {
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in as f32).sqrt();
                for _ in 0..n {
                    // Box-Muller from two uniform draws
                    let u1: f32 = rng.gen_range(1e-7f32..1.0);
                    let u2: f32 = rng.gen_range(0.0f32..1.0);
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos();
                    out.push(std * z);
                }
            }
            Init::Zero => out.extend(std::iter::repeat(0.0).take(n)),
        }
    }
    out
}

/// A forward graph over the tape: input leaf, one leaf per parameter tensor,
/// and the 2-vector logits node.
pub struct BuiltNet {
    pub input: NodeId,
    pub param_nodes: Vec<NodeId>,
    pub logits: NodeId,
}

/// Slice a flat parameter vector into per-spec leaf nodes.
pub fn param_leaves(
    tape: &mut Tape,
    specs: &[ParamSpec],
    flat: &[f32],
    requires_grad: bool,
) -> Vec<NodeId> {
    let mut nodes = Vec::with_capacity(specs.len());
    let mut off = 0;
    for spec in specs {
        let n: usize = spec.dims.iter().product();
        let t = Tensor::from_vec(&spec.dims, flat[off..off + n].to_vec());
        nodes.push(tape.leaf(t, requires_grad));
        off += n;
    }
    assert_eq!(off, flat.len(), "flat parameter vector length mismatch");
    nodes
}

/// Build the forward graph for `arch` on `tape`.
pub fn build_network(
    tape: &mut Tape,
    arch: &ArchitectureId,
    flat_params: &[f32],
    image: Tensor,
    input_requires_grad: bool,
    params_require_grad: bool,
) -> BuiltNet {
    let specs = param_specs(arch, {
        let (c, h, w) = image.chw();
        [c, h, w]
    });
    let input = tape.leaf(image, input_requires_grad);
    let params = param_leaves(tape, &specs, flat_params, params_require_grad);
    let logits = match arch {
        ArchitectureId::ConvNetA => {
            let mut x = input;
            for i in 0..4 {
                let c = tape.conv(x, params[2 * i]);
                let cb = tape.add_bias(c, params[2 * i + 1]);
                let r = tape.relu(cb);
                x = tape.avgpool2(r);
            }
            head(tape, x, params[8], params[9])
        }
        ArchitectureId::ConvNetB => {
            let c = tape.conv(input, params[0]);
            let cb = tape.add_bias(c, params[1]);
            let r = tape.relu(cb);
            let mut x = tape.avgpool2(r);
            let mut p = 2;
            for i in 0..3 {
                x = res_block(tape, x, &params[p..p + 4]);
                p += 4;
                if i < 2 {
                    let pooled = tape.avgpool2(x);
                    let t = tape.conv(pooled, params[p]);
                    x = tape.add_bias(t, params[p + 1]);
                    p += 2;
                }
            }
            head(tape, x, params[p], params[p + 1])
        }
        ArchitectureId::LinearProbe { .. } => {
            let n = tape.value(input).len();
            let flat = tape.reshape(input, &[n, 1, 1]);
            let z = tape.conv(flat, params[0]);
            let zb = tape.add_bias(z, params[1]);
            tape.reshape(zb, &[NUM_CLASSES])
        }
    };
    BuiltNet {
        input,
        param_nodes: params,
        logits,
    }
}

fn res_block(tape: &mut Tape, x: NodeId, p: &[NodeId]) -> NodeId {
    let c1 = tape.conv(x, p[0]);
    let c1b = tape.add_bias(c1, p[1]);
    let r1 = tape.relu(c1b);
    let c2 = tape.conv(r1, p[2]);
    let c2b = tape.add_bias(c2, p[3]);
    let s = tape.add(x, c2b);
    tape.relu(s)
}

fn head(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let (_, h, wd) = tape.value(x).chw();
    let s = tape.sum_spatial(x);
    let gap = tape.scale(s, 1.0 / (h * wd) as f32);
    let c = tape.value(gap).len();
    let col = tape.reshape(gap, &[c, 1, 1]);
    let z = tape.conv(col, w);
    let zb = tape.add_bias(z, b);
    tape.reshape(zb, &[NUM_CLASSES])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts_are_stable() {
        assert_eq!(
            param_count(&ArchitectureId::ConvNetA, [3, 64, 64]),
            216 + 8 + 1152 + 16 + 4608 + 32 + 9216 + 32 + 64 + 2
        );
        let probe = ArchitectureId::LinearProbe {
            channels: 1,
            height: 1,
            width: 2,
        };
        assert_eq!(param_count(&probe, [1, 1, 2]), 2 * 2 + 2);
    }

    #[test]
    fn forward_shapes() {
        for arch in [ArchitectureId::ConvNetA, ArchitectureId::ConvNetB] {
            let params = init_params(&arch, [3, 64, 64], 1);
            let mut tape = Tape::new();
            let img = Tensor::filled(&[3, 64, 64], 0.5);
            let net = build_network(&mut tape, &arch, &params, img, false, false);
            assert_eq!(tape.dims(net.logits), &[2]);
            assert!(tape.value(net.logits).is_finite());
        }
    }

    #[test]
    fn zero_probe_gives_zero_logits() {
        let arch = ArchitectureId::LinearProbe {
            channels: 1,
            height: 2,
            width: 2,
        };
        let params = vec![0.0; param_count(&arch, [1, 2, 2])];
        let mut tape = Tape::new();
        let net = build_network(
            &mut tape,
            &arch,
            &params,
            Tensor::filled(&[1, 2, 2], 0.7),
            false,
            false,
        );
        assert_eq!(tape.value(net.logits).data(), &[0.0, 0.0]);
    }
}
