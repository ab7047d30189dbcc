//! Slow f64 reference path: direct-loop forward passes and hand-written
//! backprop for every architecture, sharing no code with the tape or the
//! kernels. Verification tests difference this path against the production
//! implementation; nothing in the pipeline itself calls it.

use crate::model::{DetectorModel, LabelClass};
use crate::nn::ArchitectureId;

struct ConvP {
    k: usize,
    ci: usize,
    co: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

enum RefLayer {
    Conv(ConvP),
    Relu,
    AvgPool2,
    /// y = relu(x + inner(x))
    Residual(Vec<RefLayer>),
}

struct RefNet {
    layers: Vec<RefLayer>,
    head: ConvP,
}

fn take_conv(params: &mut &[f32], co: usize, ci: usize, k: usize) -> ConvP {
    let nw = co * ci * k * k;
    let w = params[..nw].iter().map(|&v| v as f64).collect();
    *params = &params[nw..];
    let b = params[..co].iter().map(|&v| v as f64).collect();
    *params = &params[co..];
    ConvP { k, ci, co, w, b }
}

fn build_ref(model: &DetectorModel) -> RefNet {
    let mut p = model.params();
    let input_c = model.input_shape()[0];
    match model.architecture() {
        ArchitectureId::ConvNetA => {
            let widths = [8usize, 16, 32, 32];
            let mut layers = Vec::new();
            let mut ci = input_c;
            for &co in &widths {
                layers.push(RefLayer::Conv(take_conv(&mut p, co, ci, 3)));
                layers.push(RefLayer::Relu);
                layers.push(RefLayer::AvgPool2);
                ci = co;
            }
            let head = take_conv(&mut p, 2, ci, 1);
            assert!(p.is_empty());
            RefNet { layers, head }
        }
        ArchitectureId::ConvNetB => {
            let widths = [8usize, 16, 32];
            let mut layers = Vec::new();
            layers.push(RefLayer::Conv(take_conv(&mut p, widths[0], input_c, 3)));
            layers.push(RefLayer::Relu);
            layers.push(RefLayer::AvgPool2);
            for i in 0..3 {
                let c = widths[i];
                let inner = vec![
                    RefLayer::Conv(take_conv(&mut p, c, c, 3)),
                    RefLayer::Relu,
                    RefLayer::Conv(take_conv(&mut p, c, c, 3)),
                ];
                layers.push(RefLayer::Residual(inner));
                if i < 2 {
                    layers.push(RefLayer::AvgPool2);
                    layers.push(RefLayer::Conv(take_conv(&mut p, widths[i + 1], c, 1)));
                }
            }
            let head = take_conv(&mut p, 2, widths[2], 1);
            assert!(p.is_empty());
            RefNet { layers, head }
        }
        ArchitectureId::LinearProbe { .. } => {
            let n: usize = model.input_shape().iter().product();
            let head = take_conv(&mut p, 2, n, 1);
            assert!(p.is_empty());
            RefNet {
                layers: Vec::new(),
                head,
            }
        }
    }
}

#[derive(Clone)]
struct Act {
    data: Vec<f64>,
    c: usize,
    h: usize,
    w: usize,
}

fn conv_fwd(p: &ConvP, x: &Act) -> Act {
    let k = p.k;
    let pad = (k / 2) as isize;
    let mut out = Act {
        data: vec![0.0; p.co * x.h * x.w],
        c: p.co,
        h: x.h,
        w: x.w,
    };
    for co in 0..p.co {
        for y in 0..x.h as isize {
            for xx in 0..x.w as isize {
                let mut acc = p.b[co];
                for ci in 0..p.ci {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let sy = y + ky - pad;
                            let sx = xx + kx - pad;
                            if sy >= 0 && sy < x.h as isize && sx >= 0 && sx < x.w as isize {
                                acc += p.w[((co * p.ci + ci) * k + ky as usize) * k + kx as usize]
                                    * x.data[(ci * x.h + sy as usize) * x.w + sx as usize];
                            }
                        }
                    }
                }
                out.data[(co * x.h + y as usize) * x.w + xx as usize] = acc;
            }
        }
    }
    out
}

fn conv_bwd_input(p: &ConvP, x: &Act, dy: &Act) -> Act {
    let k = p.k;
    let pad = (k / 2) as isize;
    let mut dx = Act {
        data: vec![0.0; x.c * x.h * x.w],
        c: x.c,
        h: x.h,
        w: x.w,
    };
    for co in 0..p.co {
        for y in 0..x.h as isize {
            for xx in 0..x.w as isize {
                let g = dy.data[(co * x.h + y as usize) * x.w + xx as usize];
                if g == 0.0 {
                    continue;
                }
                for ci in 0..p.ci {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let sy = y + ky - pad;
                            let sx = xx + kx - pad;
                            if sy >= 0 && sy < x.h as isize && sx >= 0 && sx < x.w as isize {
                                dx.data[(ci * x.h + sy as usize) * x.w + sx as usize] += g
                                    * p.w[((co * p.ci + ci) * k + ky as usize) * k + kx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

enum Saved {
    Conv(Act),
    Relu(Act),
    AvgPool2,
    Residual(Act, Vec<Saved>),
}

fn fwd_layers(layers: &[RefLayer], mut x: Act, saved: &mut Vec<Saved>) -> Act {
    for layer in layers {
        match layer {
            RefLayer::Conv(p) => {
                saved.push(Saved::Conv(x.clone()));
                x = conv_fwd(p, &x);
            }
            RefLayer::Relu => {
                saved.push(Saved::Relu(x.clone()));
                x.data.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0
                    }
                });
            }
            RefLayer::AvgPool2 => {
                saved.push(Saved::AvgPool2);
                let (ho, wo) = (x.h / 2, x.w / 2);
                let mut out = vec![0.0; x.c * ho * wo];
                for c in 0..x.c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let r0 = (c * x.h + 2 * y) * x.w + 2 * xx;
                            let r1 = r0 + x.w;
                            out[(c * ho + y) * wo + xx] =
                                0.25 * (x.data[r0] + x.data[r0 + 1] + x.data[r1] + x.data[r1 + 1]);
                        }
                    }
                }
                x = Act {
                    data: out,
                    c: x.c,
                    h: ho,
                    w: wo,
                };
            }
            RefLayer::Residual(inner) => {
                let mut inner_saved = Vec::new();
                let fx = fwd_layers(inner, x.clone(), &mut inner_saved);
                let mut sum = x.clone();
                sum.data
                    .iter_mut()
                    .zip(&fx.data)
                    .for_each(|(a, b)| *a += *b);
                saved.push(Saved::Residual(sum.clone(), inner_saved));
                sum.data.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0
                    }
                });
                x = sum;
            }
        }
    }
    x
}

fn bwd_layers(layers: &[RefLayer], saved: &[Saved], mut dy: Act) -> Act {
    for (layer, s) in layers.iter().zip(saved.iter()).rev() {
        match (layer, s) {
            (RefLayer::Conv(p), Saved::Conv(xin)) => {
                dy = conv_bwd_input(p, xin, &dy);
            }
            (RefLayer::Relu, Saved::Relu(pre)) => {
                dy.data.iter_mut().zip(&pre.data).for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            (RefLayer::AvgPool2, Saved::AvgPool2) => {
                let (hi, wi) = (dy.h * 2, dy.w * 2);
                let mut dx = vec![0.0; dy.c * hi * wi];
                for c in 0..dy.c {
                    for y in 0..dy.h {
                        for xx in 0..dy.w {
                            let g = 0.25 * dy.data[(c * dy.h + y) * dy.w + xx];
                            let r0 = (c * hi + 2 * y) * wi + 2 * xx;
                            let r1 = r0 + wi;
                            dx[r0] += g;
                            dx[r0 + 1] += g;
                            dx[r1] += g;
                            dx[r1 + 1] += g;
                        }
                    }
                }
                dy = Act {
                    data: dx,
                    c: dy.c,
                    h: hi,
                    w: wi,
                };
            }
            (RefLayer::Residual(inner), Saved::Residual(pre_sum, inner_saved)) => {
                // through the outer relu
                dy.data.iter_mut().zip(&pre_sum.data).for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                // branch: identity + inner stack
                let d_inner = bwd_layers(inner, inner_saved, dy.clone());
                dy.data
                    .iter_mut()
                    .zip(&d_inner.data)
                    .for_each(|(a, b)| *a += *b);
            }
            _ => unreachable!("saved record out of sync"),
        }
    }
    dy
}

fn head_logits(net: &RefNet, feat: &Act) -> [f64; 2] {
    // global average pool then affine head
    let hw = (feat.h * feat.w) as f64;
    let mut gap = vec![0.0; feat.c];
    for c in 0..feat.c {
        gap[c] = feat.data[c * feat.h * feat.w..(c + 1) * feat.h * feat.w]
            .iter()
            .sum::<f64>()
            / hw;
    }
    let mut z = [net.head.b[0], net.head.b[1]];
    for (cls, zv) in z.iter_mut().enumerate() {
        for c in 0..feat.c {
            *zv += net.head.w[cls * feat.c + c] * gap[c];
        }
    }
    z
}

/// Forward pass on raw f64 pixels (no [0,1] validation; finite-difference
/// probes step slightly outside the box).
pub fn forward_raw(model: &DetectorModel, pixels: &[f64]) -> [f64; 2] {
    let [c, h, w] = model.input_shape();
    assert_eq!(pixels.len(), c * h * w);
    let net = build_ref(model);
    if let ArchitectureId::LinearProbe { .. } = model.architecture() {
        let mut z = [net.head.b[0], net.head.b[1]];
        for (cls, zv) in z.iter_mut().enumerate() {
            for (i, &p) in pixels.iter().enumerate() {
                *zv += net.head.w[cls * pixels.len() + i] * p;
            }
        }
        return z;
    }
    let x = Act {
        data: pixels.to_vec(),
        c,
        h,
        w,
    };
    let mut saved = Vec::new();
    let feat = fwd_layers(&net.layers, x, &mut saved);
    head_logits(&net, &feat)
}

pub fn cross_entropy_raw(model: &DetectorModel, pixels: &[f64], label: LabelClass) -> f64 {
    let z = forward_raw(model, pixels);
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label.index()]
}

/// Hand-written backprop: gradient of one logit w.r.t. the input pixels.
pub fn input_gradient_logit(model: &DetectorModel, pixels: &[f64], class: usize) -> Vec<f64> {
    let [c, h, w] = model.input_shape();
    let net = build_ref(model);
    if let ArchitectureId::LinearProbe { .. } = model.architecture() {
        let n = pixels.len();
        return net.head.w[class * n..(class + 1) * n].to_vec();
    }
    let x = Act {
        data: pixels.to_vec(),
        c,
        h,
        w,
    };
    let mut saved = Vec::new();
    let feat = fwd_layers(&net.layers, x, &mut saved);
    // d z_class / d gap[c] = head.w[class][c]; d gap / d feat = 1/(HW)
    let hw = (feat.h * feat.w) as f64;
    let mut dfeat = Act {
        data: vec![0.0; feat.c * feat.h * feat.w],
        c: feat.c,
        h: feat.h,
        w: feat.w,
    };
    for cc in 0..feat.c {
        let g = net.head.w[class * feat.c + cc] / hw;
        dfeat.data[cc * feat.h * feat.w..(cc + 1) * feat.h * feat.w].fill(g);
    }
    bwd_layers(&net.layers, &saved, dfeat).data
}

/// Gradient-norm penalty: mean over classes of |grad_x Z_i|^2 / N.
pub fn lipschitz_penalty(model: &DetectorModel, pixels: &[f64]) -> f64 {
    let n: usize = model.input_shape().iter().product();
    let mut total = 0.0;
    for class in 0..2 {
        let g = input_gradient_logit(model, pixels, class);
        total += g.iter().map(|v| v * v).sum::<f64>();
    }
    total / (2.0 * n as f64)
}

pub fn pixels_f64(image: &crate::image::ImageTensor) -> Vec<f64> {
    image.data().iter().map(|&v| v as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;
    use crate::model::InputFunctional;
    use rand::Rng;

    fn random_image(seed: u64) -> ImageTensor {
        let mut r = crate::seeds::rng(seed, "ref-test", 0);
        ImageTensor::new(3, 64, 64, (0..3 * 64 * 64).map(|_| r.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn reference_forward_matches_production() {
        for (seed, arch) in [(1u64, ArchitectureId::ConvNetA), (2, ArchitectureId::ConvNetB)] {
            let m = DetectorModel::new_random(arch, [3, 64, 64], seed).unwrap();
            let img = random_image(seed + 10);
            let z = m.forward_logits(&img).unwrap();
            let zr = forward_raw(&m, &pixels_f64(&img));
            for (a, b) in z.0.iter().zip(zr.iter()) {
                assert!(
                    (a - b).abs() < 1e-3 * (1.0 + b.abs()),
                    "production {a} vs reference {b}"
                );
            }
        }
    }

    #[test]
    fn reference_gradient_matches_its_own_finite_differences() {
        // internal consistency of the oracle itself
        let m = DetectorModel::new_random(ArchitectureId::ConvNetB, [3, 64, 64], 3).unwrap();
        let img = random_image(4);
        let px = pixels_f64(&img);
        let g = input_gradient_logit(&m, &px, 0);
        let mut r = crate::seeds::rng(5, "ref-test-probe", 0);
        for _ in 0..5 {
            let idx = r.gen_range(0..px.len());
            let h = 1e-5;
            let mut up = px.clone();
            up[idx] += h;
            let mut dn = px.clone();
            dn[idx] -= h;
            let fd = (forward_raw(&m, &up)[0] - forward_raw(&m, &dn)[0]) / (2.0 * h);
            assert!(
                (fd - g[idx]).abs() < 1e-6 * (1.0 + g[idx].abs()),
                "fd {fd} vs backprop {}",
                g[idx]
            );
        }
    }

    #[test]
    fn production_input_gradient_matches_reference_fd() {
        // the contract: central differences at step 1e-3, relative error <= 1e-3,
        // checked on random pixels for both architectures
        for (seed, arch) in [(11u64, ArchitectureId::ConvNetA), (12, ArchitectureId::ConvNetB)] {
            let m = DetectorModel::new_random(arch, [3, 64, 64], seed).unwrap();
            let img = random_image(seed + 20);
            let g = m
                .input_gradient(&img, InputFunctional::CrossEntropy(LabelClass::Fake))
                .unwrap();
            let px = pixels_f64(&img);
            let mut r = crate::seeds::rng(seed, "ref-fd", 1);
            for _ in 0..10 {
                let idx = r.gen_range(0..px.len());
                let h = 1e-3;
                let mut up = px.clone();
                up[idx] += h;
                let mut dn = px.clone();
                dn[idx] -= h;
                let fd = (cross_entropy_raw(&m, &up, LabelClass::Fake)
                    - cross_entropy_raw(&m, &dn, LabelClass::Fake))
                    / (2.0 * h);
                let an = g.data()[idx] as f64;
                let denom = 1.0_f64.max(fd.abs());
                assert!(
                    (fd - an).abs() / denom <= 1e-3,
                    "{}: fd {fd} vs production {an}",
                    m.architecture().name()
                );
            }
        }
    }
}
