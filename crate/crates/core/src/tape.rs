//! Tape-based reverse-mode autodiff.
//!
//! Values are computed eagerly as nodes are pushed. `backward` walks the tape
//! in reverse and builds the adjoints *as new tape nodes*, so a gradient is
//! itself a differentiable quantity: calling `backward` again on a scalar
//! built from gradient nodes yields exact second-order derivatives. The op
//! set is closed under its own backward rules (a conv's input gradient is a
//! conv of the flipped-transposed kernel, a weight gradient has conv-form
//! backward rules, and so on), which is what the gradient-norm training
//! penalty relies on.
//!
//! Ops whose derivative is zero almost everywhere (relu gates, step masks)
//! are encoded as explicit mask nodes that do not propagate gradient.

use crate::kernels;
use crate::tensor::Tensor;

pub type NodeId = usize;

const NONE: NodeId = usize::MAX;

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Conv { k: usize },
    ConvGradWeight { k: usize },
    FlipTranspose,
    AvgPool2,
    Upsample2,
    Add,
    Sub,
    Mul,
    AddBias,
    SumSpatial { h: usize, w: usize },
    BroadcastSpatial { h: usize, w: usize },
    Relu,
    LeakyRelu { slope: f32 },
    /// 1 where input > 0, `slope` elsewhere. Gradient does not flow through.
    GateMask { slope: f32 },
    Sigmoid,
    Tanh,
    Scale { c: f32 },
    AddConst { c: f32 },
    Square,
    SumAll,
    BroadcastAs { dims: Vec<usize> },
    Select { index: usize },
    ScatterAt { index: usize, len: usize },
    MaxConst { c: f32 },
    /// 1 where input > c, 0 elsewhere. Gradient does not flow through.
    StepAbove { c: f32 },
    ConcatC,
    SliceC { from: usize, to: usize },
    PadC { before: usize, after: usize },
    Reshape { dims: Vec<usize> },
    /// Elementwise product of a tensor with a scalar node.
    ScaleByScalar,
    /// Fused softmax cross-entropy against a fixed class index. First-order
    /// only: its backward treats the softmax residual as a constant.
    CrossEntropyLogits { target: usize },
}

struct Node {
    op: Op,
    a: NodeId,
    b: NodeId,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.dims()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            a: NONE,
            b: NONE,
            value,
            needs_grad: requires_grad,
        });
        self.nodes.len() - 1
    }

    fn push(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        let needs_grad = match op {
            Op::GateMask { .. } | Op::StepAbove { .. } => false,
            _ => {
                self.nodes[a].needs_grad
                    || (b != NONE && self.nodes[b].needs_grad)
            }
        };
        let value = self.eval(&op, a, b);
        self.nodes.push(Node {
            op,
            a,
            b,
            value,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn eval(&self, op: &Op, a: NodeId, b: NodeId) -> Tensor {
        let va = &self.nodes[a].value;
        match op {
            Op::Leaf => unreachable!("leaf pushed through push()"),
            Op::Conv { .. } => kernels::conv2d_same(va, &self.nodes[b].value),
            Op::ConvGradWeight { k } => {
                kernels::conv2d_grad_weight(va, &self.nodes[b].value, *k)
            }
            Op::FlipTranspose => kernels::flip_transpose(va),
            Op::AvgPool2 => kernels::avgpool2(va),
            Op::Upsample2 => kernels::upsample2(va),
            Op::Add => zip(va, &self.nodes[b].value, |x, y| x + y),
            Op::Sub => zip(va, &self.nodes[b].value, |x, y| x - y),
            Op::Mul => zip(va, &self.nodes[b].value, |x, y| x * y),
            Op::AddBias => {
                let (c, h, w) = va.chw();
                let bias = self.nodes[b].value.data();
                assert_eq!(bias.len(), c, "bias length mismatch");
                let mut out = va.clone();
                for ci in 0..c {
                    let bv = bias[ci];
                    for v in &mut out.data_mut()[ci * h * w..(ci + 1) * h * w] {
                        *v += bv;
                    }
                }
                out
            }
            Op::SumSpatial { .. } => {
                let (c, h, w) = va.chw();
                let mut out = vec![0f32; c];
                for ci in 0..c {
                    out[ci] = va.data()[ci * h * w..(ci + 1) * h * w].iter().sum();
                }
                Tensor::from_vec(&[c], out)
            }
            Op::BroadcastSpatial { h, w } => {
                let c = va.len();
                let mut out = Tensor::zeros(&[c, *h, *w]);
                for ci in 0..c {
                    let v = va.data()[ci];
                    out.data_mut()[ci * h * w..(ci + 1) * h * w].fill(v);
                }
                out
            }
            Op::Relu => map(va, |x| if x > 0.0 { x } else { 0.0 }),
            Op::LeakyRelu { slope } => {
                let s = *slope;
                map(va, move |x| if x > 0.0 { x } else { s * x })
            }
            Op::GateMask { slope } => {
                let s = *slope;
                map(va, move |x| if x > 0.0 { 1.0 } else { s })
            }
            Op::Sigmoid => map(va, |x| 1.0 / (1.0 + (-x).exp())),
            Op::Tanh => map(va, |x| x.tanh()),
            Op::Scale { c } => {
                let c = *c;
                map(va, move |x| c * x)
            }
            Op::AddConst { c } => {
                let c = *c;
                map(va, move |x| x + c)
            }
            Op::Square => map(va, |x| x * x),
            Op::SumAll => {
                // f64 accumulation: these sums feed losses and penalties.
                let s: f64 = va.data().iter().map(|&v| v as f64).sum();
                Tensor::scalar(s as f32)
            }
            Op::BroadcastAs { dims } => Tensor::filled(dims, va.item()),
            Op::Select { index } => Tensor::scalar(va.data()[*index]),
            Op::ScatterAt { index, len } => {
                let mut out = Tensor::zeros(&[*len]);
                out.data_mut()[*index] = va.item();
                out
            }
            Op::MaxConst { c } => {
                let c = *c;
                map(va, move |x| x.max(c))
            }
            Op::StepAbove { c } => {
                let c = *c;
                map(va, move |x| if x > c { 1.0 } else { 0.0 })
            }
            Op::ConcatC => {
                let (c1, h, w) = va.chw();
                let vb = &self.nodes[b].value;
                let (c2, h2, w2) = vb.chw();
                assert_eq!((h, w), (h2, w2), "concat spatial mismatch");
                let mut data = Vec::with_capacity((c1 + c2) * h * w);
                data.extend_from_slice(va.data());
                data.extend_from_slice(vb.data());
                Tensor::from_vec(&[c1 + c2, h, w], data)
            }
            Op::SliceC { from, to } => {
                let (_, h, w) = va.chw();
                let data = va.data()[from * h * w..to * h * w].to_vec();
                Tensor::from_vec(&[to - from, h, w], data)
            }
            Op::PadC { before, after } => {
                let (c, h, w) = va.chw();
                let mut out = Tensor::zeros(&[before + c + after, h, w]);
                out.data_mut()[before * h * w..(before + c) * h * w]
                    .copy_from_slice(va.data());
                out
            }
            Op::Reshape { dims } => va.clone().reshaped(dims),
            Op::ScaleByScalar => {
                let s = self.nodes[b].value.item();
                map(va, move |x| s * x)
            }
            Op::CrossEntropyLogits { target } => {
                let z = va.data();
                let m = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                let lse: f64 = z.iter().map(|&v| ((v as f64) - m).exp()).sum();
                let loss = m + lse.ln() - z[*target] as f64;
                Tensor::scalar(loss as f32)
            }
        }
    }

    // ---- op builders ----

    pub fn conv(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let k = self.dims(w)[2];
        self.push(Op::Conv { k }, x, w)
    }
    pub fn conv_grad_weight(&mut self, x: NodeId, dy: NodeId, k: usize) -> NodeId {
        self.push(Op::ConvGradWeight { k }, x, dy)
    }
    pub fn flip_transpose(&mut self, w: NodeId) -> NodeId {
        self.push(Op::FlipTranspose, w, NONE)
    }
    pub fn avgpool2(&mut self, x: NodeId) -> NodeId {
        self.push(Op::AvgPool2, x, NONE)
    }
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Upsample2, x, NONE)
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, a, b)
    }
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddBias, x, b)
    }
    pub fn sum_spatial(&mut self, x: NodeId) -> NodeId {
        let (_, h, w) = self.value(x).chw();
        self.push(Op::SumSpatial { h, w }, x, NONE)
    }
    pub fn broadcast_spatial(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        self.push(Op::BroadcastSpatial { h, w }, x, NONE)
    }
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, x, NONE)
    }
    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        self.push(Op::LeakyRelu { slope }, x, NONE)
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, x, NONE)
    }
    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh, x, NONE)
    }
    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        self.push(Op::Scale { c }, x, NONE)
    }
    pub fn add_const(&mut self, x: NodeId, c: f32) -> NodeId {
        self.push(Op::AddConst { c }, x, NONE)
    }
    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Square, x, NONE)
    }
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumAll, x, NONE)
    }
    pub fn select(&mut self, x: NodeId, index: usize) -> NodeId {
        self.push(Op::Select { index }, x, NONE)
    }
    pub fn max_const(&mut self, x: NodeId, c: f32) -> NodeId {
        self.push(Op::MaxConst { c }, x, NONE)
    }
    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::ConcatC, a, b)
    }
    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        self.push(Op::Reshape { dims: dims.to_vec() }, x, NONE)
    }
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> NodeId {
        self.push(Op::ScaleByScalar, x, s)
    }
    pub fn cross_entropy_logits(&mut self, z: NodeId, target: usize) -> NodeId {
        self.push(Op::CrossEntropyLogits { target }, z, NONE)
    }
    /// Sum of squared entries, i.e. the squared L2 norm.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let sq = self.square(x);
        self.sum_all(sq)
    }
    /// Mean squared difference between two same-shape tensors.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let ss = self.sum_squares(d);
        let n = self.value(a).len() as f32;
        self.scale(ss, 1.0 / n)
    }

    /// Reverse-mode sweep from a scalar root. Returns, for every node that
    /// existed when the call started, the NodeId of its adjoint (None if no
    /// gradient reaches it). The adjoints are ordinary tape nodes, so they
    /// can be differentiated again.
    pub fn backward(&mut self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let n = self.nodes.len();
        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        if self.nodes[root].needs_grad {
            let one = self.leaf(Tensor::scalar(1.0), false);
            adj[root] = Some(one);
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (a, b) = (self.nodes[i].a, self.nodes[i].b);
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::GateMask { .. } | Op::StepAbove { .. } => {}
                Op::Conv { k } => {
                    if self.nodes[a].needs_grad {
                        let wt = self.flip_transpose(b);
                        let dx = self.conv(g, wt);
                        accumulate(self, &mut adj, a, dx);
                    }
                    if self.nodes[b].needs_grad {
                        let dw = self.conv_grad_weight(a, g, k);
                        accumulate(self, &mut adj, b, dw);
                    }
                }
                Op::ConvGradWeight { k } => {
                    // value = dW(x=a, dy=b); g has weight dims
                    if self.nodes[a].needs_grad {
                        let gt = self.flip_transpose(g);
                        let dx = self.conv(b, gt);
                        accumulate(self, &mut adj, a, dx);
                    }
                    if self.nodes[b].needs_grad {
                        let ddy = self.conv(a, g);
                        accumulate(self, &mut adj, b, ddy);
                    }
                    let _ = k;
                }
                Op::FlipTranspose => {
                    let d = self.flip_transpose(g);
                    accumulate(self, &mut adj, a, d);
                }
                Op::AvgPool2 => {
                    let up = self.upsample2(g);
                    let d = self.scale(up, 0.25);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Upsample2 => {
                    let dn = self.avgpool2(g);
                    let d = self.scale(dn, 4.0);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Add => {
                    if self.nodes[a].needs_grad {
                        accumulate(self, &mut adj, a, g);
                    }
                    if self.nodes[b].needs_grad {
                        accumulate(self, &mut adj, b, g);
                    }
                }
                Op::Sub => {
                    if self.nodes[a].needs_grad {
                        accumulate(self, &mut adj, a, g);
                    }
                    if self.nodes[b].needs_grad {
                        let ng = self.scale(g, -1.0);
                        accumulate(self, &mut adj, b, ng);
                    }
                }
                Op::Mul => {
                    if self.nodes[a].needs_grad {
                        let d = self.mul(g, b);
                        accumulate(self, &mut adj, a, d);
                    }
                    if self.nodes[b].needs_grad {
                        let d = self.mul(g, a);
                        accumulate(self, &mut adj, b, d);
                    }
                }
                Op::AddBias => {
                    if self.nodes[a].needs_grad {
                        accumulate(self, &mut adj, a, g);
                    }
                    if self.nodes[b].needs_grad {
                        let d = self.sum_spatial(g);
                        accumulate(self, &mut adj, b, d);
                    }
                }
                Op::SumSpatial { h, w } => {
                    let d = self.broadcast_spatial(g, h, w);
                    accumulate(self, &mut adj, a, d);
                }
                Op::BroadcastSpatial { .. } => {
                    let d = self.sum_spatial(g);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Relu => {
                    let m = self.push(Op::GateMask { slope: 0.0 }, a, NONE);
                    let d = self.mul(g, m);
                    accumulate(self, &mut adj, a, d);
                }
                Op::LeakyRelu { slope } => {
                    let m = self.push(Op::GateMask { slope }, a, NONE);
                    let d = self.mul(g, m);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Sigmoid => {
                    // s' = s (1 - s), in terms of the output node
                    let neg = self.scale(i, -1.0);
                    let om = self.add_const(neg, 1.0);
                    let sp = self.mul(i, om);
                    let d = self.mul(g, sp);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Tanh => {
                    let t2 = self.square(i);
                    let neg = self.scale(t2, -1.0);
                    let dt = self.add_const(neg, 1.0);
                    let d = self.mul(g, dt);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Scale { c } => {
                    let d = self.scale(g, c);
                    accumulate(self, &mut adj, a, d);
                }
                Op::AddConst { .. } => {
                    accumulate(self, &mut adj, a, g);
                }
                Op::Square => {
                    let gx = self.mul(g, a);
                    let d = self.scale(gx, 2.0);
                    accumulate(self, &mut adj, a, d);
                }
                Op::SumAll => {
                    let dims = self.dims(a).to_vec();
                    let d = self.push(Op::BroadcastAs { dims }, g, NONE);
                    accumulate(self, &mut adj, a, d);
                }
                Op::BroadcastAs { .. } => {
                    let d = self.sum_all(g);
                    accumulate(self, &mut adj, a, d);
                }
                Op::Select { index } => {
                    let len = self.value(a).len();
                    let d = self.push(Op::ScatterAt { index, len }, g, NONE);
                    accumulate(self, &mut adj, a, d);
                }
                Op::ScatterAt { index, .. } => {
                    let d = self.select(g, index);
                    accumulate(self, &mut adj, a, d);
                }
                Op::MaxConst { c } => {
                    let m = self.push(Op::StepAbove { c }, a, NONE);
                    let d = self.mul(g, m);
                    accumulate(self, &mut adj, a, d);
                }
                Op::ConcatC => {
                    let c1 = self.dims(a)[0];
                    let c2 = self.dims(b)[0];
                    if self.nodes[a].needs_grad {
                        let d = self.push(Op::SliceC { from: 0, to: c1 }, g, NONE);
                        accumulate(self, &mut adj, a, d);
                    }
                    if self.nodes[b].needs_grad {
                        let d = self.push(
                            Op::SliceC {
                                from: c1,
                                to: c1 + c2,
                            },
                            g,
                            NONE,
                        );
                        accumulate(self, &mut adj, b, d);
                    }
                }
                Op::SliceC { from, to } => {
                    let c = self.dims(a)[0];
                    let d = self.push(
                        Op::PadC {
                            before: from,
                            after: c - to,
                        },
                        g,
                        NONE,
                    );
                    accumulate(self, &mut adj, a, d);
                }
                Op::PadC { before, .. } => {
                    let c = self.dims(a)[0];
                    let d = self.push(
                        Op::SliceC {
                            from: before,
                            to: before + c,
                        },
                        g,
                        NONE,
                    );
                    accumulate(self, &mut adj, a, d);
                }
                Op::Reshape { .. } => {
                    let dims = self.dims(a).to_vec();
                    let d = self.reshape(g, &dims);
                    accumulate(self, &mut adj, a, d);
                }
                Op::ScaleByScalar => {
                    if self.nodes[a].needs_grad {
                        let d = self.scale_by_scalar(g, b);
                        accumulate(self, &mut adj, a, d);
                    }
                    if self.nodes[b].needs_grad {
                        let p = self.mul(g, a);
                        let d = self.sum_all(p);
                        accumulate(self, &mut adj, b, d);
                    }
                }
                Op::CrossEntropyLogits { target } => {
                    // residual softmax(z) - onehot, frozen as a constant
                    let z = self.value(a).data();
                    let m = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let exps: Vec<f64> = z.iter().map(|&v| ((v as f64) - m).exp()).collect();
                    let s: f64 = exps.iter().sum();
                    let mut res: Vec<f32> =
                        exps.iter().map(|&e| (e / s) as f32).collect();
                    res[target] -= 1.0;
                    let len = res.len();
                    let rc = self.leaf(Tensor::from_vec(&[len], res), false);
                    let d = self.scale_by_scalar(rc, g);
                    accumulate(self, &mut adj, a, d);
                }
            }
        }
        Gradients { adj }
    }
}

fn accumulate(tape: &mut Tape, adj: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
    adj[target] = Some(match adj[target] {
        Some(existing) => tape.add(existing, contrib),
        None => contrib,
    });
}

pub struct Gradients {
    adj: Vec<Option<NodeId>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<NodeId> {
        self.adj.get(id).copied().flatten()
    }
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    assert_eq!(a.dims(), b.dims(), "elementwise shape mismatch");
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, &y)| *x = f(*x, y));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng_tensor(dims: &[usize], seed: u64) -> Tensor {
        let mut r = crate::seeds::rng(seed, "tape-test", 0);
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    /// Finite-difference check of d(scalar fn)/d(leaf) for a graph builder.
    fn gradcheck(
        dims: &[usize],
        seed: u64,
        build: impl Fn(&mut Tape, NodeId) -> NodeId,
        n_probe: usize,
    ) {
        let base = rng_tensor(dims, seed);
        let mut tape = Tape::new();
        let x = tape.leaf(base.clone(), true);
        let y = build(&mut tape, x);
        assert_eq!(tape.value(y).len(), 1, "gradcheck target must be scalar");
        let grads = tape.backward(y);
        let gx = grads.get(x).expect("gradient exists");
        let g = tape.value(gx).clone();

        let mut r = crate::seeds::rng(seed, "tape-test-probe", 1);
        let h = 1e-2f32;
        for _ in 0..n_probe {
            let idx = r.gen_range(0..base.len());
            let eval = |v: f32| -> f64 {
                let mut t = base.clone();
                t.data_mut()[idx] = v;
                let mut tp = Tape::new();
                let xx = tp.leaf(t, false);
                let yy = build(&mut tp, xx);
                tp.value(yy).item() as f64
            };
            let fd = (eval(base.data()[idx] + h) - eval(base.data()[idx] - h)) / (2.0 * h as f64);
            let an = g.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * (1.0 + an.abs().max(fd.abs())),
                "idx {idx}: fd {fd} vs grad {an}"
            );
        }
    }

    #[test]
    fn gradcheck_conv_chain() {
        let w = rng_tensor(&[4, 3, 3, 3], 11);
        gradcheck(
            &[3, 6, 6],
            1,
            move |t, x| {
                let wn = t.leaf(w.clone(), false);
                let c = t.conv(x, wn);
                let r = t.leaky_relu(c, 0.1);
                let p = t.avgpool2(r);
                t.sum_squares(p)
            },
            12,
        );
    }

    #[test]
    fn gradcheck_conv_weights() {
        let x = rng_tensor(&[2, 6, 6], 21);
        gradcheck(
            &[3, 2, 3, 3],
            2,
            move |t, w| {
                let xn = t.leaf(x.clone(), false);
                let c = t.conv(xn, w);
                let s = t.sigmoid(c);
                t.sum_all(s)
            },
            12,
        );
    }

    #[test]
    fn gradcheck_unet_style_ops() {
        let w = rng_tensor(&[2, 6, 3, 3], 31);
        gradcheck(
            &[3, 4, 4],
            3,
            move |t, x| {
                let p = t.avgpool2(x);
                let u = t.upsample2(p);
                let cat = t.concat_c(u, x);
                let wn = t.leaf(w.clone(), false);
                let c = t.conv(cat, wn);
                let s = t.tanh(c);
                t.sum_squares(s)
            },
            12,
        );
    }

    #[test]
    fn gradcheck_cross_entropy() {
        gradcheck(
            &[2],
            4,
            |t, z| t.cross_entropy_logits(z, 0),
            2,
        );
    }

    #[test]
    fn second_order_matches_analytic_quadratic() {
        // y = sum(w .* x), penalty = |dy/dx|^2 = |w|^2; d(penalty)/dw = 2w.
        let w0 = rng_tensor(&[5], 41);
        let mut tape = Tape::new();
        let x = tape.leaf(rng_tensor(&[5], 42), true);
        let w = tape.leaf(w0.clone(), true);
        let p = tape.mul(w, x);
        let y = tape.sum_all(p);
        let g1 = tape.backward(y);
        let dx = g1.get(x).unwrap();
        let pen = tape.sum_squares(dx);
        let g2 = tape.backward(pen);
        let dpen_dw = g2.get(w).expect("second-order grad exists");
        for (got, want) in tape.value(dpen_dw).data().iter().zip(w0.data()) {
            assert!((got - 2.0 * want).abs() < 1e-5, "{got} vs {}", 2.0 * want);
        }
    }

    #[test]
    fn second_order_conv_penalty_fd() {
        // penalty(w) = |d/dx select(conv-sigmoid path)|^2 checked against FD
        // in w. Sigmoid keeps the map smooth so central differences are valid
        // everywhere (relu gates would put FD probes across kinks).
        let x0 = rng_tensor(&[2, 4, 4], 51);
        let w0 = rng_tensor(&[2, 2, 3, 3], 52);
        let b0 = rng_tensor(&[2], 53);

        let penalty = |wv: &Tensor| -> f64 {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone(), true);
            let w = t.leaf(wv.clone(), false);
            let b = t.leaf(b0.clone(), false);
            let c = t.conv(x, w);
            let cb = t.add_bias(c, b);
            let r = t.sigmoid(cb);
            let s = t.sum_spatial(r);
            let z0 = t.select(s, 0);
            let g = t.backward(z0);
            let dx = g.get(x).unwrap();
            let p = t.sum_squares(dx);
            t.value(p).item() as f64
        };

        // analytic second-order gradient
        let mut t = Tape::new();
        let x = t.leaf(x0.clone(), true);
        let w = t.leaf(w0.clone(), true);
        let b = t.leaf(b0.clone(), false);
        let c = t.conv(x, w);
        let cb = t.add_bias(c, b);
        let r = t.sigmoid(cb);
        let s = t.sum_spatial(r);
        let z0 = t.select(s, 0);
        let g1 = t.backward(z0);
        let dx = g1.get(x).unwrap();
        let pen = t.sum_squares(dx);
        let g2 = t.backward(pen);
        let dpen_dw = g2.get(w).unwrap();
        let analytic = t.value(dpen_dw).clone();

        let mut r2 = crate::seeds::rng(54, "tape-test-2nd", 0);
        let h = 1e-2f32;
        for _ in 0..10 {
            let idx = r2.gen_range(0..w0.len());
            let mut wp = w0.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w0.clone();
            wm.data_mut()[idx] -= h;
            let fd = (penalty(&wp) - penalty(&wm)) / (2.0 * h as f64);
            let an = analytic.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * (1.0 + an.abs().max(fd.abs())),
                "idx {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn no_grad_leaves_are_skipped() {
        let mut tape = Tape::new();
        let x = tape.leaf(rng_tensor(&[4], 61), false);
        let w = tape.leaf(rng_tensor(&[4], 62), true);
        let p = tape.mul(w, x);
        let y = tape.sum_all(p);
        let g = tape.backward(y);
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }
}
