//! f32 kernels behind the tape ops: stride-1 same-padding convolution (via
//! im2col + GEMM), its weight-gradient twin, 2x average pooling, and nearest
//! upsampling. All convolutions here use odd kernel sizes and padding k/2, so
//! input and output share spatial dims; downsampling is done by pooling only.

use crate::tensor::Tensor;
use ndarray::{Array2, ArrayView2};

/// Zero-padded copy of a CHW tensor, pad cells on every spatial side.
fn pad_input(x: &Tensor, pad: usize) -> Vec<f32> {
    let (c, h, w) = x.chw();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; c * hp * wp];
    let xd = x.data();
    for ci in 0..c {
        for y in 0..h {
            let src = ci * h * w + y * w;
            let dst = ci * hp * wp + (y + pad) * wp + pad;
            out[dst..dst + w].copy_from_slice(&xd[src..src + w]);
        }
    }
    out
}

/// im2col matrix with layout (C*k*k) x (H*W): row r = (ci, ky, kx), column
/// = output position. Rows are built with contiguous row copies from the
/// padded input.
fn im2col(xpad: &[f32], c: usize, h: usize, w: usize, k: usize) -> Array2<f32> {
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut col = Array2::<f32>::zeros((c * k * k, h * w));
    {
        let cd = col.as_slice_mut().expect("contiguous col");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let rb = r * h * w;
                    for y in 0..h {
                        let src = ci * hp * wp + (y + ky) * wp + kx;
                        let dst = rb + y * w;
                        cd[dst..dst + w].copy_from_slice(&xpad[src..src + w]);
                    }
                }
            }
        }
    }
    col
}

/// conv2d, stride 1, same padding. x: [Ci,H,W], w: [Co,Ci,k,k] -> [Co,H,W].
pub fn conv2d_same(x: &Tensor, w: &Tensor) -> Tensor {
    let (ci, h, wd) = x.chw();
    let wdims = w.dims();
    assert_eq!(wdims.len(), 4, "conv weight must be rank 4");
    let (co, wci, k) = (wdims[0], wdims[1], wdims[2]);
    assert_eq!(wdims[2], wdims[3], "conv kernel must be square");
    assert_eq!(wci, ci, "conv channel mismatch");
    assert!(k % 2 == 1, "conv kernel must be odd");

    let w2 = ArrayView2::from_shape((co, ci * k * k), w.data()).unwrap();
    let out = if k == 1 {
        let x2 = ArrayView2::from_shape((ci, h * wd), x.data()).unwrap();
        w2.dot(&x2)
    } else {
        let xpad = pad_input(x, k / 2);
        let col = im2col(&xpad, ci, h, wd, k);
        w2.dot(&col)
    };
    let (raw, _) = out.into_raw_vec_and_offset();
    Tensor::from_vec(&[co, h, wd], raw)
}

/// Gradient of conv2d_same w.r.t. its weights. x: [Ci,H,W], dy: [Co,H,W]
/// -> [Co,Ci,k,k].
pub fn conv2d_grad_weight(x: &Tensor, dy: &Tensor, k: usize) -> Tensor {
    let (ci, h, wd) = x.chw();
    let (co, hy, wy) = dy.chw();
    assert_eq!((h, wd), (hy, wy), "conv grad-weight spatial mismatch");

    let dy2 = ArrayView2::from_shape((co, h * wd), dy.data()).unwrap();
    let dw = if k == 1 {
        let x2 = ArrayView2::from_shape((ci, h * wd), x.data()).unwrap();
        dy2.dot(&x2.t())
    } else {
        let xpad = pad_input(x, k / 2);
        let col = im2col(&xpad, ci, h, wd, k);
        dy2.dot(&col.t())
    };
    let (raw, _) = dw.into_raw_vec_and_offset();
    Tensor::from_vec(&[co, ci, k, k], raw)
}

/// Kernel transpose-flip: [Co,Ci,k,k] -> [Ci,Co,k,k] with both spatial axes
/// reversed. conv2d_same(dy, flip_transpose(w)) is the input gradient of
/// conv2d_same(x, w).
pub fn flip_transpose(w: &Tensor) -> Tensor {
    let d = w.dims();
    let (co, ci, k) = (d[0], d[1], d[2]);
    let mut out = vec![0.0f32; w.len()];
    let wd = w.data();
    for o in 0..co {
        for i in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let src = ((o * ci + i) * k + ky) * k + kx;
                    let dst = ((i * co + o) * k + (k - 1 - ky)) * k + (k - 1 - kx);
                    out[dst] = wd[src];
                }
            }
        }
    }
    Tensor::from_vec(&[ci, co, k, k], out)
}

/// 2x2 average pooling, stride 2. Spatial dims must be even.
pub fn avgpool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even dims");
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0f32; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            let r0 = ci * h * w + 2 * y * w;
            let r1 = r0 + w;
            let ob = ci * ho * wo + y * wo;
            for x2 in 0..wo {
                let s = xd[r0 + 2 * x2] + xd[r0 + 2 * x2 + 1] + xd[r1 + 2 * x2] + xd[r1 + 2 * x2 + 1];
                out[ob + x2] = 0.25 * s;
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (ho, wo) = (h * 2, w * 2);
    let xd = x.data();
    let mut out = vec![0.0f32; c * ho * wo];
    for ci in 0..c {
        for y in 0..h {
            let src = ci * h * w + y * w;
            let d0 = ci * ho * wo + 2 * y * wo;
            for x2 in 0..w {
                let v = xd[src + x2];
                out[d0 + 2 * x2] = v;
                out[d0 + 2 * x2 + 1] = v;
            }
            let (a, b) = out.split_at_mut(d0 + wo);
            b[..wo].copy_from_slice(&a[d0..d0 + wo]);
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor) -> Tensor {
        let (ci, h, wd) = x.chw();
        let d = w.dims();
        let (co, k) = (d[0], d[2]);
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[co, h, wd]);
        for o in 0..co {
            for y in 0..h as isize {
                for x2 in 0..wd as isize {
                    let mut acc = 0.0f32;
                    for i in 0..ci {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let yy = y + ky - p;
                                let xx = x2 + kx - p;
                                if yy >= 0 && yy < h as isize && xx >= 0 && xx < wd as isize {
                                    acc += x.data()[(i * h + yy as usize) * wd + xx as usize]
                                        * w.data()[((o * ci + i) * k + ky as usize) * k + kx as usize];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * h + y as usize) * wd + x2 as usize] = acc;
                }
            }
        }
        out
    }

    fn rng_tensor(dims: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut r = crate::seeds::rng(seed, "kernel-test", 0);
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_naive() {
        for &(ci, co, h, k) in &[(3usize, 4usize, 6usize, 3usize), (2, 3, 5, 1), (4, 2, 8, 3)] {
            let x = rng_tensor(&[ci, h, h], 1);
            let w = rng_tensor(&[co, ci, k, k], 2);
            let got = conv2d_same(&x, &w);
            let want = naive_conv(&x, &w);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grad_weight_matches_inner_products() {
        // d<dy, conv(x,w)>/dw[idx] equals conv restricted to that tap.
        let x = rng_tensor(&[2, 5, 5], 3);
        let dy = rng_tensor(&[3, 5, 5], 4);
        let k = 3usize;
        let dw = conv2d_grad_weight(&x, &dy, k);
        // finite difference on a few weight entries against <dy, conv(x,w)>
        let mut w = Tensor::zeros(&[3, 2, k, k]);
        let f = |w: &Tensor| -> f64 {
            conv2d_same(&x, w)
                .data()
                .iter()
                .zip(dy.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        for idx in [0usize, 7, 17, 35] {
            let h = 1e-2f32;
            w.data_mut()[idx] = h;
            let up = f(&w);
            w.data_mut()[idx] = -h;
            let dn = f(&w);
            w.data_mut()[idx] = 0.0;
            let fd = (up - dn) / (2.0 * h as f64);
            let an = dw.data()[idx] as f64;
            assert!((fd - an).abs() < 1e-3 * (1.0 + an.abs()), "idx {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn flip_transpose_is_involution() {
        let w = rng_tensor(&[3, 2, 3, 3], 5);
        let back = flip_transpose(&flip_transpose(&w));
        assert_eq!(w, back);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x = rng_tensor(&[2, 4, 4], 6);
        let p = avgpool2(&x);
        assert_eq!(p.dims(), &[2, 2, 2]);
        let u = upsample2(&p);
        assert_eq!(u.dims(), &[2, 4, 4]);
        // pooling after nearest upsample is identity
        let back = avgpool2(&u);
        for (a, b) in back.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
