//! Gaussian blur: separable kernel truncated at 3 sigma and renormalized,
//! reflection padding at the borders.

use crate::error::{DataError, Result};
use dflab_core::ImageTensor;

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-0.5 * d * d / (sigma * sigma)).exp());
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DataError::InvalidParameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let [c, h, w] = image.shape();
    let k = kernel(sigma);
    let radius = (k.len() - 1) / 2;

    // horizontal pass in f64, then vertical
    let mut tmp = vec![0.0f64; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + j as isize - radius as isize, w);
                    acc += kv * image.get(ci, y, sx) as f64;
                }
                tmp[(ci * h + y) * w + x] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + j as isize - radius as isize, h);
                    acc += kv * tmp[(ci * h + sy) * w + x];
                }
                out[(ci * h + y) * w + x] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(ImageTensor::new(c, h, w, out).expect("blur output stays in [0,1]"))
}
