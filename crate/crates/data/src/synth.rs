//! Procedural image synthesis. `generate_portrait` draws simple randomized
//! face-like compositions that act as the "real" corpus at desk scale;
//! `generate_synthetic_fake` composites the face region of a target portrait
//! into a source portrait through a smooth random warp and a soft seam,
//! leaving the kind of local compositing artifacts a detector can learn.

use crate::error::{DataError, Result};
use dflab_core::{seeds, ImageTensor};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlendMode {
    /// Smooth feathered seam of width `seam_softness`.
    Feathered,
    /// Binary mask; the seam is a hard edge.
    Hard,
}

#[derive(Clone, Debug)]
pub struct SyntheticFakeConfig {
    /// Warp displacement amplitude as a fraction of min(height, width) / 16.
    pub warp_strength: f64,
    pub blend_mode: BlendMode,
    /// Seam feather width in pixels (Feathered mode).
    pub seam_softness: f64,
    pub seed: u64,
}

impl Default for SyntheticFakeConfig {
    fn default() -> Self {
        SyntheticFakeConfig {
            warp_strength: 1.0,
            blend_mode: BlendMode::Feathered,
            seam_softness: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticFakeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warp_strength >= 0.0 && self.warp_strength.is_finite()) {
            return Err(DataError::InvalidParameter(
                "warp_strength must be finite and >= 0".into(),
            ));
        }
        if !(self.seam_softness >= 0.0 && self.seam_softness.is_finite()) {
            return Err(DataError::InvalidParameter(
                "seam_softness must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    if e1 <= e0 {
        return if x < e0 { 0.0 } else { 1.0 };
    }
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Normalized signed ellipse field: 1 at the center, 0 on the boundary,
/// negative outside.
fn ellipse_field(y: f32, x: f32, cy: f32, cx: f32, ry: f32, rx: f32) -> f32 {
    let dy = (y - cy) / ry;
    let dx = (x - cx) / rx;
    1.0 - (dy * dy + dx * dx).sqrt()
}

/// One randomized portrait: gradient background, skin-tone head ellipse,
/// hair cap, eyes, mouth, vertical shading, and low-amplitude pixel noise.
pub fn generate_portrait(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = seeds::rng(seed, "portrait", 0);
    let (h, w) = (height as f32, width as f32);

    let bg_top: [f32; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let bg_bot: [f32; 3] = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];

    let cy = h * rng.gen_range(0.40..0.52);
    let cx = w * rng.gen_range(0.44..0.56);
    let ry = h * rng.gen_range(0.28..0.36);
    let rx = w * rng.gen_range(0.21..0.28);

    let skin_r = rng.gen_range(0.55..0.92);
    let skin: [f32; 3] = [
        skin_r,
        skin_r * rng.gen_range(0.68..0.82),
        skin_r * rng.gen_range(0.48..0.66),
    ];
    let hair: [f32; 3] = [
        rng.gen_range(0.05..0.45),
        rng.gen_range(0.05..0.35),
        rng.gen_range(0.05..0.35),
    ];
    let eye_dx = rx * rng.gen_range(0.34..0.48);
    let eye_dy = ry * rng.gen_range(0.12..0.24);
    let eye_r = rng.gen_range(1.2..2.4) * w / 64.0;
    let mouth_dy = ry * rng.gen_range(0.38..0.52);
    let mouth_rx = rx * rng.gen_range(0.35..0.55);
    let mouth_ry = eye_r * rng.gen_range(0.5..0.9);
    let mouth: [f32; 3] = [rng.gen_range(0.4..0.7), 0.15, 0.18];
    let light = rng.gen_range(0.85..1.0);

    let mut data = vec![0.0f32; 3 * height * width];
    let mut noise = seeds::rng(seed, "portrait-noise", 1);
    for y in 0..height {
        for x in 0..width {
            let yf = y as f32;
            let xf = x as f32;
            let t = yf / h;
            let mut px = [
                bg_top[0] * (1.0 - t) + bg_bot[0] * t,
                bg_top[1] * (1.0 - t) + bg_bot[1] * t,
                bg_top[2] * (1.0 - t) + bg_bot[2] * t,
            ];

            let head = ellipse_field(yf, xf, cy, cx, ry, rx);
            let head_a = smoothstep(0.0, 2.0 / ry.min(rx) * 2.0, head);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - head_a) + skin[c] * head_a;
            }

            // hair: upper band of the head plus a cap above it
            let hair_f = ellipse_field(yf, xf, cy - ry * 0.55, cx, ry * 0.62, rx * 1.04);
            let hair_a = smoothstep(0.0, 0.12, hair_f);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - hair_a) + hair[c] * hair_a;
            }

            for side in [-1.0f32, 1.0] {
                let e = ellipse_field(yf, xf, cy - eye_dy, cx + side * eye_dx, eye_r, eye_r * 1.4);
                let a = smoothstep(0.0, 0.35, e);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + 0.08 * a;
                }
            }

            let mf = ellipse_field(yf, xf, cy + mouth_dy, cx, mouth_ry, mouth_rx);
            let ma = smoothstep(0.0, 0.3, mf);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - ma) + mouth[c] * ma;
            }

            let shade = light * (1.0 - 0.12 * t);
            let n: f32 = noise.gen_range(-0.015..0.015);
            for c in 0..3 {
                data[(c * height + y) * width + x] = (px[c] * shade + n).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(3, height, width, data).expect("portrait stays in [0,1]")
}

fn bilinear(img: &ImageTensor, c: usize, y: f32, x: f32) -> f32 {
    let (h, w) = (img.height() as f32, img.width() as f32);
    let yc = y.clamp(0.0, h - 1.0);
    let xc = x.clamp(0.0, w - 1.0);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let fy = yc - y0 as f32;
    let fx = xc - x0 as f32;
    let v00 = img.get(c, y0, x0);
    let v01 = img.get(c, y0, x1);
    let v10 = img.get(c, y1, x0);
    let v11 = img.get(c, y1, x1);
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Composite the center face region of `target` into `source` under a smooth
/// random warp with a soft (or hard) seam. Output pixels are convex blends of
/// valid pixels, so the result is always a valid image.
pub fn generate_synthetic_fake(
    source: &ImageTensor,
    target: &ImageTensor,
    config: &SyntheticFakeConfig,
    seed: u64,
) -> Result<ImageTensor> {
    config.validate()?;
    if source.shape() != target.shape() {
        return Err(DataError::InvalidParameter(format!(
            "source shape {:?} != target shape {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let [_, height, width] = source.shape();
    let (h, w) = (height as f32, width as f32);
    let mut rng = seeds::rng(seed ^ config.seed, "synthetic-fake", 0);

    // blend region: centered face-sized ellipse with jitter
    let cy = h * rng.gen_range(0.42..0.5);
    let cx = w * rng.gen_range(0.46..0.54);
    let ry = h * rng.gen_range(0.26..0.34);
    let rx = w * rng.gen_range(0.20..0.27);

    // two-mode sinusoidal displacement field
    let amp = (config.warp_strength as f32) * (height.min(width) as f32) / 16.0;
    let (fy1, fx1) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    let (fy2, fx2) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    let (p1, p2, p3, p4) = (
        rng.gen_range(0.0..std::f32::consts::TAU),
        rng.gen_range(0.0..std::f32::consts::TAU),
        rng.gen_range(0.0..std::f32::consts::TAU),
        rng.gen_range(0.0..std::f32::consts::TAU),
    );

    let feather = (config.seam_softness as f32).max(f32::EPSILON);
    let mut out = source.clone();
    for y in 0..height {
        for x in 0..width {
            let yf = y as f32;
            let xf = x as f32;
            let field = ellipse_field(yf, xf, cy, cx, ry, rx);
            // field is normalized; convert to an approximate pixel distance
            let dist_px = field * ry.min(rx);
            let alpha = match config.blend_mode {
                BlendMode::Feathered => smoothstep(0.0, feather, dist_px),
                BlendMode::Hard => {
                    if dist_px > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if alpha == 0.0 {
                continue;
            }
            let dy = amp
                * 0.5
                * ((std::f32::consts::TAU * fy1 * yf / h + p1).sin()
                    + (std::f32::consts::TAU * fx1 * xf / w + p2).cos());
            let dx = amp
                * 0.5
                * ((std::f32::consts::TAU * fy2 * yf / h + p3).cos()
                    + (std::f32::consts::TAU * fx2 * xf / w + p4).sin());
            for c in 0..3 {
                let warped = bilinear(target, c, yf + dy, xf + dx);
                let blended = source.get(c, y, x) * (1.0 - alpha) + warped * alpha;
                out.set(c, y, x, blended.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portraits_are_valid_and_deterministic() {
        let a = generate_portrait(64, 64, 7);
        let b = generate_portrait(64, 64, 7);
        assert_eq!(a, b);
        let c = generate_portrait(64, 64, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_blend_when_source_equals_target_with_zero_warp() {
        let img = generate_portrait(64, 64, 1);
        let cfg = SyntheticFakeConfig {
            warp_strength: 0.0,
            ..Default::default()
        };
        let fake = generate_synthetic_fake(&img, &img, &cfg, 3).unwrap();
        for (a, b) in fake.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fake_generation_is_deterministic() {
        let s = generate_portrait(64, 64, 1);
        let t = generate_portrait(64, 64, 2);
        let cfg = SyntheticFakeConfig::default();
        let a = generate_synthetic_fake(&s, &t, &cfg, 9).unwrap();
        let b = generate_synthetic_fake(&s, &t, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn black_source_white_target_has_both_extremes() {
        let black = ImageTensor::zeros(3, 64, 64);
        let white = ImageTensor::new(3, 64, 64, vec![1.0; 3 * 64 * 64]).unwrap();
        let fake =
            generate_synthetic_fake(&black, &white, &SyntheticFakeConfig::default(), 5).unwrap();
        let near0 = fake.data().iter().filter(|&&v| v < 0.05).count();
        let near1 = fake.data().iter().filter(|&&v| v > 0.95).count();
        assert!(near0 > 100, "expected a dark region, got {near0} dark pixels");
        assert!(near1 > 100, "expected a bright region, got {near1} bright pixels");
    }

    #[test]
    fn fake_differs_from_source_on_enough_pixels() {
        // quality contract on real portrait pairs with the default config
        for seed in 0..5u64 {
            let s = generate_portrait(64, 64, 100 + seed);
            let t = generate_portrait(64, 64, 200 + seed);
            let fake =
                generate_synthetic_fake(&s, &t, &SyntheticFakeConfig::default(), seed).unwrap();
            let n = fake.data().len();
            let differing = fake
                .data()
                .iter()
                .zip(s.data())
                .filter(|(a, b)| (*a - *b).abs() > 0.05)
                .count();
            assert!(
                differing as f64 >= 0.05 * n as f64,
                "seed {seed}: only {differing}/{n} pixels differ by > 0.05"
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = ImageTensor::zeros(3, 64, 64);
        let b = ImageTensor::zeros(3, 32, 32);
        assert!(generate_synthetic_fake(&a, &b, &SyntheticFakeConfig::default(), 0).is_err());
    }
}
