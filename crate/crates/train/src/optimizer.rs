//! Adam over a flat parameter vector.

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    Adam,
}

impl OptimizerId {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerId::Adam => "adam",
        }
    }
}

pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(p) = sum (p - t)^2
        let target = [1.0f32, -2.0, 0.5];
        let mut p = vec![0.0f32; 3];
        let mut opt = Adam::new(0.05, 3);
        for _ in 0..400 {
            let g: Vec<f32> = p.iter().zip(&target).map(|(a, t)| 2.0 * (a - t)).collect();
            opt.step(&mut p, &g);
        }
        for (a, t) in p.iter().zip(&target) {
            assert!((a - t).abs() < 1e-2, "{a} vs {t}");
        }
    }
}
