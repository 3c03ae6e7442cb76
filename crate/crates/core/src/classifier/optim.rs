use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Layer, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient (biases included).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of a list of parameter tensors.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len(), "tensor {k} shape mismatch");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] + c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) {
        let mut params: Vec<&mut [f64]> = Vec::new();
        for Layer { w, b } in mlp.layers.iter_mut() {
            params.push(w.as_mut_slice());
            params.push(b.as_mut_slice());
        }
        let g: Vec<&[f64]> = grads.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect();
        self.step_slices(&mut params, &g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut w = vec![1.5, -2.0];
        for _ in 0..10 {
            adam.step_slices(&mut [&mut w], &[&[0.0, 0.0]]);
        }
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_is_about_lr() {
        for scale in [1e-6, 1.0, 1e6] {
            let mut adam = Adam::new(AdamConfig::default());
            let mut w = vec![0.0];
            adam.step_slices(&mut [&mut w], &[&[scale]]);
            assert!((w[0].abs() - 1e-3).abs() < 0.05 * 1e-3, "{scale}: {}", w[0]);
        }
    }
}
