use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer shape mismatch");
        assert_eq!(grad.len(), self.m.len(), "gradient shape mismatch");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = OptimizerState::new(2, AdamConfig::default());
        let mut p = [1.0, -1.0];
        opt.apply(&mut p, &[4.0, -0.5]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::new(1, AdamConfig::default());
        let mut p = [0.25];
        opt.apply(&mut p, &[0.0]);
        assert_eq!(p, [0.25]);
    }
}
