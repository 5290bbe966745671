use serde::{Deserialize, Serialize};

use super::{Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.001 }
    }
}

/// Adam with decoupled weight decay applied to weights only.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every trainable parameter; the list order must be stable.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        let trainable: Vec<&mut Param> = params.into_iter().filter(|p| p.trainable()).collect();
        if self.m.is_empty() {
            self.m = trainable.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), trainable.len(), "parameter list changed between steps");
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in trainable.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.kind == ParamKind::Weight { 1.0 - lr * c.weight_decay } else { 1.0 };
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                p.value[i] = p.value[i] * decay - lr * update;
            }
        }
    }
}
