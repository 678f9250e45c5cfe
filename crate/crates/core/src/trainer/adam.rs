use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("train.adam.{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            errs.push(format!("train.adam.epsilon must be > 0, got {}", self.epsilon));
        }
        errs
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Forget both moment estimates and the step count.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.clear();
        self.v.clear();
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Apply one update from the gradients accumulated in `model`.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) {
        let mut params = model.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let corr1 = T::lit(1.0 - c.beta1.powi(self.step));
        let corr2 = T::lit(1.0 - c.beta2.powi(self.step));
        let (lr, eps) = (T::lit(lr), T::lit(c.epsilon));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BackboneSpec, HeadKind};

    #[test]
    fn first_step_moves_each_weight_by_about_lr() {
        let mut model = build_model::<f64>(&BackboneSpec::tiny(), HeadKind::XFishMp, (32, 32), 0).unwrap();
        let before = model.export_weights();
        for p in model.params_mut() {
            for (i, g) in p.grad.iter_mut().enumerate() {
                *g = if i % 2 == 0 { 0.3 } else { -2.0 };
            }
        }
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut model, 1e-3);
        for (a, b) in before.iter().zip(model.export_weights()) {
            assert!(((a - b).abs() - 1e-3).abs() < 1e-9);
        }
        adam.reset();
        assert_eq!(adam.steps(), 0);
    }
}
