//! Adaptive-moment optimizer with L2 weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "epsilon must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Ok(Adam {
            config,
            steps: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update. Parameters without a gradient see only
    /// the weight-decay term.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let correct1 = 1.0 - (c.beta1 as f64).powi(t);
        let correct2 = 1.0 - (c.beta2 as f64).powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = grads.param(id).map(|g| g.data());
            let value = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            for i in 0..value.len() {
                let g = grad.map_or(0.0, |g| g[i]) + c.weight_decay * value[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] as f64 / correct1;
                let v_hat = v[i] as f64 / correct2;
                value[i] -= (c.learning_rate as f64 * m_hat / (v_hat.sqrt() + c.epsilon as f64)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Tape};
    use crate::tensor::{Shape, Tensor};

    fn probe(bias: f32, target: f32) -> (ParamStore, crate::params::ParamId, Gradients) {
        // loss = mean((x + b) - target)^2 realized as |x + b - t| on one element,
        // built from graph ops: d = |b - (target - x)|
        let mut store = ParamStore::new();
        let id = store.add("b", Tensor::full(Shape::new(1, 1, 1, 1), bias));
        let mut tape = Tape::new();
        let b = tape.param(&store, id);
        let t = tape.input(Tensor::full(Shape::new(1, 1, 1, 1), target));
        let d = tape.abs_diff(&b, &t).unwrap();
        let grads = tape.backward(d).unwrap();
        (store, id, grads)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut store, id, grads) = probe(0.3, 1.0);
        let before = store.get(id).clone();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &store).unwrap();
        for _ in 0..3 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(id).data(), before.data());
    }

    #[test]
    fn step_moves_against_gradient() {
        for (bias, target) in [(0.3, 1.0), (2.0, -1.0)] {
            let (mut store, id, grads) = probe(bias, target);
            let g = grads.param(id).unwrap().data()[0];
            let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
            adam.step(&mut store, &grads).unwrap();
            let moved = store.get(id).data()[0] - bias;
            assert!(moved * g < 0.0, "gradient {g}, moved {moved}");
            // first bias-corrected step has magnitude close to the learning rate
            assert!((moved.abs() - 1e-3).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let store = ParamStore::new();
        for cfg in [
            AdamConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            AdamConfig {
                beta1: 1.0,
                ..Default::default()
            },
            AdamConfig {
                epsilon: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(Adam::new(cfg, &store), Err(Error::Config(_))));
        }
    }
}
