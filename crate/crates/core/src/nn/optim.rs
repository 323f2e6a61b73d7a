use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Network, Slot};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, keyed by parameter name so that state
/// survives a checkpoint round trip independently of construction order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    moments: IndexMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            moments: IndexMap::new(),
        }
    }

    /// Applies one update to every parameter of `net` using its accumulated
    /// gradients.
    pub fn step(&mut self, net: &mut dyn Network<T>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ob1, ob2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.learning_rate / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.epsilon);
        let moments = &mut self.moments;
        net.visit_state(&mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + ob1 * g[i];
                v[i] = b2 * v[i] + ob2 * g[i] * g[i];
                *w -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        });
    }

    /// First and second moments as named tensors (`<param>.m`, `<param>.v`).
    pub fn export(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(self.moments.len() * 2);
        for (name, (m, v)) in &self.moments {
            out.push((format!("{name}.m"), m.clone()));
            out.push((format!("{name}.v"), v.clone()));
        }
        out
    }

    /// Restores moments saved by [`Adam::export`], validated against the
    /// network's parameter shapes.
    pub fn import(&mut self, steps: u64, tensors: &IndexMap<String, Tensor<T>>, net: &mut dyn Network<T>) -> Result<()> {
        let mut moments = IndexMap::new();
        let mut failure = None;
        net.visit_state(&mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            if failure.is_some() {
                return;
            }
            let m = tensors.get(&format!("{name}.m"));
            let v = tensors.get(&format!("{name}.v"));
            match (m, v) {
                (Some(m), Some(v)) if m.shape() == p.value.shape() && v.shape() == p.value.shape() => {
                    moments.insert(name.to_string(), (m.clone(), v.clone()));
                }
                (None, None) if steps == 0 => {}
                _ => failure = Some(format!("optimizer moments for {name} missing or mis-shaped")),
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Checkpoint(msg));
        }
        if moments.len() * 2 != tensors.len() {
            return Err(Error::Checkpoint("optimizer state names parameters the network does not have".into()));
        }
        self.steps = steps;
        self.moments = moments;
        Ok(())
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: IndexMap::new(),
        }
    }

    pub fn step(&mut self, net: &mut dyn Network<T>) {
        let (lr, mu) = (T::lit(self.learning_rate), T::lit(self.momentum));
        let velocity = &mut self.velocity;
        net.visit_state(&mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let vel = velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let g = p.grad.data();
            let vel = vel.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                vel[i] = mu * vel[i] + g[i];
                *w -= lr * vel[i];
            }
        });
    }
}
