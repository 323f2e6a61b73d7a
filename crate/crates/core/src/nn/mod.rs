//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` accumulates parameter gradients into [`Param::grad`] while
//! returning the gradient with respect to the layer input. `infer` is the
//! read-only inference path used when a model is shared between threads.

mod activation;
mod conv;
mod linear;
mod norm;
mod optim;
mod pool;

pub use activation::{Activation, ActivationKind};
pub use conv::{Conv2d, ConvTranspose2d, Geometry};
pub use linear::Linear;
pub use norm::BatchNorm;
pub use optim::{Adam, AdamConfig, SgdMomentum};
pub use pool::{Dropout, Flatten, MaxPool2d};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// How batch-normalization layers treat statistics during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and queue them for the running
    /// averages; queued statistics are applied by `commit_stats`.
    Train,
    /// Normalize with batch statistics, leave running averages alone.
    TrainFrozen,
    /// Normalize with running statistics.
    Eval,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::lit(dist.sample(rng)))
            .collect();
        Self::new(Tensor::from_vec(shape, data).expect("shape matches"))
    }
}

/// One named entry of a network's state, handed out by `visit`.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-trainable state such as batch-norm running statistics.
    Buffer(&'a mut Tensor<T>),
}

pub type Visitor<'v, T> = dyn FnMut(&str, Slot<'_, T>) + 'v;

pub trait Layer<T: Real>: Send + Sync {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T>;

    fn infer(&self, x: &Tensor<T>) -> Tensor<T>;

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T>;

    /// Visits parameters and buffers as `<prefix>.<name>`.
    fn visit(&mut self, _prefix: &str, _f: &mut Visitor<'_, T>) {}

    fn commit_stats(&mut self) {}
}

/// An ordered stack of named layers.
pub struct Sequential<T> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Self { layers: Vec::new() }
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut h = x.clone();
        for (_, layer) in &mut self.layers {
            h = layer.forward(&h, mode);
        }
        h
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        for (name, layer) in &mut self.layers {
            layer.visit(&join(prefix, name), f);
        }
    }

    fn commit_stats(&mut self) {
        for (_, layer) in &mut self.layers {
            layer.commit_stats();
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A model made of layers: exposes named state for optimizers and
/// checkpoints.
pub trait Network<T: Real> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>);

    fn commit_stats(&mut self);

    fn zero_grad(&mut self) {
        self.visit_state(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.grad.fill(T::zero());
            }
        });
    }

    /// Number of trainable scalars.
    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_state(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                n += p.value.len();
            }
        });
        n
    }

    /// Snapshot of every parameter and buffer, in visit order.
    fn export_state(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_state(&mut |name, slot| {
            let t = match slot {
                Slot::Param(p) => p.value.clone(),
                Slot::Buffer(b) => b.clone(),
            };
            out.push((name.to_string(), t));
        });
        out
    }
}
