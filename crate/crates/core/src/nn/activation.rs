use super::{Layer, Mode};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// Element-wise nonlinearity. Caches its input (rectifiers) or its output
/// (squashing functions) for the backward pass.
pub struct Activation<T> {
    pub kind: ActivationKind,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn leaky(slope: f64) -> Self {
        Self::new(ActivationKind::LeakyRelu(slope))
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh)
    }

    pub fn sigmoid() -> Self {
        Self::new(ActivationKind::Sigmoid)
    }

    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.kind {
            ActivationKind::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            ActivationKind::LeakyRelu(s) => {
                let s = T::lit(s);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            ActivationKind::Tanh => x.map(|v| v.tanh()),
            ActivationKind::Sigmoid => x.map(sigmoid),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Layer<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let y = self.apply(x);
        self.cache = Some(match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => x.clone(),
            ActivationKind::Tanh | ActivationKind::Sigmoid => y.clone(),
        });
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let c = self.cache.as_ref().expect("activation backward before forward");
        let mut dx = Tensor::zeros(dy.shape());
        let (d, c) = (dy.data(), c.data());
        let out = dx.data_mut();
        match self.kind {
            ActivationKind::Relu => {
                for i in 0..out.len() {
                    out[i] = if c[i] > T::zero() { d[i] } else { T::zero() };
                }
            }
            ActivationKind::LeakyRelu(s) => {
                let s = T::lit(s);
                for i in 0..out.len() {
                    out[i] = if c[i] > T::zero() { d[i] } else { d[i] * s };
                }
            }
            ActivationKind::Tanh => {
                for i in 0..out.len() {
                    out[i] = d[i] * (T::one() - c[i] * c[i]);
                }
            }
            ActivationKind::Sigmoid => {
                for i in 0..out.len() {
                    out[i] = d[i] * c[i] * (T::one() - c[i]);
                }
            }
        }
        dx
    }
}
