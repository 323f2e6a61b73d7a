use rand::Rng;

use super::{join, Layer, Mode, Param, Slot, Visitor};
use crate::tensor::{Real, Tensor};

/// Fully-connected layer, `y = x·Wᵀ + b`, weight layout `out×in`. Inputs of
/// any rank are treated as `batch × features`.
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::normal(&[out_features, in_features], std, rng),
            bias: Param::zeros(&[out_features]),
            input: None,
        }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear expects {} features, got {:?}", self.in_features, x.shape());
        let mut out = Tensor::zeros(&[n, self.out_features]);
        T::gemm(n, self.in_features, self.out_features, T::one(), x.data(), false, self.weight.value.data(), true, T::zero(), out.data_mut());
        let b = self.bias.value.data();
        for row in out.data_mut().chunks_mut(self.out_features) {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        out
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let out = self.run(x);
        self.input = Some(x.clone());
        out
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("linear backward before forward");
        let n = x.batch();
        T::gemm(self.out_features, n, self.in_features, T::one(), dy.data(), true, x.data(), false, T::one(), self.weight.grad.data_mut());
        let gb = self.bias.grad.data_mut();
        for row in dy.data().chunks(self.out_features) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(n, self.out_features, self.in_features, T::one(), dy.data(), false, self.weight.value.data(), false, T::zero(), dx.data_mut());
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}
