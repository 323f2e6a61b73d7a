use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode};
use crate::tensor::{Real, Tensor};

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    fn run<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        let dst = out.data_mut();
        let mut o = 0;
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[o] = src[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
        (out, argmax)
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let (out, argmax) = Self::run(x);
        self.cache = Some((argmax, x.shape().to_vec()));
        out
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::run(x).0
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (argmax, shape) = self.cache.as_ref().expect("pool backward before forward");
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(dy.data()) {
            d[idx] += g;
        }
        dx
    }
}

/// Inverted dropout; active in both training modes, identity in `Eval`.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p));
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

impl<T: Real> Layer<T> for Dropout {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask: Vec<bool> = (0..x.len()).map(|_| self.rng.random::<f64>() >= self.p).collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v = if m { *v * keep } else { T::zero() };
        }
        self.mask = Some(mask);
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.clone()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match &self.mask {
            None => dy.clone(),
            Some(mask) => {
                let keep = T::lit(1.0 / (1.0 - self.p));
                let mut dx = dy.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *v = if m { *v * keep } else { T::zero() };
                }
                dx
            }
        }
    }
}

/// Collapses everything after the batch axis.
#[derive(Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Layer<T> for Flatten {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        self.shape = Some(x.shape().to_vec());
        x.clone().reshape(&[x.batch(), x.item_len()])
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.clone().reshape(&[x.batch(), x.item_len()])
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape.as_ref().expect("flatten backward before forward");
        dy.clone().reshape(shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0]).unwrap();
        let mut pool = MaxPool2d::new();
        let y = Layer::<f64>::forward(&mut pool, &x, Mode::Train);
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = Layer::<f64>::backward(&mut pool, &Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut d = Dropout::new(0.5, 1);
        let x = Tensor::<f32>::full(&[2, 8], 1.0);
        assert_eq!(Layer::<f32>::forward(&mut d, &x, Mode::Eval), x);
        let y = Layer::<f32>::forward(&mut d, &x, Mode::Train);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
