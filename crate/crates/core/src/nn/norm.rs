use super::{join, Layer, Mode, Param, Slot, Visitor};
use crate::tensor::{Real, Tensor};

const EPS: f64 = 1e-5;

/// Batch normalization over the channel axis of `N×C` or `N×C×H×W` inputs.
///
/// Running averages use `running = momentum·running + (1−momentum)·batch`
/// with the unbiased batch variance.
pub struct BatchNorm<T> {
    pub channels: usize,
    pub momentum: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pending: Vec<(Vec<f64>, Vec<f64>)>,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1], 1),
        4 => (shape[0], shape[1], shape[2] * shape[3]),
        _ => panic!("batch norm expects rank 2 or 4, got {shape:?}"),
    }
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.9,
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            pending: Vec::new(),
            cache: None,
        }
    }

    /// Per-channel mean and biased variance, accumulated in f64.
    fn batch_stats(&self, x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let (n, c, plane) = layout(x.shape());
        let m = (n * plane) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for i in 0..n {
            let item = x.item(i);
            for ch in 0..c {
                mean[ch] += item[ch * plane..(ch + 1) * plane].iter().map(|v| v.f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            let item = x.item(i);
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] += item[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| {
                        let d = v.f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let (n, c, plane) = layout(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for i in 0..n {
            let src = x.item(i);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                let (mu, is, gm, bt) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                let xh = &mut xhat.item_mut(i)[r.clone()];
                for (d, &s) in xh.iter_mut().zip(&src[r.clone()]) {
                    *d = (s - mu) * is;
                }
                let xh = &xhat.item(i)[r.clone()];
                let o = &mut out.item_mut(i)[r];
                for (d, &h) in o.iter_mut().zip(xh) {
                    *d = gm * h + bt;
                }
            }
        }
        (xhat, out)
    }

    fn running(&self) -> (Vec<T>, Vec<T>) {
        let mean = self.running_mean.data().to_vec();
        let inv = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + T::lit(EPS)).sqrt())
            .collect();
        (mean, inv)
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, plane) = layout(x.shape());
        assert_eq!(c, self.channels, "batch norm expects {} channels, got {c}", self.channels);
        let (mean, inv_std) = if mode.uses_batch_stats() {
            let (mean, var) = self.batch_stats(x);
            let inv: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + EPS).sqrt())).collect();
            if mode == Mode::Train {
                let m = (n * plane) as f64;
                let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                self.pending.push((mean.clone(), var.iter().map(|v| v * unbiased).collect()));
            }
            (mean.iter().map(|&v| T::lit(v)).collect::<Vec<T>>(), inv)
        } else {
            self.running()
        };
        let (xhat, out) = self.normalize(x, &mean, &inv_std);
        self.cache = Some(Cache {
            xhat,
            inv_std,
            batch_stats: mode.uses_batch_stats(),
        });
        out
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (mean, inv) = self.running();
        self.normalize(x, &mean, &inv).1
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let (n, c, plane) = layout(dy.shape());
        let m = (n * plane) as f64;
        let gamma = self.gamma.value.data();
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for i in 0..n {
            let d = dy.item(i);
            let xh = cache.xhat.item(i);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (&g, &h) in d[r.clone()].iter().zip(&xh[r]) {
                    sum_dy[ch] += g.f64();
                    sum_dy_xhat[ch] += (g * h).f64();
                }
            }
        }
        {
            let gg = self.gamma.grad.data_mut();
            for ch in 0..c {
                gg[ch] += T::lit(sum_dy_xhat[ch]);
            }
        }
        {
            let gb = self.beta.grad.data_mut();
            for ch in 0..c {
                gb[ch] += T::lit(sum_dy[ch]);
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            let d = dy.item(i);
            let xh = cache.xhat.item(i);
            let out = dx.item_mut(i);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                let scale = gamma[ch] * cache.inv_std[ch];
                if cache.batch_stats {
                    let mean_dy = T::lit(sum_dy[ch] / m);
                    let mean_dy_xhat = T::lit(sum_dy_xhat[ch] / m);
                    for ((o, &g), &h) in out[r.clone()].iter_mut().zip(&d[r.clone()]).zip(&xh[r]) {
                        *o = scale * (g - mean_dy - h * mean_dy_xhat);
                    }
                } else {
                    for (o, &g) in out[r.clone()].iter_mut().zip(&d[r]) {
                        *o = scale * g;
                    }
                }
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }

    fn commit_stats(&mut self) {
        let mom = self.momentum;
        for (mean, var) in self.pending.drain(..) {
            for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                *r = T::lit(mom * r.f64() + (1.0 - mom) * b);
            }
            for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
                *r = T::lit(mom * r.f64() + (1.0 - mom) * b);
            }
        }
    }
}
