use rand::Rng;

use super::{join, Layer, Mode, Param, Slot, Visitor};
use crate::tensor::{Real, Tensor};

/// Shape bookkeeping for a strided convolution with "same" padding.
///
/// The "large" side is the convolution input (and the transposed
/// convolution output); the "small" side has `ceil(large / stride)` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn same(channels: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pad_h = ((oh - 1) * stride + k).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + k).saturating_sub(w);
        Self {
            channels,
            h,
            w,
            oh,
            ow,
            k,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one `channels×h×w` image into a `(channels·k·k)×(oh·ow)` matrix.
    pub fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (k, s) = (self.k, self.stride);
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ky) as isize - self.pad_top as isize;
                        let seg = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            seg.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in seg.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - self.pad_left as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters columns back, accumulating
    /// into `x`.
    pub fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let (k, s) = (self.k, self.stride);
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let seg = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &v) in seg.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - self.pad_left as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &[T], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

/// Strided 2-D convolution with "same" padding. Weight layout is
/// `out×in×k×k`.
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    frozen: bool,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::normal(&[out_channels, in_channels, kernel, kernel], std, rng),
            bias: Param::zeros(&[out_channels]),
            frozen: false,
            input: None,
        }
    }

    /// Frozen layers still propagate input gradients but never accumulate
    /// parameter gradients.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry::same(self.in_channels, h, w, self.kernel, self.stride)
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv expects {} channels, got {c}", self.in_channels);
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = Tensor::zeros(&[n, self.out_channels, g.oh, g.ow]);
        for i in 0..n {
            g.im2col(x.item(i), &mut cols);
            let y = out.item_mut(i);
            T::gemm(self.out_channels, rows, ncols, T::one(), self.weight.value.data(), false, &cols, false, T::zero(), y);
            add_channel_bias(y, self.bias.value.data(), ncols);
        }
        out
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let out = self.run(x);
        self.input = Some(x.clone());
        out
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("conv backward before forward");
        let (n, _, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut dcols = vec![T::zero(); rows * ncols];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let dyi = dy.item(i);
            if !self.frozen {
                g.im2col(x.item(i), &mut cols);
                T::gemm(self.out_channels, ncols, rows, T::one(), dyi, false, &cols, true, T::one(), self.weight.grad.data_mut());
                accumulate_bias_grad(self.bias.grad.data_mut(), dyi, ncols);
            }
            T::gemm(rows, self.out_channels, ncols, T::one(), self.weight.value.data(), true, dyi, false, T::zero(), &mut dcols);
            g.col2im(&dcols, dx.item_mut(i));
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

/// Transposed convolution whose output is `stride` times the input size;
/// the exact adjoint of [`Conv2d`] with the same geometry. Weight layout is
/// `in×out×k×k`.
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::normal(&[in_channels, out_channels, kernel, kernel], std, rng),
            bias: Param::zeros(&[out_channels]),
            input: None,
        }
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let g = Geometry::same(self.out_channels, h * self.stride, w * self.stride, self.kernel, self.stride);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        g
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "transposed conv expects {} channels, got {c}", self.in_channels);
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = Tensor::zeros(&[n, self.out_channels, g.h, g.w]);
        for i in 0..n {
            T::gemm(rows, self.in_channels, ncols, T::one(), self.weight.value.data(), true, x.item(i), false, T::zero(), &mut cols);
            let y = out.item_mut(i);
            g.col2im(&cols, y);
            add_channel_bias(y, self.bias.value.data(), g.h * g.w);
        }
        out
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let out = self.run(x);
        self.input = Some(x.clone());
        out
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("transposed conv backward before forward");
        let (n, _, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut dcols = vec![T::zero(); rows * ncols];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let dyi = dy.item(i);
            g.im2col(dyi, &mut dcols);
            T::gemm(self.in_channels, ncols, rows, T::one(), x.item(i), false, &dcols, true, T::one(), self.weight.grad.data_mut());
            accumulate_bias_grad(self.bias.grad.data_mut(), dyi, g.h * g.w);
            T::gemm(self.in_channels, rows, ncols, T::one(), self.weight.value.data(), false, &dcols, false, T::zero(), dx.item_mut(i));
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution with explicit zero padding.
    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], out_c: usize, k: usize, s: usize) -> Vec<f64> {
        let g = Geometry::same(c, h, w, k, s);
        let mut y = vec![0.0; out_c * g.oh * g.ow];
        for o in 0..out_c {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - g.pad_top as isize;
                                let ix = (ox * s + kx) as isize - g.pad_left as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(ci * h + iy as usize) * w + ix as usize] * wt[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    y[(o * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn same_padding_matches_reference_geometry() {
        let g = Geometry::same(3, 96, 96, 5, 2);
        assert_eq!((g.oh, g.ow, g.pad_top, g.pad_left), (48, 48, 1, 1));
        let g = Geometry::same(3, 96, 96, 5, 1);
        assert_eq!((g.oh, g.pad_top), (96, 2));
        let g = Geometry::same(3, 7, 7, 5, 2);
        assert_eq!((g.oh, g.pad_top), (4, 2));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w, s) in &[(7usize, 6usize, 2usize), (8, 8, 1), (5, 9, 2)] {
            let mut conv = Conv2d::<f64>::new(2, 3, 5, s, 1.0, &mut rng);
            let x: Vec<f64> = (0..2 * 2 * h * w).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
            let xt = Tensor::from_vec(&[2, 2, h, w], x.clone()).unwrap();
            let y = conv.forward(&xt, Mode::Train);
            for i in 0..2 {
                let expect = naive_conv(&x[i * 2 * h * w..(i + 1) * 2 * h * w], 2, h, w, conv.weight.value.data(), 3, 5, s);
                for (a, b) in y.item(i).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    /// `<conv(x), y> == <x, convT(y)>` for the shared geometry.
    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut conv = Conv2d::<f64>::new(3, 4, 5, 2, 1.0, &mut rng);
        let mut convt = ConvTranspose2d::<f64>::new(4, 3, 5, 2, 1.0, &mut rng);
        // Same weight tensor: conv is out(4)×in(3), transposed is in(4)×out(3).
        convt.weight.value = conv.weight.value.clone();
        let x = Tensor::from_vec(&[1, 3, 12, 12], (0..432).map(|i| (i % 17) as f64 / 8.0 - 1.0).collect()).unwrap();
        let y = Tensor::from_vec(&[1, 4, 6, 6], (0..144).map(|i| (i % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
        let cx = conv.forward(&x, Mode::Train);
        let ty = convt.forward(&y, Mode::Train);
        assert_eq!(ty.shape(), &[1, 3, 12, 12]);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn transposed_output_sizes_follow_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sizes = vec![6usize];
        let mut h = Tensor::<f32>::zeros(&[1, 2, 6, 6]);
        for s in [2, 2, 2, 2, 1, 1] {
            let mut l = ConvTranspose2d::<f32>::new(2, 2, 5, s, 0.02, &mut rng);
            h = l.forward(&h, Mode::Train);
            sizes.push(h.dims4().2);
        }
        assert_eq!(sizes, vec![6, 12, 24, 48, 96, 96, 96]);
    }

    #[test]
    fn frozen_conv_accumulates_no_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(1, 2, 3, 1, 1.0, &mut rng).frozen();
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let y = conv.forward(&x, Mode::Train);
        let dx = conv.backward(&Tensor::full(y.shape(), 1.0));
        assert!(dx.data().iter().any(|&v| v != 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad.data().iter().all(|&v| v == 0.0));
    }
}
