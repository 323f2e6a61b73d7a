use rand::Rng;

use super::NetworkConfig;
use crate::affect::{enlarge_label, EmotionLabel, ImageTensor, LatentCode};
use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm, ConvTranspose2d, Layer, Linear, Mode, Network, Sequential, Visitor};
use crate::tensor::{Real, Tensor};

/// Fully-connected projection of `[z, enlarged y]` to a `seed×seed` map,
/// then six transposed convolutions: four with stride 2, two with stride 1.
/// Every layer but the last is followed by batch norm and a rectifier; the
/// last is squashed by `tanh`.
pub struct Generator<T> {
    z_dim: usize,
    label_factor: usize,
    seed: usize,
    seed_channels: usize,
    project: Sequential<T>,
    upsample: Sequential<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let seed = cfg.seed_size();
        let c0 = cfg.generator_seed_channels;
        let mut project = Sequential::new();
        project.push("fc", Linear::new(cfg.generator_input(), seed * seed * c0, cfg.init_std, rng));

        let mut upsample = Sequential::new();
        upsample.push("bn_fc", BatchNorm::new(c0));
        upsample.push("relu_fc", Activation::relu());
        let mut ch = c0;
        let widths = cfg.generator_filters.iter().copied().chain([3]);
        for (i, f) in widths.enumerate() {
            let stride = if i < 4 { 2 } else { 1 };
            upsample.push(format!("deconv{i}"), ConvTranspose2d::new(ch, f, cfg.kernel, stride, cfg.init_std, rng));
            if i < 5 {
                upsample.push(format!("bn{i}"), BatchNorm::new(f));
                upsample.push(format!("relu{i}"), Activation::relu());
            } else {
                upsample.push("tanh", Activation::tanh());
            }
            ch = f;
        }
        Self {
            z_dim: cfg.z_dim,
            label_factor: cfg.generator_label_factor,
            seed,
            seed_channels: c0,
            project,
            upsample,
        }
    }

    /// Builds the `N×(z + 2·factor)` input rows.
    fn input(&self, z: &Tensor<T>, labels: &[EmotionLabel]) -> Tensor<T> {
        assert_eq!(z.shape().len(), 2, "generator expects N×z codes, got {:?}", z.shape());
        assert_eq!(z.item_len(), self.z_dim, "generator expects {}-d codes", self.z_dim);
        assert_eq!(z.batch(), labels.len(), "one label per code");
        let width = self.z_dim + 2 * self.label_factor;
        let mut data = Vec::with_capacity(z.batch() * width);
        for (i, y) in labels.iter().enumerate() {
            data.extend_from_slice(z.item(i));
            data.extend(enlarge_label(*y, self.label_factor).values().iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::from_vec(&[z.batch(), width], data).expect("widths agree")
    }

    fn seed_shape(&self, n: usize) -> [usize; 4] {
        [n, self.seed_channels, self.seed, self.seed]
    }

    pub fn forward(&mut self, z: &Tensor<T>, labels: &[EmotionLabel], mode: Mode) -> Tensor<T> {
        let input = self.input(z, labels);
        let n = input.batch();
        let h = self.project.forward(&input, mode).reshape(&self.seed_shape(n));
        self.upsample.forward(&h, mode)
    }

    pub fn infer(&self, z: &Tensor<T>, labels: &[EmotionLabel]) -> Tensor<T> {
        let input = self.input(z, labels);
        let n = input.batch();
        let h = self.project.infer(&input).reshape(&self.seed_shape(n));
        self.upsample.infer(&h)
    }

    /// Returns the gradient with respect to the latent codes; the label
    /// part of the input is constant.
    pub fn backward(&mut self, dx: &Tensor<T>) -> Tensor<T> {
        let dh = self.upsample.backward(dx);
        let n = dh.batch();
        let dinput = self.project.backward(&dh.reshape(&[n, self.seed * self.seed * self.seed_channels]));
        dinput.split_items(self.z_dim).0
    }

    /// Generates one image with running statistics.
    pub fn generate(&self, z: &LatentCode, y: EmotionLabel) -> Result<ImageTensor> {
        if z.values().len() != self.z_dim {
            return Err(Error::Shape(format!("generator expects {}-d codes", self.z_dim)));
        }
        let zt = Tensor::from_vec(&[1, self.z_dim], z.values().iter().map(|&v| T::lit(v as f64)).collect())?;
        let x = self.infer(&zt, &[y]);
        Ok(super::tensor_to_images(&x).remove(0))
    }

    /// Output spatial size after each transposed convolution, starting
    /// from the seed map.
    pub fn size_trace(&self) -> Vec<usize> {
        let mut sizes = vec![self.seed];
        let mut s = self.seed;
        for i in 0..6 {
            if i < 4 {
                s *= 2;
            }
            sizes.push(s);
        }
        sizes
    }
}

impl<T: Real> Network<T> for Generator<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        self.project.visit("", f);
        self.upsample.visit("", f);
    }

    fn commit_stats(&mut self) {
        self.project.commit_stats();
        self.upsample.commit_stats();
    }
}
