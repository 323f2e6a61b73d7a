use rand::Rng;

use super::{check_image_batch, NetworkConfig};
use crate::affect::{ImageTensor, LatentCode};
use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm, Conv2d, Flatten, Layer, Linear, Mode, Network, Sequential, Visitor};
use crate::tensor::{Real, Tensor};

/// Four stride-2 convolutions (batch norm, rectifier) then a fully-connected
/// layer squashed by `tanh` to the latent code.
pub struct Encoder<T> {
    image_size: usize,
    z_dim: usize,
    net: Sequential<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let mut net = Sequential::new();
        let mut ch = 3;
        let mut size = cfg.image_size;
        for (i, &f) in cfg.encoder_filters.iter().enumerate() {
            net.push(format!("conv{i}"), Conv2d::new(ch, f, cfg.kernel, 2, cfg.init_std, rng));
            net.push(format!("bn{i}"), BatchNorm::new(f));
            net.push(format!("relu{i}"), Activation::relu());
            ch = f;
            size = size.div_ceil(2);
        }
        net.push("flatten", Flatten::new());
        net.push("fc", Linear::new(ch * size * size, cfg.z_dim, cfg.init_std, rng));
        net.push("tanh", Activation::tanh());
        Self {
            image_size: cfg.image_size,
            z_dim: cfg.z_dim,
            net,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    /// `N×3×S×S` images to `N×z` codes.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        check_image_batch(x, self.image_size, "encoder");
        self.net.forward(x, mode)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        check_image_batch(x, self.image_size, "encoder");
        self.net.infer(x)
    }

    pub fn backward(&mut self, dz: &Tensor<T>) -> Tensor<T> {
        self.net.backward(dz)
    }

    /// Encodes one image with running statistics.
    pub fn encode(&self, x: &ImageTensor) -> Result<LatentCode> {
        if x.height() != self.image_size || x.width() != self.image_size {
            return Err(Error::Shape(format!(
                "encoder expects {0}x{0} images, got {1}x{2}",
                self.image_size,
                x.height(),
                x.width()
            )));
        }
        let t = super::images_to_tensor::<T>(&[x])?;
        let z = self.infer(&t);
        LatentCode::new(z.data().iter().map(|v| v.f64() as f32).collect())
    }
}

impl<T: Real> Network<T> for Encoder<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        self.net.visit("", f);
    }

    fn commit_stats(&mut self) {
        self.net.commit_stats();
    }
}
