use rand::Rng;

use super::{check_image_batch, NetworkConfig};
use crate::affect::{label_to_channels, EmotionLabel};
use crate::nn::{Activation, BatchNorm, Conv2d, Flatten, Layer, Linear, Mode, Network, Sequential, Visitor};
use crate::tensor::{Real, Tensor};

/// Four fully-connected layers on a latent code; the first three are
/// followed by batch norm and a leaky rectifier, the last by a logistic.
pub struct LatentDiscriminator<T> {
    z_dim: usize,
    net: Sequential<T>,
}

impl<T: Real> LatentDiscriminator<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let mut net = Sequential::new();
        let mut width = cfg.z_dim;
        for (i, &h) in cfg.dz_hidden.iter().enumerate() {
            net.push(format!("fc{i}"), Linear::new(width, h, cfg.init_std, rng));
            net.push(format!("bn{i}"), BatchNorm::new(h));
            net.push(format!("lrelu{i}"), Activation::leaky(cfg.leaky_slope));
            width = h;
        }
        net.push("fc3", Linear::new(width, 1, cfg.init_std, rng));
        net.push("sigmoid", Activation::sigmoid());
        Self { z_dim: cfg.z_dim, net }
    }

    fn check(&self, v: &Tensor<T>) {
        assert!(
            v.shape().len() == 2 && v.item_len() == self.z_dim,
            "latent discriminator expects N×{}, got {:?}",
            self.z_dim,
            v.shape()
        );
    }

    /// `N×z` codes to `N×1` probabilities of coming from the prior.
    pub fn forward(&mut self, v: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.check(v);
        self.net.forward(v, mode)
    }

    pub fn infer(&self, v: &Tensor<T>) -> Tensor<T> {
        self.check(v);
        self.net.infer(v)
    }

    pub fn backward(&mut self, dp: &Tensor<T>) -> Tensor<T> {
        self.net.backward(dp)
    }

    /// Sets every parameter of the output layer to zero.
    pub fn zero_output_layer(&mut self) {
        self.net.visit("", &mut |name, slot| {
            if let (true, crate::nn::Slot::Param(p)) = (name.starts_with("fc3."), slot) {
                p.value.fill(T::zero());
            }
        });
    }
}

impl<T: Real> Network<T> for LatentDiscriminator<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        self.net.visit("", f);
    }

    fn commit_stats(&mut self) {
        self.net.commit_stats();
    }
}

/// Four stride-2 conv blocks (batch norm, leaky rectifier) with constant
/// label planes appended after every block, then two fully-connected layers
/// ending in a logistic.
pub struct ImageDiscriminator<T> {
    image_size: usize,
    label_reps: usize,
    blocks: Vec<Sequential<T>>,
    block_channels: Vec<usize>,
    head: Sequential<T>,
}

impl<T: Real> ImageDiscriminator<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let extra = 2 * cfg.discriminator_label_reps;
        let mut blocks = Vec::new();
        let mut block_channels = Vec::new();
        let mut ch = 3;
        let mut size = cfg.image_size;
        for &f in &cfg.dimg_filters {
            let mut b = Sequential::new();
            b.push("conv", Conv2d::new(ch, f, cfg.kernel, 2, cfg.init_std, rng));
            b.push("bn", BatchNorm::new(f));
            b.push("lrelu", Activation::leaky(cfg.leaky_slope));
            blocks.push(b);
            block_channels.push(ch);
            ch = f + extra;
            size = size.div_ceil(2);
        }
        let mut head = Sequential::new();
        head.push("flatten", Flatten::new());
        head.push("fc0", Linear::new(ch * size * size, cfg.dimg_hidden, cfg.init_std, rng));
        head.push("lrelu0", Activation::leaky(cfg.leaky_slope));
        head.push("fc1", Linear::new(cfg.dimg_hidden, 1, cfg.init_std, rng));
        head.push("sigmoid", Activation::sigmoid());
        Self {
            image_size: cfg.image_size,
            label_reps: cfg.discriminator_label_reps,
            blocks,
            block_channels,
            head,
        }
    }

    /// Input channel count of each conv block.
    pub fn block_input_channels(&self) -> &[usize] {
        &self.block_channels
    }

    fn label_planes(&self, labels: &[EmotionLabel], h: usize, w: usize) -> Tensor<T> {
        let c = 2 * self.label_reps;
        let mut data = Vec::with_capacity(labels.len() * c * h * w);
        for y in labels {
            data.extend(label_to_channels(*y, h, w, self.label_reps).into_iter().map(|v| T::lit(v as f64)));
        }
        Tensor::from_vec(&[labels.len(), c, h, w], data).expect("plane count matches")
    }

    fn with_labels(&self, h: Tensor<T>, labels: &[EmotionLabel]) -> Tensor<T> {
        let (_, _, hh, ww) = h.dims4();
        Tensor::concat_channels(&h, &self.label_planes(labels, hh, ww))
    }

    /// `N×3×S×S` images with one label each to `N×1` probabilities of being
    /// a real image carrying that label.
    pub fn forward(&mut self, x: &Tensor<T>, labels: &[EmotionLabel], mode: Mode) -> Tensor<T> {
        check_image_batch(x, self.image_size, "image discriminator");
        assert_eq!(x.batch(), labels.len(), "one label per image");
        let mut h = x.clone();
        for i in 0..self.blocks.len() {
            let out = self.blocks[i].forward(&h, mode);
            h = self.with_labels(out, labels);
        }
        self.head.forward(&h, mode)
    }

    pub fn infer(&self, x: &Tensor<T>, labels: &[EmotionLabel]) -> Tensor<T> {
        check_image_batch(x, self.image_size, "image discriminator");
        assert_eq!(x.batch(), labels.len(), "one label per image");
        let mut h = x.clone();
        for block in &self.blocks {
            h = self.with_labels(block.infer(&h), labels);
        }
        self.head.infer(&h)
    }

    /// Gradient with respect to the images; label planes are constants.
    pub fn backward(&mut self, dp: &Tensor<T>) -> Tensor<T> {
        let mut g = self.head.backward(dp);
        for block in self.blocks.iter_mut().rev() {
            let (_, c, h, w) = g.dims4();
            let features = (c - 2 * self.label_reps) * h * w;
            let (dfeat, _) = g.split_items(features);
            g = block.backward(&dfeat);
        }
        g
    }
}

impl<T: Real> Network<T> for ImageDiscriminator<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit(&format!("block{i}"), f);
        }
        self.head.visit("head", f);
    }

    fn commit_stats(&mut self) {
        for block in &mut self.blocks {
            block.commit_stats();
        }
        self.head.commit_stats();
    }
}
