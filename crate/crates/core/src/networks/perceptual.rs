use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExtractorConfig;
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, Layer, MaxPool2d, Mode, Slot};
use crate::tensor::{Real, Tensor};

/// Number of feature taps used by the identity loss.
pub const TAP_COUNT: usize = 5;

/// Per-channel RGB mean of the VGG-face training set, in 0..255 units.
const VGG_MEAN: [f64; 3] = [129.1863, 104.7624, 93.5940];

/// VGG-face stage depths up to `conv5_3`; taps are at `conv{s}_2`.
const VGG_STAGES: [usize; 5] = [2, 2, 3, 3, 3];

enum Preprocess {
    None,
    /// `[-1, 1]` to 0..255 minus the channel mean.
    VggMean,
}

/// Frozen convolutional feature extractor with five tap points. Weights
/// never receive gradients; `backward` only propagates to the input.
pub struct PerceptualExtractor<T> {
    preprocess: Preprocess,
    layers: Vec<Box<dyn Layer<T>>>,
    /// Index of the layer whose output is each tap.
    taps: [usize; TAP_COUNT],
}

impl<T: Real> PerceptualExtractor<T> {
    pub fn from_config(cfg: &ExtractorConfig) -> Result<Self> {
        match cfg {
            ExtractorConfig::Random { filters, seed } => Ok(Self::random(filters, *seed)),
            ExtractorConfig::VggFace { weights } => {
                if !weights.exists() {
                    return Err(Error::Config(format!(
                        "perceptual extractor weights {} not found",
                        weights.display()
                    )));
                }
                Self::vgg_face(&Archive::load(weights)?)
            }
        }
    }

    /// Five blocks of stride-2 3×3 convolution and rectifier, weights
    /// drawn once from `N(0, 0.05)` with `seed`; taps after every block.
    pub fn random(filters: &[usize], seed: u64) -> Self {
        assert_eq!(filters.len(), TAP_COUNT);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
        let mut taps = [0; TAP_COUNT];
        let mut ch = 3;
        for (i, &f) in filters.iter().enumerate() {
            layers.push(Box::new(Conv2d::new(ch, f, 3, 2, super::EXTRACTOR_STD, &mut rng).frozen()));
            layers.push(Box::new(Activation::relu()));
            taps[i] = layers.len() - 1;
            ch = f;
        }
        Self {
            preprocess: Preprocess::None,
            layers,
            taps,
        }
    }

    /// VGG-face convolution stack from `conv1_1` to `conv5_2`, with weights
    /// `conv{s}_{l}.weight` (`out×in×3×3`) and `conv{s}_{l}.bias`.
    pub fn vgg_face(archive: &Archive) -> Result<Self> {
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
        let mut taps = [0; TAP_COUNT];
        let mut ch = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (s, &depth) in VGG_STAGES.iter().enumerate() {
            if s > 0 {
                layers.push(Box::new(MaxPool2d::new()));
            }
            for l in 1..=depth {
                if s == TAP_COUNT - 1 && l > 2 {
                    break;
                }
                let name = format!("conv{}_{l}", s + 1);
                let weight = archive
                    .tensors
                    .get(&format!("{name}.weight"))
                    .ok_or_else(|| Error::Config(format!("extractor weights lack {name}.weight")))?;
                let bias = archive
                    .tensors
                    .get(&format!("{name}.bias"))
                    .ok_or_else(|| Error::Config(format!("extractor weights lack {name}.bias")))?;
                let shape = weight.shape();
                if shape.len() != 4 || shape[1] != ch || shape[2] != 3 || shape[3] != 3 || bias.shape() != [shape[0]] {
                    return Err(Error::Config(format!(
                        "{name}: weight {:?} / bias {:?} do not fit {ch} input channels",
                        shape,
                        bias.shape()
                    )));
                }
                let mut conv = Conv2d::new(ch, shape[0], 3, 1, 0.0, &mut rng).frozen();
                conv.weight.value = weight.to();
                conv.bias.value = bias.to();
                layers.push(Box::new(conv));
                layers.push(Box::new(Activation::relu()));
                if l == 2 {
                    taps[s] = layers.len() - 1;
                }
                ch = shape[0];
            }
        }
        Ok(Self {
            preprocess: Preprocess::VggMean,
            layers,
            taps,
        })
    }

    fn prepare(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.preprocess {
            Preprocess::None => x.clone(),
            Preprocess::VggMean => {
                let (n, c, h, w) = x.dims4();
                assert_eq!(c, 3);
                let plane = h * w;
                let mut out = x.clone();
                for i in 0..n {
                    let item = out.item_mut(i);
                    for (ch, mean) in VGG_MEAN.iter().enumerate() {
                        for v in &mut item[ch * plane..(ch + 1) * plane] {
                            *v = (*v + T::one()) * T::lit(127.5) - T::lit(*mean);
                        }
                    }
                }
                out
            }
        }
    }

    fn input_scale(&self) -> T {
        match self.preprocess {
            Preprocess::None => T::one(),
            Preprocess::VggMean => T::lit(127.5),
        }
    }

    /// Snapshot of every weight, for checks that training leaves the
    /// extractor untouched.
    pub fn export_state(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("layer{i}"), &mut |name, slot| {
                let t = match slot {
                    Slot::Param(p) => p.value.clone(),
                    Slot::Buffer(b) => b.clone(),
                };
                out.push((name.to_string(), t));
            });
        }
        out
    }

    /// Activations at the five taps, caching for `backward`.
    pub fn forward(&mut self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut h = self.prepare(x);
        let mut out = Vec::with_capacity(TAP_COUNT);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, Mode::Eval);
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        out
    }

    pub fn features(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut h = self.prepare(x);
        let mut out = Vec::with_capacity(TAP_COUNT);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h);
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        out
    }

    /// Gradient with respect to the input given a gradient for every tap.
    pub fn backward(&mut self, tap_grads: &[Tensor<T>]) -> Tensor<T> {
        assert_eq!(tap_grads.len(), TAP_COUNT);
        let last = self.taps[TAP_COUNT - 1];
        let mut g: Option<Tensor<T>> = None;
        for i in (0..=last).rev() {
            if let Some(k) = self.taps.iter().position(|&t| t == i) {
                g = Some(match g {
                    Some(mut acc) => {
                        acc.add_assign(&tap_grads[k]);
                        acc
                    }
                    None => tap_grads[k].clone(),
                });
            }
            let dy = g.take().expect("tap gradient seeded at last tap");
            g = Some(self.layers[i].backward(&dy));
        }
        let mut dx = g.expect("extractor has layers");
        let s = self.input_scale();
        if s != T::one() {
            dx = dx.map(|v| v * s);
        }
        dx
    }
}
