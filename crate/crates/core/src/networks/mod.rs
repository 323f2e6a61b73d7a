//! The encoder `E`, generator `G`, latent discriminator `D_z`, image
//! discriminator `D_img`, and the frozen perceptual feature extractor.

mod config;
mod discriminator;
mod encoder;
mod generator;
mod perceptual;

pub use config::{ExtractorConfig, NetworkConfig, EXTRACTOR_SEED, EXTRACTOR_STD};
pub use discriminator::{ImageDiscriminator, LatentDiscriminator};
pub use encoder::Encoder;
pub use generator::Generator;
pub use perceptual::{PerceptualExtractor, TAP_COUNT};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::affect::{EmotionLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::{Network, Visitor};
use crate::tensor::{Real, Tensor};

/// Default standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// The four trainable networks.
pub struct Caae<T> {
    pub config: NetworkConfig,
    pub encoder: Encoder<T>,
    pub generator: Generator<T>,
    pub dz: LatentDiscriminator<T>,
    pub dimg: ImageDiscriminator<T>,
}

/// Names of the networks as they appear in checkpoints, in storage order.
pub const NETWORK_NAMES: [&str; 4] = ["encoder", "generator", "dz", "dimg"];

impl<T: Real> Caae<T> {
    /// Fresh networks: weights `N(0, init_std)` from one seeded stream (E, G,
    /// D_z, D_img in that order), zero biases, unit batch-norm scale.
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::new(config, &mut rng),
            generator: Generator::new(config, &mut rng),
            dz: LatentDiscriminator::new(config, &mut rng),
            dimg: ImageDiscriminator::new(config, &mut rng),
        })
    }

    pub fn network_mut(&mut self, name: &str) -> Option<&mut dyn Network<T>> {
        match name {
            "encoder" => Some(&mut self.encoder),
            "generator" => Some(&mut self.generator),
            "dz" => Some(&mut self.dz),
            "dimg" => Some(&mut self.dimg),
            _ => None,
        }
    }

    /// Every parameter and buffer, prefixed with its network name.
    pub fn export_state(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for name in NETWORK_NAMES {
            let net = self.network_mut(name).expect("known network");
            out.extend(net.export_state().into_iter().map(|(k, v)| (format!("{name}.{k}"), v)));
        }
        out
    }

    /// `G(E(x), y)` with running batch-norm statistics.
    pub fn edit(&self, x: &Tensor<T>, labels: &[EmotionLabel]) -> Tensor<T> {
        let z = self.encoder.infer(x);
        self.generator.infer(&z, labels)
    }
}

impl<T: Real> Network<T> for Caae<T> {
    fn visit_state(&mut self, f: &mut Visitor<'_, T>) {
        for name in NETWORK_NAMES {
            let net = self.network_mut(name).expect("known network");
            net.visit_state(&mut |k, slot| f(&format!("{name}.{k}"), slot));
        }
    }

    fn commit_stats(&mut self) {
        self.encoder.commit_stats();
        self.generator.commit_stats();
        self.dz.commit_stats();
        self.dimg.commit_stats();
    }
}

/// Stacks images into an `N×3×H×W` tensor.
pub fn images_to_tensor<T: Real>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::Shape(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height(),
                img.width()
            )));
        }
        data.extend(img.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Splits an `N×3×H×W` tensor into images, clamping into `[-1, 1]`.
pub fn tensor_to_images<T: Real>(t: &Tensor<T>) -> Vec<ImageTensor> {
    let (n, c, h, w) = t.dims4();
    assert_eq!(c, 3);
    (0..n)
        .map(|i| {
            let data = t.item(i).iter().map(|v| v.f64() as f32).collect();
            ImageTensor::from_clamped(h, w, data).expect("shape checked")
        })
        .collect()
}

pub(crate) fn check_image_batch<T: Real>(x: &Tensor<T>, size: usize, who: &str) {
    let (_, c, h, w) = x.dims4();
    assert!(
        c == 3 && h == size && w == size,
        "{who} expects N×3×{size}×{size}, got {:?}",
        x.shape()
    );
}
