use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed of the bundled random perceptual extractor.
pub const EXTRACTOR_SEED: u64 = 0x1D_E47_1CA7;

/// Standard deviation of the bundled extractor's weights.
pub const EXTRACTOR_STD: f64 = 0.05;

/// Sizes of every network. Defaults reproduce the full-scale model; the
/// `probe` and `desk` presets shrink filter counts for gradient checks and
/// single-CPU training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Side of the square input/output image; must be a multiple of 16.
    pub image_size: usize,
    pub z_dim: usize,
    pub kernel: usize,
    /// Replication factor of the label appended to the generator input.
    pub generator_label_factor: usize,
    /// Constant label planes per label component appended after each
    /// image-discriminator block.
    pub discriminator_label_reps: usize,
    pub encoder_filters: Vec<usize>,
    pub generator_seed_channels: usize,
    /// Channels of the first five transposed convolutions; the sixth
    /// produces RGB.
    pub generator_filters: Vec<usize>,
    pub dimg_filters: Vec<usize>,
    pub dimg_hidden: usize,
    pub dz_hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    pub extractor: ExtractorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    /// Five strided 3×3 conv blocks with fixed-seed Gaussian weights.
    Random { filters: Vec<usize>, seed: u64 },
    /// VGG-face convolution stack up to `conv5_2`, loaded from a
    /// named-tensor archive (`conv1_1.weight`, `conv1_1.bias`, ...).
    VggFace { weights: PathBuf },
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            z_dim: 50,
            kernel: 5,
            generator_label_factor: 50,
            discriminator_label_reps: 1,
            encoder_filters: vec![64, 128, 256, 512],
            generator_seed_channels: 1024,
            generator_filters: vec![512, 256, 128, 64, 32],
            dimg_filters: vec![64, 128, 256, 512],
            dimg_hidden: 1024,
            dz_hidden: vec![64, 32, 16],
            leaky_slope: 0.2,
            init_std: super::INIT_STD,
            extractor: ExtractorConfig::Random {
                filters: vec![32, 64, 128, 128, 128],
                seed: EXTRACTOR_SEED,
            },
        }
    }
}

impl NetworkConfig {
    /// Tiny networks on 16×16 images for finite-difference checks.
    pub fn probe() -> Self {
        Self {
            image_size: 16,
            encoder_filters: vec![8; 4],
            generator_seed_channels: 8,
            generator_filters: vec![8; 5],
            dimg_filters: vec![8; 4],
            dimg_hidden: 8,
            dz_hidden: vec![8, 8, 8],
            extractor: ExtractorConfig::Random {
                filters: vec![4; 5],
                seed: EXTRACTOR_SEED,
            },
            ..Self::default()
        }
    }

    /// Reduced filter counts at full resolution, sized for CPU training.
    pub fn desk() -> Self {
        Self {
            encoder_filters: vec![16, 32, 64, 128],
            generator_seed_channels: 128,
            generator_filters: vec![64, 32, 16, 16, 8],
            dimg_filters: vec![16, 32, 64, 64],
            dimg_hidden: 64,
            dz_hidden: vec![64, 32, 16],
            extractor: ExtractorConfig::Random {
                filters: vec![8, 16, 32, 32, 32],
                seed: EXTRACTOR_SEED,
            },
            ..Self::default()
        }
    }

    pub fn seed_size(&self) -> usize {
        self.image_size / 16
    }

    /// Width of the generator input: latent code plus enlarged label.
    pub fn generator_input(&self) -> usize {
        self.z_dim + 2 * self.generator_label_factor
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return fail(format!("image_size {} is not a positive multiple of 16", self.image_size));
        }
        if self.z_dim == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return fail("z_dim must be positive and kernel odd".into());
        }
        if self.generator_label_factor == 0 || self.discriminator_label_reps == 0 {
            return fail("label replication factors must be positive".into());
        }
        if self.encoder_filters.len() != 4 || self.dimg_filters.len() != 4 {
            return fail("encoder and image discriminator need exactly 4 conv layers".into());
        }
        if self.generator_filters.len() != 5 {
            return fail("generator needs 5 hidden transposed-conv widths (6 layers in total)".into());
        }
        if self.dz_hidden.len() != 3 {
            return fail("latent discriminator needs 3 hidden widths (4 layers in total)".into());
        }
        let widths = self
            .encoder_filters
            .iter()
            .chain(&self.generator_filters)
            .chain(&self.dimg_filters)
            .chain(&self.dz_hidden)
            .chain([&self.generator_seed_channels, &self.dimg_hidden]);
        if widths.into_iter().any(|&w| w == 0) {
            return fail("layer widths must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return fail("init_std must be positive".into());
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return fail("leaky_slope must be in [0, 1)".into());
        }
        if let ExtractorConfig::Random { filters, .. } = &self.extractor {
            if filters.len() != 5 || filters.contains(&0) {
                return fail("random extractor needs 5 positive widths".into());
            }
        }
        Ok(())
    }
}
