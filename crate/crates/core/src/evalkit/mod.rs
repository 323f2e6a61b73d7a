//! Affect metrics, per-axis expression classifiers, and the quantitative
//! and qualitative editing experiments.

pub mod classifier;
pub mod experiments;
pub mod metrics;
pub mod stubs;

pub use classifier::{train_classifier, Axis, Classifier, ClassifierConfig, ClassifierPair};
pub use experiments::{
    diff_heatmap, edit_montage, heatmap_montage, localization, qualitative_experiment, quantitative_experiment,
    region_mass_fraction, Heatmap, LabelGrid, Localization, QualitativeResult, QuantitativeResult, Region,
};
pub use metrics::{ccc, rmse, sagr, AxisMetrics, MetricReport, Subset};

use crate::affect::{EmotionLabel, ImageTensor};
use crate::data::synth::read_expression;
use crate::error::{Error, Result};
use crate::networks::{images_to_tensor, tensor_to_images, Caae};
use crate::tensor::{Real, Tensor};

/// Anything that re-renders a face under new expression labels.
pub trait Editor {
    /// One edit of `image` per label, in label order.
    fn edit(&self, image: &ImageTensor, labels: &[EmotionLabel]) -> Result<Vec<ImageTensor>>;
}

/// Anything that estimates `[valence, arousal]` from an image. Failures
/// are per image so one unreadable face does not sink a batch.
pub trait Rater {
    fn rate_batch(&self, images: &[ImageTensor]) -> Vec<Result<[f64; 2]>>;
}

/// Generator calls are chunked to bound memory.
const EDIT_CHUNK: usize = 49;

impl<T: Real> Editor for Caae<T> {
    fn edit(&self, image: &ImageTensor, labels: &[EmotionLabel]) -> Result<Vec<ImageTensor>> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s {
            return Err(Error::Shape(format!(
                "model edits {s}x{s} faces, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        let z = self.encoder.infer(&images_to_tensor::<T>(&[image])?);
        let mut out = Vec::with_capacity(labels.len());
        for chunk in labels.chunks(EDIT_CHUNK) {
            let data = z.data().iter().copied().cycle().take(z.len() * chunk.len()).collect();
            let zs = Tensor::from_vec(&[chunk.len(), z.len()], data)?;
            out.extend(tensor_to_images(&self.generator.infer(&zs, chunk)));
        }
        Ok(out)
    }
}

/// Reads expressions of synthetic renders analytically.
pub struct OracleRater;

impl Rater for OracleRater {
    fn rate_batch(&self, images: &[ImageTensor]) -> Vec<Result<[f64; 2]>> {
        images
            .iter()
            .map(|img| read_expression(img).map(|y| [y.valence() as f64, y.arousal() as f64]))
            .collect()
    }
}
