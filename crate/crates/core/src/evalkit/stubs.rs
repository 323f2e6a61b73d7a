//! Reference editors and raters with known behavior, for checking the
//! experiment drivers.

use super::{Editor, Rater};
use crate::affect::{EmotionLabel, ImageTensor};
use crate::data::synth::{render_face, FaceParams};
use crate::error::{Error, Result};

/// Recognizes its own synthetic renders and edits them perfectly by
/// re-rendering the same identity at the target label.
pub struct RenderStub {
    faces: Vec<(FaceParams, ImageTensor)>,
}

impl RenderStub {
    pub fn new(faces: &[FaceParams]) -> Self {
        Self {
            faces: faces.iter().map(|p| (*p, render_face(p))).collect(),
        }
    }

    /// The renders this stub can edit.
    pub fn sources(&self) -> Vec<ImageTensor> {
        self.faces.iter().map(|(_, img)| img.clone()).collect()
    }
}

impl Editor for RenderStub {
    fn edit(&self, image: &ImageTensor, labels: &[EmotionLabel]) -> Result<Vec<ImageTensor>> {
        let (params, _) = self
            .faces
            .iter()
            .find(|(_, img)| img == image)
            .ok_or_else(|| Error::Config("render stub was given a face it did not render".into()))?;
        Ok(labels
            .iter()
            .map(|&expression| render_face(&FaceParams { expression, ..*params }))
            .collect())
    }
}

/// Ignores the label and returns the input unchanged.
pub struct IgnoreLabelStub;

impl Editor for IgnoreLabelStub {
    fn edit(&self, image: &ImageTensor, labels: &[EmotionLabel]) -> Result<Vec<ImageTensor>> {
        Ok(vec![image.clone(); labels.len()])
    }
}

/// Rates every image the same.
pub struct ConstantRater(pub [f64; 2]);

impl Rater for ConstantRater {
    fn rate_batch(&self, images: &[ImageTensor]) -> Vec<Result<[f64; 2]>> {
        images.iter().map(|_| Ok(self.0)).collect()
    }
}
