//! Domain types shared by the whole crate: emotion labels on the
//! valence/arousal square, images scaled to [-1, 1], latent codes, and the
//! label encodings used to condition the networks.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the identity representation produced by the encoder.
pub const LATENT_DIM: usize = 50;

/// Side length of the model's square input and output images.
pub const IMAGE_SIZE: usize = 96;

/// Default replication factor for the generator's label input.
pub const LABEL_ENLARGEMENT: usize = 50;

/// A point in the valence/arousal square `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabel", into = "RawLabel")]
pub struct EmotionLabel {
    valence: f32,
    arousal: f32,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    valence: f32,
    arousal: f32,
}

impl TryFrom<RawLabel> for EmotionLabel {
    type Error = Error;
    fn try_from(raw: RawLabel) -> Result<Self> {
        EmotionLabel::new(raw.valence, raw.arousal)
    }
}

impl From<EmotionLabel> for RawLabel {
    fn from(label: EmotionLabel) -> Self {
        RawLabel {
            valence: label.valence,
            arousal: label.arousal,
        }
    }
}

impl EmotionLabel {
    pub const NEUTRAL: EmotionLabel = EmotionLabel {
        valence: 0.0,
        arousal: 0.0,
    };

    pub fn new(valence: f32, arousal: f32) -> Result<Self> {
        check_unit("valence", valence as f64)?;
        check_unit("arousal", arousal as f64)?;
        Ok(Self { valence, arousal })
    }

    /// Builds a label by clamping each component into range. Non-finite
    /// components map to 0.
    pub fn clamped(valence: f32, arousal: f32) -> Self {
        let fix = |v: f32| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Self {
            valence: fix(valence),
            arousal: fix(arousal),
        }
    }

    pub fn valence(&self) -> f32 {
        self.valence
    }

    pub fn arousal(&self) -> f32 {
        self.arousal
    }

    /// True when both magnitudes reach `threshold`.
    pub fn is_extreme(&self, threshold: f32) -> bool {
        self.valence.abs() >= threshold && self.arousal.abs() >= threshold
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4})", self.valence, self.arousal)
    }
}

fn check_unit(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && (-1.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::LabelOutOfRange { field, value })
    }
}

/// The label replicated block-wise: `factor` copies of valence followed by
/// `factor` copies of arousal.
#[derive(Debug, Clone, PartialEq)]
pub struct EnlargedLabel(Vec<f32>);

impl EnlargedLabel {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn factor(&self) -> usize {
        self.0.len() / 2
    }

    /// Mean of each block; recovers the original label exactly.
    pub fn block_means(&self) -> (f32, f32) {
        let k = self.factor();
        let mean = |s: &[f32]| (s.iter().map(|&v| v as f64).sum::<f64>() / k as f64) as f32;
        (mean(&self.0[..k]), mean(&self.0[k..]))
    }
}

pub fn enlarge_label(y: EmotionLabel, factor: usize) -> EnlargedLabel {
    assert!(factor > 0, "enlargement factor must be positive");
    let mut values = Vec::with_capacity(2 * factor);
    values.extend(std::iter::repeat_n(y.valence, factor));
    values.extend(std::iter::repeat_n(y.arousal, factor));
    EnlargedLabel(values)
}

/// Constant feature maps carrying the label: `reps` valence planes then
/// `reps` arousal planes, each `h`×`w`, channel-major.
pub fn label_to_channels(y: EmotionLabel, h: usize, w: usize, reps: usize) -> Vec<f32> {
    assert!(h >= 1 && w >= 1 && reps >= 1);
    let plane = h * w;
    let mut out = Vec::with_capacity(2 * reps * plane);
    for c in 0..2 * reps {
        let v = if c < reps { y.valence } else { y.arousal };
        out.extend(std::iter::repeat_n(v, plane));
    }
    out
}

/// Identity code produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Vec<f32>);

impl LatentCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return Err(Error::Shape(format!(
                "latent code has {} values, expected {LATENT_DIM}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("latent value {v} outside [-1, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// An RGB image with values in `[-1, 1]`, stored channel-major (`3×H×W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{} values cannot form a 3x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Clamps every value into range first; NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.at(0, y, x), self.at(1, y, x), self.at(2, y, x)]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Maps raw interleaved RGB bytes to `[-1, 1]` via `v = b / 127.5 - 1`.
pub fn normalize_image(raw: &[u8], height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    if channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {channels}")));
    }
    if raw.len() != height * width * 3 {
        return Err(Error::Format(format!(
            "{} bytes cannot form a {height}x{width} RGB image",
            raw.len()
        )));
    }
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    ImageTensor::new(height, width, data)
}

/// Inverse of [`normalize_image`]: clamp, rescale, round half away from zero.
/// Returns interleaved RGB bytes.
pub fn denormalize_image(img: &ImageTensor) -> Vec<u8> {
    let plane = img.height * img.width;
    let mut out = vec![0u8; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            let v = img.data[c * plane + i].clamp(-1.0, 1.0);
            out[i * 3 + c] = ((v + 1.0) * 127.5).round() as u8;
        }
    }
    out
}

pub fn image_from_rgb(img: &RgbImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    normalize_image(img.as_raw(), h as usize, w as usize, 3).expect("RgbImage is always 3-channel")
}

pub fn image_to_rgb(img: &ImageTensor) -> RgbImage {
    RgbImage::from_raw(img.width as u32, img.height as u32, denormalize_image(img))
        .expect("buffer length matches dimensions")
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    encode_rgb_png(&image_to_rgb(img))
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decodes any PNG, converting to 8-bit RGB.
pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(image_from_rgb(&img.to_rgb8()))
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_png(&bytes)
}

pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
