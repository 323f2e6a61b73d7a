use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crop::{center_crop_align, resize_image};
use super::manifest::{Manifest, Record, Source, Split};
use super::synth::{self, render_face, sample_face, FaceParams};
use crate::affect::{denormalize_image, write_png, EmotionLabel, ImageTensor};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Images held in memory as 8-bit planar RGB, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub size: usize,
    images: Vec<Vec<u8>>,
    pub labels: Vec<EmotionLabel>,
}

impl Dataset {
    pub fn new(size: usize, images: &[ImageTensor], labels: Vec<EmotionLabel>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let mut bytes = Vec::with_capacity(images.len());
        for img in images {
            if img.height() != size || img.width() != size {
                return Err(Error::Shape(format!("expected {size}x{size}, got {}x{}", img.height(), img.width())));
            }
            bytes.push(planar_bytes(img));
        }
        Ok(Self {
            size,
            images: bytes,
            labels,
        })
    }

    /// Loads every record, center-cropping and downscaling to `size`.
    pub fn load(manifest: &Manifest, size: usize) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Config("manifest has no records".into()));
        }
        let mut images = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            let path = manifest.resolve(r);
            let rgb = image::open(&path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
                .to_rgb8();
            images.push(planar_bytes(&center_crop_align(&rgb, size)?));
        }
        Ok(Self {
            size,
            images,
            labels: manifest.records.iter().map(|r| r.label).collect(),
        })
    }

    /// In-memory synthetic faces at the canvas size; the same images and
    /// labels as [`make_synthetic_dataset`] writes for `(n, seed)`.
    pub fn synthetic(n: usize, seed: u64) -> Result<Self> {
        let faces = synthetic_faces(n, seed);
        let images: Vec<ImageTensor> = faces.iter().map(render_face).collect();
        Self::new(synth::CANVAS, &images, faces.iter().map(|p| p.expression).collect())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> ImageTensor {
        let data = self.images[i].iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
        ImageTensor::new(self.size, self.size, data).expect("stored shape")
    }

    /// Stacks the given records into an `N×3×S×S` tensor and labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<EmotionLabel>) {
        let per = 3 * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.images[i].iter().map(|&b| T::lit(b as f64 / 127.5 - 1.0)));
        }
        let t = Tensor::from_vec(&[indices.len(), 3, self.size, self.size], data).expect("stored shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Area-downsampled copy at a smaller resolution.
    pub fn resized(&self, size: usize) -> Result<Self> {
        let images = (0..self.len())
            .map(|i| resize_image(&self.image(i), size).map(|img| planar_bytes(&img)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            size,
            images,
            labels: self.labels.clone(),
        })
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            size: self.size,
            images: self.images[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }
}

fn planar_bytes(img: &ImageTensor) -> Vec<u8> {
    // `denormalize_image` yields interleaved RGB; store planar.
    let rgb = denormalize_image(img);
    let plane = img.height() * img.width();
    let mut out = vec![0u8; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c];
        }
    }
    out
}

/// Shuffled, drop-last batch order. The permutation for each epoch depends
/// only on `(seed, epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if len < batch_size {
            return Err(Error::Config(format!(
                "dataset of {len} records cannot fill one batch of {batch_size}"
            )));
        }
        Ok(Self { len, batch_size, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    pub fn dropped_per_epoch(&self) -> usize {
        self.len % self.batch_size
    }

    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.shuffle(&mut rng);
        idx
    }

    pub fn batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.order(epoch)
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Generation record written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub count: usize,
    pub canvas: usize,
    pub noise_std: f64,
    pub eye_h0: f64,
    pub eye_h_slope: f64,
    pub brow_y0: f64,
    pub brow_slope: f64,
    pub mouth_y: f64,
    pub mouth_curve: f64,
    pub mouth_half_width: f64,
}

impl Provenance {
    fn new(seed: u64, count: usize) -> Self {
        Self {
            generator: format!("caae-core {} synthetic faces", env!("CARGO_PKG_VERSION")),
            seed,
            count,
            canvas: synth::CANVAS,
            noise_std: synth::NOISE_STD,
            eye_h0: synth::EYE_H0,
            eye_h_slope: synth::EYE_H_SLOPE,
            brow_y0: synth::BROW_Y0,
            brow_slope: synth::BROW_SLOPE,
            mouth_y: synth::MOUTH_Y,
            mouth_curve: synth::MOUTH_CURVE,
            mouth_half_width: synth::MOUTH_HALF_WIDTH,
        }
    }
}

/// Face parameters of a synthetic dataset, in record order. Labels are
/// rounded to the six decimals written in the manifest so that pixels and
/// manifest agree exactly.
pub fn synthetic_faces(n: usize, seed: u64) -> Vec<FaceParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = sample_face(&mut rng);
            let round = |v: f32| format!("{v:.6}").parse::<f32>().expect("formatted float");
            p.expression = EmotionLabel::clamped(round(p.expression.valence()), round(p.expression.arousal()));
            p
        })
        .collect()
}

/// Renders `n` faces with uniformly sampled identities and expressions into
/// `out_dir` (`manifest.tsv`, `images/`, `provenance.json`).
pub fn make_synthetic_dataset(n: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs at least one face".into()));
    }
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(format!("creating {}", images_dir.display()), e))?;
    let mut records = Vec::with_capacity(n);
    for (i, p) in synthetic_faces(n, seed).iter().enumerate() {
        let rel = format!("images/{i:06}.png");
        write_png(&out_dir.join(&rel), &render_face(p))?;
        records.push(Record {
            path: rel.into(),
            label: p.expression,
            split: Split::Train,
        });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        source: Source::Synthetic,
        records,
    };
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write("manifest.tsv", manifest.to_text())?;
    write("provenance.json", serde_json::to_string_pretty(&Provenance::new(seed, n))? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_arithmetic() {
        let plan = BatchPlan::new(100, 49, 1).unwrap();
        assert_eq!(plan.batches_per_epoch(), 2);
        assert_eq!(plan.dropped_per_epoch(), 2);
        assert_eq!(plan.batches(0).len(), 2);
        assert!(BatchPlan::new(10, 49, 1).is_err());
    }

    #[test]
    fn order_depends_on_seed_and_epoch() {
        let a = BatchPlan::new(100, 49, 1).unwrap();
        let b = BatchPlan::new(100, 49, 2).unwrap();
        assert_eq!(a.order(0), a.order(0));
        assert_ne!(a.order(0), b.order(0));
        assert_ne!(a.order(0), a.order(1));
        let mut sorted = a.order(3);
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batch_tensor_matches_images() {
        let imgs: Vec<ImageTensor> = (0..3)
            .map(|i| ImageTensor::filled(4, 4, [i as f32 * 0.5 - 0.5, 0.0, 1.0]).unwrap())
            .collect();
        let labels = vec![EmotionLabel::NEUTRAL; 3];
        let ds = Dataset::new(4, &imgs, labels).unwrap();
        let (t, y) = ds.batch::<f32>(&[2, 0]);
        assert_eq!(t.shape(), [2, 3, 4, 4]);
        assert_eq!(y.len(), 2);
        assert!((t.item(0)[0] - 0.5).abs() < 0.01);
        assert!((t.item(1)[0] + 0.5).abs() < 0.01);
    }
}
