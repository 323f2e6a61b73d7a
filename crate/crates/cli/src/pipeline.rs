use std::path::Path;

use caae_core::data::{center_crop_align, Dataset, Manifest, Split};
use caae_core::evalkit::{edit_montage, Editor, LabelGrid};
use caae_core::networks::Caae;
use caae_core::{EmotionLabel, ImageTensor, Result};
use image::RgbImage;

/// Decodes an image and center-crop-aligns it to `size × size`.
pub fn prepare_image(bytes: &[u8], size: usize) -> Result<ImageTensor> {
    let rgb = image::load_from_memory(bytes)?.to_rgb8();
    center_crop_align(&rgb, size)
}

pub fn edit_one(model: &Caae<f32>, image: &ImageTensor, label: EmotionLabel) -> Result<ImageTensor> {
    Ok(Editor::edit(model, image, &[label])?.remove(0))
}

/// Edits to every label of `grid`, tiled with valence falling top to
/// bottom and arousal falling left to right.
pub fn edit_grid(model: &Caae<f32>, image: &ImageTensor, grid: &LabelGrid) -> Result<RgbImage> {
    let edits = Editor::edit(model, image, &grid.labels())?;
    edit_montage(&edits, grid.n)
}

/// Loads a manifest, keeping only `split` when given.
pub fn load_manifest(path: &Path, root: Option<&Path>, split: Option<Split>) -> Result<Manifest> {
    let manifest = Manifest::load(path, root)?;
    Ok(match split {
        Some(s) => manifest.filter_split(s),
        None => manifest,
    })
}

pub fn load_dataset(path: &Path, root: Option<&Path>, split: Option<Split>, size: usize) -> Result<Dataset> {
    Dataset::load(&load_manifest(path, root, split)?, size)
}
