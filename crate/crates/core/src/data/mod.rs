//! Manifests, alignment cropping, the synthetic face generator and its
//! oracle, and batching.

mod crop;
mod dataset;
mod manifest;
pub mod synth;

pub use crop::{area_resize, center_crop_align, resize_image};
pub use dataset::{make_synthetic_dataset, synthetic_faces, BatchPlan, Dataset, Provenance};
pub use manifest::{Manifest, Record, Source, Split};
