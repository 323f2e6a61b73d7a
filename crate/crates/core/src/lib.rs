pub mod affect;
pub mod data;
pub mod evalkit;
pub mod archive;
pub mod error;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod tensor;
pub mod training;

pub use affect::{EmotionLabel, ImageTensor, LatentCode};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
