//! CognitiveCNN: classify images through human-interpretable modalities.
//!
//! The pipeline extracts shape, texture, greyscale and edge views from a
//! white-background image, trains per-modality encoders with a shared
//! reconstruction head (stage 1), then trains an attention-gated classifier
//! (stage 2). Attention gates over the concatenated latent yield per-modality
//! relevance coefficients (RRMC for reconstruction, TRMC for prediction); a
//! regularizer can pull the two together to reduce texture-shape bias, and a
//! cue-conflict (miscue) harness measures the result.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod cue;
pub mod dataset;
pub mod experiment;
pub mod image_data;
pub mod modality;
pub mod model;
pub mod relevance;
pub mod rng;
pub mod train;

pub use image_data::{BinaryMask, GreyImage, RgbImage};
pub use modality::{ModalityBundle, TextureSynthConfig};
pub use relevance::RelevanceReport;
