//! Patch-based CNN nucleus detector.
//!
//! Training windows are 75x75 crops sampled every 15 px and labelled
//! positive when their centre is within 15 px of a marked nucleus. At test
//! time windows are scored every 3 px; the resulting hit map is dilated,
//! thresholded at 0.5, and components under 100 px are dropped. Each
//! surviving component yields one detection at its centroid.

pub mod hitmap;
pub mod model;
pub mod patches;
pub mod train;

use thiserror::Error;

pub use hitmap::{infer_hitmap, postprocess_hitmap, HitMap, INFER_STRIDE};
pub use model::{Architecture, CnnModel};
pub use patches::{extract_patches, PatchSet, PATCH_SIZE, POSITIVE_RADIUS, TRAIN_STRIDE};
pub use train::{train, train_step, EpochLog, TrainConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CnnError {
    #[error("frame {width}x{height} is smaller than a {patch}x{patch} patch")]
    FrameTooSmall { width: usize, height: usize, patch: usize },
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite; training diverged")]
    NonFiniteLoss,
    #[error("empty batch or patch set")]
    EmptyBatch,
    #[error("bad model file: {0}")]
    ModelFormat(String),
}

/// Hit-map post-processing settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostProcess {
    pub dilation_radius: usize,
    pub cutoff: f64,
    pub min_area: usize,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self { dilation_radius: 2, cutoff: 0.5, min_area: 100 }
    }
}

/// Hit map plus detected points for one frame.
pub fn detect(
    model: &CnnModel,
    frame: &crate::image::GrayImage,
    stride: usize,
    post: &PostProcess,
) -> Result<(HitMap, Vec<crate::image::Point>), CnnError> {
    let map = infer_hitmap(model, frame, stride)?;
    let points = postprocess_hitmap(&map, post.dilation_radius, post.cutoff, post.min_area);
    Ok((map, points))
}
