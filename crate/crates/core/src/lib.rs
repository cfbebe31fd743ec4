//! Nucleus detection for cervical cytology (Pap smear) images.
//!
//! * [`dataset`] loads Cervix93-style frames, grade labels, the train/test
//!   split and the annotated nucleus points.
//! * [`eval`] scores detections (points, one mask, or per-nucleus masks)
//!   against the annotations and reports precision, recall and F.
//! * [`segment`] and [`grid`] hold the iterative-thresholding segmenter
//!   and the grid search that trains its four parameters.
//! * [`cnn`] is a small patch classifier with hit-map post-processing.

pub mod cnn;
pub mod dataset;
pub mod denoise;
pub mod eval;
pub mod grid;
pub mod image;
pub mod regions;
pub mod segment;
pub mod synth;

pub use dataset::{FrameRecord, Grade, GroundTruthSet, Split};
pub use eval::{DetectionSet, MatchOutcome, MetricsReport};
pub use image::{BinaryMask, GrayImage, Point};
pub use regions::Region;
pub use segment::SegParams;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/cnn.md")]
    mod cnn {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
