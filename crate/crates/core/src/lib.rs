//! Core data types and algorithms for inpainting-based polyp augmentation:
//! rasters and masks, overlap metrics, condition placement, the inpainting
//! backend contract, sample selection and dataset manifests.

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod inpaint;
pub mod io;
pub mod metrics;
pub mod placement;
pub mod resample;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
pub use imaging::{crop_to_bbox, BinaryMask, BoundingBox, RasterImage};
pub use metrics::{dice, iou, score_sample, EvalReport, SampleScores};
