//! Region-guided refinement network producing pseudo-masks for inpainted
//! images, with manual backpropagation on `f64` tensors.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{RefinerError, Result};
pub use model::{
    gate_features, image_tensor, Backbone, GatingMode, PyramidEncoder, Refiner, RefinerConfig, RefinerOutput,
    TrainSample,
};
pub use train::{evaluate_mdice, train, EpochStats, TrainOutcome, TrainSchedule};
