//! Blinded human ranking of generated images.
//!
//! Raters open a session, receive sets of images labelled A, B, ... in a
//! per-session shuffled order, and submit two rankings per set: naturalness
//! over every image and similarity over the reference-conditioned ones. Method
//! identities stay on the server until an admin asks for the report.

pub mod error;
pub mod http;
pub mod service;
pub mod sets;
pub mod store;

pub use error::{ReviewError, Result};
pub use service::{ReviewConfig, ReviewService, SetView, Submission};
pub use sets::{build_review_sets, ReviewSet};
pub use store::RankingStore;
