//! Adaptive rejection of unlabeled samples for semi-supervised training.

pub mod error;
pub mod lab;
pub mod latent;
mod linalg;
mod par;
pub mod rejection;
pub mod report;
pub mod seed;
pub mod toy;
pub mod uncertainty;

pub use error::{Error, Result};
pub use latent::{LatentVector, Pool, SampleRecord, SampleSet};
pub use rejection::{compute_threshold, filter_unlabeled, should_reject, similarity_index, ThresholdState};
