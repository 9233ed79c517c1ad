//! Monte-Carlo checks of how unlabeled data helps or hurts a parametric
//! model, depending on whether the model family contains the truth.

pub mod em;
pub mod experiments;
pub mod generator;
pub mod metrics;
pub mod model;

pub use em::{semi_supervised_mle, supervised_mle, unsupervised_mle, EmConfig};
pub use generator::{Component, Domain, Generator, LabeledPoint};
pub use metrics::{kl_divergence, mse_decomposition, regression_error};
pub use model::{param_distance, FittedModel, ModelSpec, ParamView, Regime};
