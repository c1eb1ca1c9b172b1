//! Loss-distribution uncertainty estimation for image classifiers.
//!
//! The pipeline trains a small CNN classifier, transfers its backbone into a
//! quantile-regression twin that learns the classifier's per-example loss
//! distribution, and uses the estimated distributions to filter unreliable
//! predictions. Everything runs on a from-scratch dense tensor core with
//! reverse-mode autodiff; no external deep-learning framework is involved.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{no_grad, Element, Tensor};

/// Element type used by the training pipeline. Checkpoints are stored as
/// f32 on disk either way.
#[cfg(not(feature = "train-f64"))]
pub type TrainElem = f32;
#[cfg(feature = "train-f64")]
pub type TrainElem = f64;
