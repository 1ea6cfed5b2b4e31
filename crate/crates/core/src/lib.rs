//! Mixup as regularized ERM: the perturbed-data rewrite of the Mixup risk,
//! the quadratic-approximation regularizers, training under four objectives,
//! rescaled test-time prediction and a numerical verification suite.

pub mod beta_moments;
pub mod cli;
pub mod dataset;
pub mod evaluate;
mod error;
pub mod linalg;
pub mod loss;
pub mod mixup;
pub mod model;
pub mod regularization;
pub mod trainer;
pub mod verify;

pub use beta_moments::{coefficients, MixCoefficients};
pub use dataset::{Dataset, ModifiedDataset};
pub use error::{MixregError, Result};
pub use loss::{LossBundle, LossKind};
pub use model::{LinearModel, Model, Predictor, RffModel};
