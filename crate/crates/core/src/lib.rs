//! Bayesian Gradient Descent for continual learning.
//!
//! * [`engine`]: dense MLP forward/backward with masked softmax cross-entropy.
//! * [`bgd`]: the diagonal-Gaussian optimizer and its Monte Carlo estimators.
//! * [`sgd`]: the unprotected point-estimate baseline.
//! * [`scenario`]: task construction, mixture schedules and batch streams.
//! * [`metrics`]: accuracies, forgetting, sigma histograms, CSV/JSON output.
//! * [`theory`]: analytic checks of the update rule.
//! * [`data`], [`config`], [`experiment`]: dataset ingestion and the experiment runner.

pub mod bgd;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod presets;
pub mod rng;
pub mod scenario;
pub mod sgd;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
