//! Plain SGD point-estimate baseline.

use serde::{Deserialize, Serialize};

use crate::engine::FlatWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate > 0.0 && self.learning_rate.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )))
        }
    }
}

/// `w − lr·grad`, returned as a new vector.
pub fn sgd_step(w: &[f64], grad: &[f64], lr: f64) -> Result<FlatWeights> {
    if w.len() != grad.len() {
        return Err(Error::Shape(format!(
            "{} weights but {} gradient entries",
            w.len(),
            grad.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "SGD gradient",
            coordinate: i,
        });
    }
    Ok(w.iter()
        .zip(grad)
        .map(|(w, g)| w - lr * g)
        .collect::<Vec<_>>()
        .into())
}
