//! Bijections between unconstrained storage and constrained parameter
//! values.

use crate::adgraph::Value;
use crate::error::{Error, Result};
use crate::special;
use serde::{Deserialize, Serialize};

/// Additive shift keeping positive-transformed values away from zero.
pub const POSITIVE_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// Shifted softplus: x -> log(1 + e^x) + 1e-6.
    Positive,
}

impl Transform {
    pub fn forward(&self, x: &Value) -> Value {
        match self {
            Transform::Identity => x.clone(),
            Transform::Positive => x.map(|v| special::softplus(v) + POSITIVE_SHIFT),
        }
    }

    pub fn backward(&self, y: &Value) -> Result<Value> {
        match self {
            Transform::Identity => Ok(y.clone()),
            Transform::Positive => {
                let mut out = Vec::with_capacity(y.len());
                for &v in y.data() {
                    if v <= POSITIVE_SHIFT {
                        return Err(Error::Transform(format!(
                            "value {v} is not above the positive-transform shift {POSITIVE_SHIFT}"
                        )));
                    }
                    out.push(special::softplus_inverse(v - POSITIVE_SHIFT));
                }
                Value::new(y.rows(), y.cols(), out)
            }
        }
    }

    /// Elementwise derivative of the forward map.
    pub fn forward_deriv(&self, x: &Value) -> Value {
        match self {
            Transform::Identity => Value::ones(x.rows(), x.cols()),
            Transform::Positive => x.map(special::sigmoid),
        }
    }

    /// Sum of log |d forward / dx| over entries.
    pub fn log_jacobian(&self, x: &Value) -> f64 {
        match self {
            Transform::Identity => 0.0,
            // log sigma(x) = -softplus(-x)
            Transform::Positive => x.data().iter().map(|&v| -special::softplus(-v)).sum(),
        }
    }

    /// Elementwise d/dx of [`Self::log_jacobian`].
    pub fn log_jacobian_deriv(&self, x: &Value) -> Value {
        match self {
            Transform::Identity => Value::zeros(x.rows(), x.cols()),
            // d log sigma(x) / dx = sigma(-x)
            Transform::Positive => x.map(|v| special::sigmoid(-v)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Positive => "positive",
        }
    }
}
