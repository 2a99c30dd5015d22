//! Hyperparameter priors, evaluated on constrained values.

use crate::adgraph::Value;
use crate::special;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PriorSpec {
    Gaussian { mean: f64, variance: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { low: f64, high: f64 },
}

impl PriorSpec {
    /// Sum of log densities over the entries of a constrained value.
    /// Out-of-support entries yield negative infinity (a rejection for
    /// samplers), never a panic.
    pub fn log_density(&self, c: &Value) -> f64 {
        c.data().iter().map(|&v| self.log_density_scalar(v)).sum()
    }

    fn log_density_scalar(&self, v: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian { mean, variance } => {
                -0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                    - (v - mean) * (v - mean) / (2.0 * variance)
            }
            PriorSpec::Gamma { shape, rate } => {
                if v <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() + (shape - 1.0) * v.ln() - rate * v
                        - special::ln_gamma(shape)
                }
            }
            PriorSpec::Uniform { low, high } => {
                if v < low || v > high {
                    f64::NEG_INFINITY
                } else {
                    -(high - low).ln()
                }
            }
        }
    }

    /// Elementwise gradient of the log density with respect to the
    /// constrained value (zero on the uniform interior).
    pub fn log_density_grad(&self, c: &Value) -> Value {
        c.map(|v| match *self {
            PriorSpec::Gaussian { mean, variance } => -(v - mean) / variance,
            PriorSpec::Gamma { shape, rate } => {
                if v <= 0.0 {
                    0.0
                } else {
                    (shape - 1.0) / v - rate
                }
            }
            PriorSpec::Uniform { .. } => 0.0,
        })
    }
}
