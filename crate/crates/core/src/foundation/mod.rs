//! Constrained parameters, priors, and shared quadrature rules.

mod param;
mod prior;
mod quadrature;
mod transform;

pub use param::{Param, ParamId, ParamLeaves, ParamSnapshot, ParamStore};
pub use prior::PriorSpec;
pub use quadrature::{hermite_rule, QuadratureRule, DEFAULT_QUADRATURE_POINTS};
pub use transform::{Transform, POSITIVE_SHIFT};
