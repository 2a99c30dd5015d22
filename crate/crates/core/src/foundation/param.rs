//! Named model parameters: unconstrained storage, a transform to the
//! constrained space, a fixed flag, and an optional prior.
//!
//! Parameters live in a [`ParamStore`] in declaration order; that order is
//! the contract for the flat free-state vector used by optimizers and
//! samplers.

use super::prior::PriorSpec;
use super::transform::Transform;
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub unconstrained: Value,
    pub transform: Transform,
    pub fixed: bool,
    pub prior: Option<PriorSpec>,
}

impl Param {
    pub fn constrained(&self) -> Value {
        self.transform.forward(&self.unconstrained)
    }

    pub fn len(&self) -> usize {
        self.unconstrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unconstrained.is_empty()
    }

    /// Maps a gradient with respect to the constrained value into the
    /// unconstrained space (elementwise chain rule), flattened row-major.
    pub fn free_grad(&self, constrained_grad: &Value) -> Vec<f64> {
        let deriv = self.transform.forward_deriv(&self.unconstrained);
        constrained_grad
            .data()
            .iter()
            .zip(deriv.data())
            .map(|(g, d)| g * d)
            .collect()
    }
}

/// Serialized form of one parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub transform: Transform,
    pub fixed: bool,
    pub unconstrained: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        unconstrained: Value,
        transform: Transform,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            unconstrained,
            transform,
            fixed: false,
            prior: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a positive-transformed scalar initialized at a constrained value.
    pub fn add_positive_scalar(&mut self, name: impl Into<String>, constrained: f64) -> ParamId {
        let x = Transform::Positive
            .backward(&Value::scalar(constrained))
            .expect("constrained init must be above the transform shift");
        self.add(name, x, Transform::Positive)
    }

    /// Adds a positive-transformed vector with all entries at one value.
    pub fn add_positive_vector(
        &mut self,
        name: impl Into<String>,
        constrained: f64,
        len: usize,
    ) -> ParamId {
        let x = Transform::Positive
            .backward(&Value::new(len, 1, vec![constrained; len]).expect("finite init"))
            .expect("constrained init must be above the transform shift");
        self.add(name, x, Transform::Positive)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn constrained(&self, id: ParamId) -> Value {
        self.params[id.0].constrained()
    }

    pub fn set_constrained(&mut self, id: ParamId, value: &Value) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.shape() != p.unconstrained.shape() {
            return Err(Error::Transform(format!(
                "shape {:?} does not match parameter {}",
                value.shape(),
                p.name
            )));
        }
        p.unconstrained = p.transform.backward(value)?;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Length of the flat free state (fixed parameters excluded).
    pub fn free_dim(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.fixed)
            .map(|p| p.len())
            .sum()
    }

    /// Flattens non-fixed unconstrained values in declaration order.
    pub fn free_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_dim());
        for p in &self.params {
            if !p.fixed {
                out.extend_from_slice(p.unconstrained.data());
            }
        }
        out
    }

    /// Writes a flat vector back into the non-fixed parameters.
    pub fn set_free_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.free_dim() {
            return Err(Error::FreeStateLength {
                expected: self.free_dim(),
                got: state.len(),
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            if p.fixed {
                continue;
            }
            let n = p.len();
            let slice = &state[offset..offset + n];
            if !slice.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "non-finite free state for parameter {}",
                    p.name
                )));
            }
            p.unconstrained = Value::new(
                p.unconstrained.rows(),
                p.unconstrained.cols(),
                slice.to_vec(),
            )?;
            offset += n;
        }
        Ok(())
    }

    /// Total prior log density plus transform log-Jacobian over non-fixed
    /// parameters carrying a prior; the quantity an unconstrained-space
    /// sampler adds to its target.
    pub fn log_prior_with_jacobian(&self) -> f64 {
        let mut total = 0.0;
        for p in &self.params {
            if p.fixed {
                continue;
            }
            if let Some(prior) = &p.prior {
                total += prior.log_density(&p.constrained());
                total += p.transform.log_jacobian(&p.unconstrained);
            }
        }
        total
    }

    /// Gradient of [`Self::log_prior_with_jacobian`] with respect to the
    /// free state, aligned with [`Self::free_state`].
    pub fn log_prior_grad(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_dim());
        for p in &self.params {
            if p.fixed {
                continue;
            }
            match &p.prior {
                Some(prior) => {
                    let c = p.constrained();
                    let dc = prior.log_density_grad(&c);
                    let chained = p.free_grad(&dc);
                    let jac = p.transform.log_jacobian_deriv(&p.unconstrained);
                    out.extend(chained.iter().zip(jac.data()).map(|(a, b)| a + b));
                }
                None => out.extend(std::iter::repeat_n(0.0, p.len())),
            }
        }
        out
    }

    pub fn snapshot(&self) -> Vec<ParamSnapshot> {
        self.params
            .iter()
            .map(|p| ParamSnapshot {
                name: p.name.clone(),
                transform: p.transform,
                fixed: p.fixed,
                unconstrained: p.unconstrained.clone(),
                prior: p.prior.clone(),
            })
            .collect()
    }

    /// Restores unconstrained values, fixed flags and priors from a
    /// snapshot. Names must match the store's declaration order.
    pub fn restore(&mut self, snaps: &[ParamSnapshot]) -> Result<()> {
        if snaps.len() != self.params.len() {
            return Err(Error::ModelConfig(format!(
                "snapshot has {} parameters, store has {}",
                snaps.len(),
                self.params.len()
            )));
        }
        for (p, s) in self.params.iter_mut().zip(snaps) {
            if p.name != s.name {
                return Err(Error::ModelConfig(format!(
                    "snapshot parameter {} does not match {}",
                    s.name, p.name
                )));
            }
            if p.unconstrained.shape() != s.unconstrained.shape() {
                return Err(Error::ModelConfig(format!(
                    "snapshot shape mismatch for {}",
                    p.name
                )));
            }
            p.transform = s.transform;
            p.fixed = s.fixed;
            p.unconstrained = s.unconstrained.clone();
            p.prior = s.prior.clone();
        }
        Ok(())
    }
}

/// Tape leaves standing in for the constrained values of parameters.
/// Graph builders look up the leaf for a parameter; evaluation binds each
/// leaf to the current constrained value.
#[derive(Debug, Default)]
pub struct ParamLeaves {
    map: HashMap<usize, NodeId>,
}

impl ParamLeaves {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares one leaf per parameter in the store, shaped like the
    /// constrained value.
    pub fn declare_all(tape: &mut Tape, store: &ParamStore) -> Self {
        let mut leaves = Self::new();
        for id in store.ids() {
            leaves.declare(tape, store, id);
        }
        leaves
    }

    pub fn declare(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> NodeId {
        *self.map.entry(id.0).or_insert_with(|| {
            let p = store.param(id);
            tape.leaf(p.unconstrained.rows(), p.unconstrained.cols())
        })
    }

    pub fn leaf(&self, id: ParamId) -> NodeId {
        self.map[&id.0]
    }

    /// Current constrained values for every declared leaf.
    pub fn bindings(&self, store: &ParamStore) -> Vec<(NodeId, Value)> {
        let mut out: Vec<(NodeId, Value)> = self
            .map
            .iter()
            .map(|(pid, node)| (*node, store.constrained(ParamId(*pid))))
            .collect();
        out.sort_by_key(|(node, _)| node.0);
        out
    }

    /// Parameter ids in declaration order paired with their leaves.
    pub fn entries(&self) -> Vec<(ParamId, NodeId)> {
        let mut out: Vec<(ParamId, NodeId)> =
            self.map.iter().map(|(p, n)| (ParamId(*p), *n)).collect();
        out.sort_by_key(|(p, _)| p.0);
        out
    }
}
