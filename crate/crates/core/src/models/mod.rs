//! The six inference classes and the shared machinery they are built
//! from: whitened conditionals, the Gaussian KL term, and the jitter
//! policy for Cholesky factorizations of noiseless Gram matrices.

mod conditional;
mod gpr;
mod mcmc;
mod persist;
mod sgpr;
mod svgp;
mod vgp;

pub use conditional::{conditional_graph, gauss_kl, gauss_kl_graph, ConditionalGraph};
pub use gpr::GprModel;
pub use mcmc::{GpmcModel, SgpmcModel};
pub use persist::ModelArtifact;
pub use sgpr::SgprModel;
pub use svgp::SvgpModel;
pub use vgp::VgpModel;

use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};

/// Base jitter multiplier applied to the mean diagonal of a noiseless
/// Gram matrix before factorizing; escalates by 10x on failure.
pub const JITTER_BASE: f64 = 1e-6;
pub const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Value,
    pub y: Value,
}

impl Dataset {
    pub fn new(x: Value, y: Value) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("dataset needs at least one row".into()));
        }
        if x.rows() != y.rows() {
            return Err(Error::Data(format!(
                "X has {} rows but Y has {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn targets(&self) -> usize {
        self.y.cols()
    }

    /// Copies the selected rows of X and Y.
    pub fn gather(&self, idx: &[usize]) -> (Value, Value) {
        (gather_rows(&self.x, idx), gather_rows(&self.y, idx))
    }
}

pub(crate) fn gather_rows(v: &Value, idx: &[usize]) -> Value {
    Value::from_fn(idx.len(), v.cols(), |i, j| v[(idx[i], j)])
}

/// K + jitter * mean(diag K) * I, with the multiplier as a bindable leaf
/// so factorization failures can escalate it without rebuilding the graph.
pub(crate) fn jittered_gram(tape: &mut Tape, k: NodeId, jitter: NodeId) -> Result<NodeId> {
    let (n, _) = tape.shape(k);
    let d = tape.diag_part(k)?;
    let s = tape.reduce_sum(d)?;
    let inv_n = tape.scalar(1.0 / n as f64);
    let mean = tape.scalar_mul(inv_n, s)?;
    let level = tape.mul(jitter, mean)?;
    let ones = tape.constant(Value::ones(n, 1));
    let jv = tape.scalar_mul(level, ones)?;
    let jd = tape.make_diag(jv)?;
    tape.add(k, jd)
}

/// Evaluates roots, escalating the jitter multiplier by 10x (up to
/// [`JITTER_MAX`]) whenever a Cholesky inside the graph fails.
pub(crate) fn eval_with_jitter(
    tape: &mut Tape,
    roots: &[NodeId],
    bindings: &[(NodeId, Value)],
    jitter: Option<NodeId>,
) -> Result<Vec<Value>> {
    let Some(jleaf) = jitter else {
        return tape.eval_many(roots, bindings);
    };
    let mut level = JITTER_BASE;
    loop {
        let mut b = bindings.to_vec();
        b.push((jleaf, Value::scalar(level)));
        match tape.eval_many(roots, &b) {
            Ok(v) => return Ok(v),
            Err(Error::NotPositiveDefinite { .. }) if level < JITTER_MAX => level *= 10.0,
            Err(e) => return Err(e),
        }
    }
}

/// Column sums of the squared entries of an m x t node, returned t x 1.
pub(crate) fn colsum_squares(tape: &mut Tape, m: NodeId) -> Result<NodeId> {
    let (rows, _) = tape.shape(m);
    let sq = tape.square(m)?;
    let ones = tape.constant(Value::ones(1, rows));
    let rowvec = tape.matmul(ones, sq)?;
    tape.transpose(rowvec)
}

/// Maps tape gradients on constrained-parameter leaves into the flat
/// free-state layout (declaration order, fixed parameters skipped,
/// transform chain applied). Parameters without a leaf in the graph get
/// zero gradient.
pub(crate) fn pack_param_grads(
    store: &crate::foundation::ParamStore,
    entries: &[(crate::foundation::ParamId, NodeId)],
    grads: &[Value],
) -> Vec<f64> {
    use std::collections::HashMap;
    let by_id: HashMap<usize, &Value> = entries
        .iter()
        .zip(grads)
        .map(|((pid, _), g)| (pid.0, g))
        .collect();
    let mut out = Vec::with_capacity(store.free_dim());
    for id in store.ids() {
        let p = store.param(id);
        if p.fixed {
            continue;
        }
        match by_id.get(&id.0) {
            Some(g) => out.extend(p.free_grad(g)),
            None => out.extend(std::iter::repeat_n(0.0, p.len())),
        }
    }
    out
}

/// Stacks L column nodes (t x 1) into one t x L node.
pub(crate) fn hstack_cols(tape: &mut Tape, cols: &[NodeId]) -> Result<NodeId> {
    debug_assert!(!cols.is_empty());
    let l = cols.len();
    if l == 1 {
        return Ok(cols[0]);
    }
    let mut acc: Option<NodeId> = None;
    for (i, &c) in cols.iter().enumerate() {
        let mut unit = Value::zeros(1, l);
        unit[(0, i)] = 1.0;
        let e = tape.constant(unit);
        let placed = tape.matmul(c, e)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, placed)?,
            None => placed,
        });
    }
    Ok(acc.unwrap())
}

/// Lower-triangular variational factors with a positive diagonal,
/// free-state packed as row-major lower entries with the diagonal run
/// through the positive transform.
#[derive(Debug, Clone)]
pub struct TriFactors {
    pub factors: Vec<Value>,
}

impl TriFactors {
    pub fn identity(m: usize, l: usize) -> Self {
        TriFactors {
            factors: vec![Value::eye(m); l],
        }
    }

    pub fn dim_per_factor(m: usize) -> usize {
        m * (m + 1) / 2
    }

    pub fn m(&self) -> usize {
        self.factors[0].rows()
    }

    pub fn free_dim(&self) -> usize {
        self.factors.len() * Self::dim_per_factor(self.m())
    }

    pub fn pack(&self, out: &mut Vec<f64>) {
        use crate::special::softplus_inverse;
        for f in &self.factors {
            for i in 0..f.rows() {
                for j in 0..=i {
                    if i == j {
                        out.push(softplus_inverse(
                            f[(i, i)] - crate::foundation::POSITIVE_SHIFT,
                        ));
                    } else {
                        out.push(f[(i, j)]);
                    }
                }
            }
        }
    }

    pub fn unpack(&mut self, state: &[f64]) -> Result<()> {
        use crate::special::softplus;
        let m = self.m();
        let per = Self::dim_per_factor(m);
        if state.len() != per * self.factors.len() {
            return Err(Error::FreeStateLength {
                expected: per * self.factors.len(),
                got: state.len(),
            });
        }
        for (fi, f) in self.factors.iter_mut().enumerate() {
            let mut k = fi * per;
            let mut new = Value::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    new[(i, j)] = if i == j {
                        softplus(state[k]) + crate::foundation::POSITIVE_SHIFT
                    } else {
                        state[k]
                    };
                    k += 1;
                }
            }
            *f = new;
        }
        Ok(())
    }

    /// Chains full-matrix leaf gradients back to the packed free state.
    pub fn pack_grad(&self, leaf_grads: &[Value], out: &mut Vec<f64>) {
        use crate::special::{sigmoid, softplus_inverse};
        for (f, g) in self.factors.iter().zip(leaf_grads) {
            for i in 0..f.rows() {
                for j in 0..=i {
                    if i == j {
                        let x = softplus_inverse(f[(i, i)] - crate::foundation::POSITIVE_SHIFT);
                        out.push(g[(i, i)] * sigmoid(x));
                    } else {
                        out.push(g[(i, j)]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        let x = Value::ones(3, 2);
        assert!(Dataset::new(x.clone(), Value::ones(2, 1)).is_err());
        let d = Dataset::new(x, Value::ones(3, 1)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.input_dim(), 2);
    }

    #[test]
    fn gather_preserves_order() {
        let v = Value::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        let g = gather_rows(&v, &[2, 0]);
        assert_eq!(g.row(0), &[20.0, 21.0]);
        assert_eq!(g.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn trifactors_round_trip() {
        let mut t = TriFactors::identity(3, 2);
        let mut state = Vec::new();
        t.pack(&mut state);
        assert_eq!(state.len(), t.free_dim());
        // perturb and round trip
        for (i, s) in state.iter_mut().enumerate() {
            *s += 0.1 * (i as f64 + 1.0);
        }
        t.unpack(&state).unwrap();
        let mut repacked = Vec::new();
        t.pack(&mut repacked);
        for (a, b) in state.iter().zip(&repacked) {
            assert!((a - b).abs() < 1e-9);
        }
        // diagonals stay positive
        for f in &t.factors {
            for i in 0..3 {
                assert!(f[(i, i)] > 0.0);
                for j in (i + 1)..3 {
                    assert_eq!(f[(i, j)], 0.0);
                }
            }
        }
    }
}
