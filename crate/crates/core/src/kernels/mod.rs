//! Covariance functions evaluated as tape subgraphs so gradients reach
//! kernel parameters.
//!
//! Leaf kernels own their parameters through the model's [`ParamStore`];
//! composites distribute elementwise over children. Same-input calls
//! (`x2 = None`) produce the symmetric Gram matrix; the white-noise kernel
//! contributes only to same-input calls.

mod expr;

pub use expr::{parse_kernel, KernelExpr, LeafKind};

use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{ParamId, ParamLeaves, ParamStore};

pub const DEFAULT_VARIANCE: f64 = 1.0;
pub const DEFAULT_LENGTHSCALE: f64 = 1.0;
/// Floor applied to squared distances before the Matérn square root; keeps
/// the pullback finite at coincident inputs.
const SQDIST_FLOOR: f64 = 1e-40;

#[derive(Debug, Clone)]
pub enum KernelSpec {
    Rbf {
        variance: ParamId,
        lengthscales: ParamId,
        active_dims: Option<Vec<usize>>,
        input_dim: usize,
    },
    Matern32 {
        variance: ParamId,
        lengthscales: ParamId,
        active_dims: Option<Vec<usize>>,
        input_dim: usize,
    },
    Linear {
        variance: ParamId,
        active_dims: Option<Vec<usize>>,
        input_dim: usize,
    },
    White {
        variance: ParamId,
    },
    Constant {
        variance: ParamId,
    },
    Sum(Vec<KernelSpec>),
    Product(Vec<KernelSpec>),
}

impl KernelSpec {
    /// Instantiates a parsed kernel expression against an input
    /// dimensionality, allocating parameters with path-based names.
    pub fn instantiate(expr: &KernelExpr, store: &mut ParamStore, input_dim: usize) -> Result<Self> {
        Self::build(expr, store, input_dim, "kernel")
    }

    fn build(
        expr: &KernelExpr,
        store: &mut ParamStore,
        input_dim: usize,
        prefix: &str,
    ) -> Result<Self> {
        match expr {
            KernelExpr::Leaf {
                kind,
                ard,
                active_dims,
            } => {
                if let Some(dims) = active_dims {
                    if dims.is_empty() {
                        return Err(Error::ModelConfig("active dims must be non-empty".into()));
                    }
                    if let Some(&bad) = dims.iter().find(|&&d| d >= input_dim) {
                        return Err(Error::ModelConfig(format!(
                            "active dim {bad} out of range for input dim {input_dim}"
                        )));
                    }
                }
                let d_sel = active_dims.as_ref().map_or(input_dim, |d| d.len());
                let path = format!("{prefix}.{}", kind.name());
                let variance =
                    store.add_positive_scalar(format!("{path}.variance"), DEFAULT_VARIANCE);
                Ok(match kind {
                    LeafKind::Rbf | LeafKind::Matern32 => {
                        let lengthscales = if *ard {
                            store.add_positive_vector(
                                format!("{path}.lengthscales"),
                                DEFAULT_LENGTHSCALE,
                                d_sel,
                            )
                        } else {
                            store.add_positive_scalar(
                                format!("{path}.lengthscales"),
                                DEFAULT_LENGTHSCALE,
                            )
                        };
                        if matches!(kind, LeafKind::Rbf) {
                            KernelSpec::Rbf {
                                variance,
                                lengthscales,
                                active_dims: active_dims.clone(),
                                input_dim,
                            }
                        } else {
                            KernelSpec::Matern32 {
                                variance,
                                lengthscales,
                                active_dims: active_dims.clone(),
                                input_dim,
                            }
                        }
                    }
                    LeafKind::Linear => KernelSpec::Linear {
                        variance,
                        active_dims: active_dims.clone(),
                        input_dim,
                    },
                    LeafKind::White => KernelSpec::White { variance },
                    LeafKind::Constant => KernelSpec::Constant { variance },
                })
            }
            KernelExpr::Sum(children) => {
                let built = Self::build_children(children, store, input_dim, prefix, "sum")?;
                Ok(KernelSpec::Sum(built))
            }
            KernelExpr::Product(children) => {
                let built = Self::build_children(children, store, input_dim, prefix, "product")?;
                Ok(KernelSpec::Product(built))
            }
        }
    }

    fn build_children(
        children: &[KernelExpr],
        store: &mut ParamStore,
        input_dim: usize,
        prefix: &str,
        kind: &str,
    ) -> Result<Vec<KernelSpec>> {
        if children.len() < 2 {
            return Err(Error::ModelConfig(format!(
                "{kind} kernel needs at least 2 children"
            )));
        }
        children
            .iter()
            .enumerate()
            .map(|(i, c)| Self::build(c, store, input_dim, &format!("{prefix}.{kind}.{i}")))
            .collect()
    }

    /// Combines children into a composite, the `combine` operation.
    pub fn combine(kind: LeafCombine, children: Vec<KernelSpec>) -> Result<Self> {
        if children.len() < 2 {
            return Err(Error::ModelConfig(
                "combine needs at least 2 children".into(),
            ));
        }
        Ok(match kind {
            LeafCombine::Sum => KernelSpec::Sum(children),
            LeafCombine::Product => KernelSpec::Product(children),
        })
    }

    /// Parameters of this kernel in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        match self {
            KernelSpec::Rbf {
                variance,
                lengthscales,
                ..
            }
            | KernelSpec::Matern32 {
                variance,
                lengthscales,
                ..
            } => {
                out.push(*variance);
                out.push(*lengthscales);
            }
            KernelSpec::Linear { variance, .. }
            | KernelSpec::White { variance }
            | KernelSpec::Constant { variance } => out.push(*variance),
            KernelSpec::Sum(cs) | KernelSpec::Product(cs) => {
                for c in cs {
                    c.collect_params(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LeafCombine {
    Sum,
    Product,
}

fn check_input_dim(tape: &Tape, x: NodeId, expected: usize, what: &str) -> Result<()> {
    let (_, d) = tape.shape(x);
    if d != expected {
        return Err(Error::ShapeMismatch {
            op: "kmatrix".into(),
            detail: format!("{what} has {d} columns, kernel expects {expected}"),
        });
    }
    Ok(())
}

/// Column-selection via a constant 0/1 matrix so adjoints scatter back.
fn select_dims(tape: &mut Tape, x: NodeId, dims: &Option<Vec<usize>>) -> Result<NodeId> {
    match dims {
        None => Ok(x),
        Some(dims) => {
            let (_, d) = tape.shape(x);
            let mut sel = Value::zeros(d, dims.len());
            for (j, &dim) in dims.iter().enumerate() {
                sel[(dim, j)] = 1.0;
            }
            let s = tape.constant(sel);
            tape.matmul(x, s)
        }
    }
}

/// Inputs scaled per-dimension by 1/lengthscale. A scalar lengthscale is
/// broadcast through the same arithmetic as the ARD path so an ARD kernel
/// with equal entries matches the isotropic one exactly.
fn scale_by_lengthscales(
    tape: &mut Tape,
    x: NodeId,
    ls_leaf: NodeId,
    d_sel: usize,
) -> Result<NodeId> {
    let (ls_len, _) = tape.shape(ls_leaf);
    let recip = tape.recip_positive(ls_leaf)?;
    let recip_vec = if ls_len == d_sel {
        recip
    } else {
        let ones = tape.constant(Value::ones(d_sel, 1));
        tape.scalar_mul(recip, ones)?
    };
    let diag = tape.make_diag(recip_vec)?;
    tape.matmul(x, diag)
}

/// Squared distances ||a||^2 + ||b||^2 - 2 a.b between scaled rows.
fn sqdist(tape: &mut Tape, xs1: NodeId, xs2: Option<NodeId>) -> Result<NodeId> {
    let (_, d) = tape.shape(xs1);
    let ones_d = tape.constant(Value::ones(d, 1));
    let sq1 = tape.square(xs1)?;
    let a = tape.matmul(sq1, ones_d)?;
    let (xs2, b) = match xs2 {
        Some(x2) => {
            let sq2 = tape.square(x2)?;
            let b = tape.matmul(sq2, ones_d)?;
            (x2, b)
        }
        None => (xs1, a),
    };
    let x2t = tape.transpose(xs2)?;
    let c = tape.matmul(xs1, x2t)?;
    let m2 = tape.scalar(-2.0);
    let c2 = tape.scalar_mul(m2, c)?;
    let with_a = tape.broadcast_add_col(c2, a)?;
    let bt = tape.transpose(b)?;
    tape.broadcast_add_row(with_a, bt)
}

/// Records the covariance matrix k(X1, X2) as a tape subgraph and returns
/// its node: n x m, or the symmetric n x n Gram matrix when `x2` is None.
pub fn kmatrix_graph(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    kernel: &KernelSpec,
    x1: NodeId,
    x2: Option<NodeId>,
) -> Result<NodeId> {
    let n = tape.shape(x1).0;
    let m = x2.map_or(n, |x| tape.shape(x).0);
    match kernel {
        KernelSpec::Rbf {
            variance,
            lengthscales,
            active_dims,
            input_dim,
        }
        | KernelSpec::Matern32 {
            variance,
            lengthscales,
            active_dims,
            input_dim,
        } => {
            check_input_dim(tape, x1, *input_dim, "X1")?;
            if let Some(x2) = x2 {
                check_input_dim(tape, x2, *input_dim, "X2")?;
            }
            let d_sel = active_dims.as_ref().map_or(*input_dim, |d| d.len());
            let x1s = select_dims(tape, x1, active_dims)?;
            let x2s = match x2 {
                Some(x) => Some(select_dims(tape, x, active_dims)?),
                None => None,
            };
            let ls = leaves.leaf(*lengthscales);
            let xs1 = scale_by_lengthscales(tape, x1s, ls, d_sel)?;
            let xs2 = match x2s {
                Some(x) => Some(scale_by_lengthscales(tape, x, ls, d_sel)?),
                None => None,
            };
            let d2 = sqdist(tape, xs1, xs2)?;
            let var = leaves.leaf(*variance);
            if matches!(kernel, KernelSpec::Rbf { .. }) {
                let mh = tape.scalar(-0.5);
                let e = tape.scalar_mul(mh, d2)?;
                let k = tape.exp(e)?;
                tape.scalar_mul(var, k)
            } else {
                let clamped = tape.clamp_min(d2, SQDIST_FLOOR)?;
                let r = tape.sqrt(clamped)?;
                let s3 = tape.scalar(3.0f64.sqrt());
                let s3r = tape.scalar_mul(s3, r)?;
                let ones = tape.constant(Value::ones(n, m));
                let lin = tape.add(ones, s3r)?;
                let neg = tape.neg(s3r)?;
                let decay = tape.exp(neg)?;
                let k = tape.mul(lin, decay)?;
                tape.scalar_mul(var, k)
            }
        }
        KernelSpec::Linear {
            variance,
            active_dims,
            input_dim,
        } => {
            check_input_dim(tape, x1, *input_dim, "X1")?;
            if let Some(x2) = x2 {
                check_input_dim(tape, x2, *input_dim, "X2")?;
            }
            let x1s = select_dims(tape, x1, active_dims)?;
            let x2s = match x2 {
                Some(x) => select_dims(tape, x, active_dims)?,
                None => x1s,
            };
            let x2t = tape.transpose(x2s)?;
            let prod = tape.matmul(x1s, x2t)?;
            tape.scalar_mul(leaves.leaf(*variance), prod)
        }
        KernelSpec::White { variance } => {
            // Cross-covariance is zero whenever X2 is explicitly given.
            let base = if x2.is_none() {
                tape.constant(Value::eye(n))
            } else {
                tape.constant(Value::zeros(n, m))
            };
            tape.scalar_mul(leaves.leaf(*variance), base)
        }
        KernelSpec::Constant { variance } => {
            let ones = tape.constant(Value::ones(n, m));
            tape.scalar_mul(leaves.leaf(*variance), ones)
        }
        KernelSpec::Sum(children) => {
            let mut acc = kmatrix_graph(tape, leaves, &children[0], x1, x2)?;
            for c in &children[1..] {
                let k = kmatrix_graph(tape, leaves, c, x1, x2)?;
                acc = tape.add(acc, k)?;
            }
            Ok(acc)
        }
        KernelSpec::Product(children) => {
            let mut acc = kmatrix_graph(tape, leaves, &children[0], x1, x2)?;
            for c in &children[1..] {
                let k = kmatrix_graph(tape, leaves, c, x1, x2)?;
                acc = tape.mul(acc, k)?;
            }
            Ok(acc)
        }
    }
}

/// Diagonal of the same-input Gram matrix, built without forming it.
pub fn kdiag_graph(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    kernel: &KernelSpec,
    x: NodeId,
) -> Result<NodeId> {
    let n = tape.shape(x).0;
    match kernel {
        KernelSpec::Rbf {
            variance,
            input_dim,
            ..
        }
        | KernelSpec::Matern32 {
            variance,
            input_dim,
            ..
        } => {
            check_input_dim(tape, x, *input_dim, "X")?;
            let ones = tape.constant(Value::ones(n, 1));
            tape.scalar_mul(leaves.leaf(*variance), ones)
        }
        KernelSpec::White { variance } | KernelSpec::Constant { variance } => {
            let ones = tape.constant(Value::ones(n, 1));
            tape.scalar_mul(leaves.leaf(*variance), ones)
        }
        KernelSpec::Linear {
            variance,
            active_dims,
            input_dim,
        } => {
            check_input_dim(tape, x, *input_dim, "X")?;
            let xs = select_dims(tape, x, active_dims)?;
            let (_, d) = tape.shape(xs);
            let sq = tape.square(xs)?;
            let ones = tape.constant(Value::ones(d, 1));
            let rows = tape.matmul(sq, ones)?;
            tape.scalar_mul(leaves.leaf(*variance), rows)
        }
        KernelSpec::Sum(children) => {
            let mut acc = kdiag_graph(tape, leaves, &children[0], x)?;
            for c in &children[1..] {
                let k = kdiag_graph(tape, leaves, c, x)?;
                acc = tape.add(acc, k)?;
            }
            Ok(acc)
        }
        KernelSpec::Product(children) => {
            let mut acc = kdiag_graph(tape, leaves, &children[0], x)?;
            for c in &children[1..] {
                let k = kdiag_graph(tape, leaves, c, x)?;
                acc = tape.mul(acc, k)?;
            }
            Ok(acc)
        }
    }
}
