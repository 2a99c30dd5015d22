//! Sparse Gaussian conditionals and the whitened-prior KL term shared by
//! the variational and MCMC model classes.

use super::{colsum_squares, hstack_cols, jittered_gram};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::ParamLeaves;
use crate::kernels::{kdiag_graph, kmatrix_graph, KernelSpec};

/// Sum over latents of KL[N(m_l, S_l) || N(0, I)] with S_l = L_l L_l^T:
/// 0.5 (m^T m + tr S - 2 sum log diag L - dim).
pub fn gauss_kl(q_mu: &Value, q_sqrt: &[Value]) -> Result<f64> {
    let m = q_mu.rows();
    if q_sqrt.len() != q_mu.cols() {
        return Err(Error::ShapeMismatch {
            op: "gauss-kl".into(),
            detail: format!("{} factors for {} latents", q_sqrt.len(), q_mu.cols()),
        });
    }
    let mut total = q_mu.data().iter().map(|v| v * v).sum::<f64>();
    for f in q_sqrt {
        if f.shape() != (m, m) {
            return Err(Error::ShapeMismatch {
                op: "gauss-kl".into(),
                detail: format!("factor is {:?}, expected {m}x{m}", f.shape()),
            });
        }
        for i in 0..m {
            if f[(i, i)] <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    pivot: i,
                    value: f[(i, i)],
                });
            }
        }
        let trace: f64 = f.tril().data().iter().map(|v| v * v).sum();
        let logdet: f64 = (0..m).map(|i| f[(i, i)].ln()).sum();
        total += trace - 2.0 * logdet - m as f64;
    }
    Ok(0.5 * total)
}

/// Tape form of [`gauss_kl`]; `q_sqrt` nodes are m x m lower factors.
pub fn gauss_kl_graph(tape: &mut Tape, q_mu: NodeId, q_sqrt: &[NodeId]) -> Result<NodeId> {
    let (m, l) = tape.shape(q_mu);
    if q_sqrt.len() != l {
        return Err(Error::ShapeMismatch {
            op: "gauss-kl".into(),
            detail: format!("{} factors for {l} latents", q_sqrt.len()),
        });
    }
    let sq = tape.square(q_mu)?;
    let mut acc = tape.reduce_sum(sq)?;
    for &f in q_sqrt {
        let fsq = tape.square(f)?;
        let tr = tape.reduce_sum(fsq)?;
        let d = tape.diag_part(f)?;
        let ld = tape.log(d)?;
        let sld = tape.reduce_sum(ld)?;
        let m2 = tape.scalar(-2.0);
        let neg2 = tape.scalar_mul(m2, sld)?;
        let t = tape.add(tr, neg2)?;
        acc = tape.add(acc, t)?;
    }
    let dim = tape.scalar(-((m * l) as f64));
    let shifted = tape.add(acc, dim)?;
    let half = tape.scalar(0.5);
    tape.scalar_mul(half, shifted)
}

/// Tape subgraph for the sparse conditional q(f(Xnew)) given inducing
/// structure at Z.
pub struct ConditionalGraph {
    /// t x L posterior means.
    pub mean: NodeId,
    /// Marginal variances per latent, each t x 1.
    pub var_cols: Vec<NodeId>,
    /// Marginal variances assembled t x L.
    pub var: NodeId,
    /// Full t x t covariance per latent when requested.
    pub full_cov: Option<Vec<NodeId>>,
    /// Cholesky factor node of the jittered K_zz (reusable by callers).
    pub luu: NodeId,
}

/// Records the conditional: with L_uu = chol(K_zz + jitter) and
/// A0 = L_uu^-1 K_zx,
///   whitened:      mean = A0^T q_mu,
///   non-whitened:  mean = A^T q_mu with A = L_uu^-T A0,
/// var_l = kdiag(Xnew) - colsum(A0^2) + colsum((L_S_l^T A)^2), where the
/// last term is dropped when `q_sqrt` is None (deterministic inducing
/// values).
#[allow(clippy::too_many_arguments)]
pub fn conditional_graph(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    kernel: &KernelSpec,
    xnew: NodeId,
    z: NodeId,
    q_mu: NodeId,
    q_sqrt: Option<&[NodeId]>,
    whiten: bool,
    full_cov: bool,
    jitter: NodeId,
) -> Result<ConditionalGraph> {
    let (m, _) = tape.shape(z);
    let (_, l) = tape.shape(q_mu);
    if tape.shape(q_mu).0 != m {
        return Err(Error::ShapeMismatch {
            op: "conditional".into(),
            detail: format!("q_mu has {} rows, Z has {m}", tape.shape(q_mu).0),
        });
    }
    if let Some(fs) = q_sqrt {
        if fs.len() != l {
            return Err(Error::ShapeMismatch {
                op: "conditional".into(),
                detail: format!("{} q_sqrt factors for {l} latents", fs.len()),
            });
        }
    }

    let kzz = kmatrix_graph(tape, leaves, kernel, z, None)?;
    let kj = jittered_gram(tape, kzz, jitter)?;
    let luu = tape.cholesky(kj)?;
    let kzx = kmatrix_graph(tape, leaves, kernel, z, Some(xnew))?;
    let a0 = tape.trisolve(luu, kzx, true, false)?;
    let a = if whiten {
        a0
    } else {
        tape.trisolve(luu, a0, true, true)?
    };
    let at = tape.transpose(a)?;
    let mean = tape.matmul(at, q_mu)?;

    let kd = kdiag_graph(tape, leaves, kernel, xnew)?;
    let qnn_diag = colsum_squares(tape, a0)?;
    let base = tape.sub(kd, qnn_diag)?;

    let mut var_cols = Vec::with_capacity(l);
    let mut bs: Vec<Option<NodeId>> = Vec::with_capacity(l);
    for li in 0..l {
        match q_sqrt {
            Some(fs) => {
                let st = tape.transpose(fs[li])?;
                let b = tape.matmul(st, a)?;
                let extra = colsum_squares(tape, b)?;
                var_cols.push(tape.add(base, extra)?);
                bs.push(Some(b));
            }
            None => {
                var_cols.push(base);
                bs.push(None);
            }
        }
    }
    let var = hstack_cols(tape, &var_cols)?;

    let full = if full_cov {
        let knn = kmatrix_graph(tape, leaves, kernel, xnew, None)?;
        let a0t = tape.transpose(a0)?;
        let qnn = tape.matmul(a0t, a0)?;
        let base_f = tape.sub(knn, qnn)?;
        let mut covs = Vec::with_capacity(l);
        for b in &bs {
            match b {
                Some(b) => {
                    let bt = tape.transpose(*b)?;
                    let s = tape.matmul(bt, *b)?;
                    covs.push(tape.add(base_f, s)?);
                }
                None => covs.push(base_f),
            }
        }
        Some(covs)
    } else {
        None
    };

    Ok(ConditionalGraph {
        mean,
        var_cols,
        var,
        full_cov: full,
        luu,
    })
}
