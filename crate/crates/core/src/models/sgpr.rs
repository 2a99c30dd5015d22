//! Sparse GP regression with the collapsed variational bound: the
//! optimal q(u) is integrated out analytically, leaving an m x m
//! factorized computation that never forms an n x n matrix.

use super::{colsum_squares, eval_with_jitter, jittered_gram, Dataset};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{ParamId, ParamLeaves, ParamStore, Transform};
use crate::inference::Objective;
use crate::kernels::{kdiag_graph, kmatrix_graph, KernelExpr, KernelSpec};
use crate::likelihoods::LikelihoodSpec;

pub struct SgprModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    pub z: ParamId,
    graph: Option<SgprGraph>,
}

struct SgprGraph {
    tape: Tape,
    leaves: ParamLeaves,
    x: NodeId,
    y: NodeId,
    jitter: NodeId,
    bound: NodeId,
}

impl SgprModel {
    pub fn new(data: Dataset, kernel_expr: &KernelExpr, z_init: Value) -> Result<Self> {
        let m = z_init.rows();
        if m == 0 || m > data.len() {
            return Err(Error::ModelConfig(format!(
                "inducing count {m} must be in 1..={}",
                data.len()
            )));
        }
        if z_init.cols() != data.input_dim() {
            return Err(Error::ModelConfig(format!(
                "inducing inputs have {} columns, data has {}",
                z_init.cols(),
                data.input_dim()
            )));
        }
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::gaussian(&mut store);
        let z = store.add("inducing.z", z_init, Transform::Identity);
        Ok(SgprModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            z,
            graph: None,
        })
    }

    fn noise(&self) -> ParamId {
        match &self.likelihood {
            LikelihoodSpec::Gaussian { noise } => *noise,
            _ => unreachable!("construction enforces a gaussian likelihood"),
        }
    }

    fn ensure_graph(&mut self) -> Result<()> {
        if self.graph.is_some() {
            return Ok(());
        }
        let (n, d) = self.data.x.shape();
        let p = self.data.targets();
        let noise = self.noise();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let y = tape.leaf(n, p);
        let jitter = tape.leaf(1, 1);
        let z = leaves.leaf(self.z);

        let kzz = kmatrix_graph(&mut tape, &leaves, &self.kernel, z, None)?;
        let kj = jittered_gram(&mut tape, kzz, jitter)?;
        let luu = tape.cholesky(kj)?;
        let kzx = kmatrix_graph(&mut tape, &leaves, &self.kernel, z, Some(x))?;
        let a0 = tape.trisolve(luu, kzx, true, false)?;

        let s2 = leaves.leaf(noise);
        let ls2 = tape.log(s2)?;
        let mh = tape.scalar(-0.5);
        let e = tape.scalar_mul(mh, ls2)?;
        let recip_sigma = tape.exp(e)?; // 1/sigma
        let a = tape.scalar_mul(recip_sigma, a0)?;

        let at = tape.transpose(a)?;
        let aat = tape.matmul(a, at)?;
        let m = tape.shape(z).0;
        let eye = tape.constant(Value::eye(m));
        let b = tape.add(aat, eye)?;
        let lb = tape.cholesky(b)?;

        let ay = tape.matmul(a, y)?;
        let cb = tape.trisolve(lb, ay, true, false)?;
        let c = tape.scalar_mul(recip_sigma, cb)?;

        // bound = -(np/2) log(2 pi) - p sum(log diag L_B) - (np/2) log s2
        //         - ||y||^2/(2 s2) + ||c||^2/2
        //         - p/(2 s2) sum kdiag(X) + (p/2) tr(A A^T)
        let db = tape.diag_part(lb)?;
        let ldb = tape.log(db)?;
        let sldb = tape.reduce_sum(ldb)?;
        let ysq = tape.square(y)?;
        let ynorm = tape.reduce_sum(ysq)?;
        let csq = tape.square(c)?;
        let cnorm = tape.reduce_sum(csq)?;
        let kd = kdiag_graph(&mut tape, &leaves, &self.kernel, x)?;
        let skd = tape.reduce_sum(kd)?;
        let asq = tape.square(a)?;
        let tr_aat = tape.reduce_sum(asq)?;

        // 1/(2 s2) = exp(-log s2 - log 2)
        let nls2 = tape.neg(ls2)?;
        let ln2 = tape.scalar(-(2.0f64.ln()));
        let sh = tape.add(nls2, ln2)?;
        let recip_2s2 = tape.exp(sh)?;

        let pf = p as f64;
        let nf = n as f64;
        let const_term = tape.scalar(-0.5 * nf * pf * (2.0 * std::f64::consts::PI).ln());
        let mp = tape.scalar(-pf);
        let t_logdet = tape.scalar_mul(mp, sldb)?;
        let mnp2 = tape.scalar(-0.5 * nf * pf);
        let t_logs2 = tape.scalar_mul(mnp2, ls2)?;
        let yterm = tape.mul(recip_2s2, ynorm)?;
        let t_y = tape.neg(yterm)?;
        let half = tape.scalar(0.5);
        let t_c = tape.scalar_mul(half, cnorm)?;
        let kterm = tape.mul(recip_2s2, skd)?;
        let mpk = tape.scalar(-pf);
        let t_k = tape.scalar_mul(mpk, kterm)?;
        let halfp = tape.scalar(0.5 * pf);
        let t_tr = tape.scalar_mul(halfp, tr_aat)?;

        let mut bound = const_term;
        for term in [t_logdet, t_logs2, t_y, t_c, t_k, t_tr] {
            bound = tape.add(bound, term)?;
        }

        self.graph = Some(SgprGraph {
            tape,
            leaves,
            x,
            y,
            jitter,
            bound,
        });
        Ok(())
    }

    /// The collapsed lower bound on the log marginal likelihood.
    pub fn bound(&mut self) -> Result<f64> {
        self.ensure_graph()?;
        let Self { store, data, graph, .. } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        b.push((g.y, data.y.clone()));
        let out = eval_with_jitter(&mut g.tape, &[g.bound], &b, Some(g.jitter))?;
        Ok(out[0].as_scalar())
    }

    pub fn bound_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        self.ensure_graph()?;
        let Self { store, data, graph, .. } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        b.push((g.y, data.y.clone()));
        let out = eval_with_jitter(&mut g.tape, &[g.bound], &b, Some(g.jitter))?;
        let value = out[0].as_scalar();
        let entries = g.leaves.entries();
        let wrt: Vec<NodeId> = entries.iter().map(|(_, n)| *n).collect();
        let grads = g.tape.grad(g.bound, &wrt)?;
        Ok((value, super::pack_param_grads(store, &entries, &grads)))
    }

    /// Prediction from the collapsed optimal q(u).
    pub fn predict(&mut self, xnew: &Value, full_cov: bool) -> Result<(Value, Value)> {
        if xnew.cols() != self.data.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "predict".into(),
                detail: format!(
                    "query has {} columns, training data has {}",
                    xnew.cols(),
                    self.data.input_dim()
                ),
            });
        }
        let (n, d) = self.data.x.shape();
        let p = self.data.targets();
        let t = xnew.rows();
        let m = self.store.param(self.z).unconstrained.rows();
        let noise = self.noise();

        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let y = tape.leaf(n, p);
        let xq = tape.leaf(t, d);
        let jitter = tape.leaf(1, 1);
        let z = leaves.leaf(self.z);

        let kzz = kmatrix_graph(&mut tape, &leaves, &self.kernel, z, None)?;
        let kj = jittered_gram(&mut tape, kzz, jitter)?;
        let luu = tape.cholesky(kj)?;
        let kzx = kmatrix_graph(&mut tape, &leaves, &self.kernel, z, Some(x))?;
        let a0 = tape.trisolve(luu, kzx, true, false)?;
        let s2 = leaves.leaf(noise);
        let ls2 = tape.log(s2)?;
        let mh = tape.scalar(-0.5);
        let e = tape.scalar_mul(mh, ls2)?;
        let recip_sigma = tape.exp(e)?;
        let a = tape.scalar_mul(recip_sigma, a0)?;
        let at = tape.transpose(a)?;
        let aat = tape.matmul(a, at)?;
        let eye = tape.constant(Value::eye(m));
        let bmat = tape.add(aat, eye)?;
        let lb = tape.cholesky(bmat)?;
        let ay = tape.matmul(a, y)?;
        let cb = tape.trisolve(lb, ay, true, false)?;
        let c = tape.scalar_mul(recip_sigma, cb)?;

        let kzq = kmatrix_graph(&mut tape, &leaves, &self.kernel, z, Some(xq))?;
        let tmp1 = tape.trisolve(luu, kzq, true, false)?;
        let tmp2 = tape.trisolve(lb, tmp1, true, false)?;
        let t2t = tape.transpose(tmp2)?;
        let mean = tape.matmul(t2t, c)?;
        let var = if full_cov {
            let knn = kmatrix_graph(&mut tape, &leaves, &self.kernel, xq, None)?;
            let t1t = tape.transpose(tmp1)?;
            let q1 = tape.matmul(t1t, tmp1)?;
            let s = tape.sub(knn, q1)?;
            let q2 = tape.matmul(t2t, tmp2)?;
            tape.add(s, q2)?
        } else {
            let kd = kdiag_graph(&mut tape, &leaves, &self.kernel, xq)?;
            let c1 = colsum_squares(&mut tape, tmp1)?;
            let s = tape.sub(kd, c1)?;
            let c2 = colsum_squares(&mut tape, tmp2)?;
            tape.add(s, c2)?
        };

        let mut b = leaves.bindings(&self.store);
        b.push((x, self.data.x.clone()));
        b.push((y, self.data.y.clone()));
        b.push((xq, xnew.clone()));
        let out = eval_with_jitter(&mut tape, &[mean, var], &b, Some(jitter))?;
        Ok((out[0].clone(), out[1].clone()))
    }

    pub fn predict_y(&mut self, xnew: &Value) -> Result<(Value, Value)> {
        let (mean, var) = self.predict(xnew, false)?;
        self.likelihood.predict_mean_var(&self.store, &mean, &var)
    }
}

impl Objective for SgprModel {
    fn state(&self) -> Vec<f64> {
        self.store.free_state()
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        self.store.set_free_state(state)
    }

    fn data_len(&self) -> usize {
        self.data.len()
    }

    fn value_and_grad(&mut self, _batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.bound_and_grad()?;
        Ok((-v, g.iter().map(|x| -x).collect()))
    }
}
