//! Exact Gaussian process regression: conjugate log marginal likelihood
//! and predictive conditionals through the Cholesky factor of K + sigma^2 I.

use super::{colsum_squares, Dataset};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{ParamLeaves, ParamStore};
use crate::inference::Objective;
use crate::kernels::{kdiag_graph, kmatrix_graph, KernelExpr, KernelSpec};
use crate::likelihoods::LikelihoodSpec;

pub struct GprModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    graph: Option<GprGraph>,
}

struct GprGraph {
    tape: Tape,
    leaves: ParamLeaves,
    x: NodeId,
    y: NodeId,
    logml: NodeId,
}

impl GprModel {
    pub fn new(data: Dataset, kernel_expr: &KernelExpr) -> Result<Self> {
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::gaussian(&mut store);
        Ok(GprModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            graph: None,
        })
    }

    fn ensure_graph(&mut self) -> Result<()> {
        if self.graph.is_none() {
            let (n, d) = self.data.x.shape();
            let p = self.data.targets();
            let mut tape = Tape::new();
            let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
            let x = tape.leaf(n, d);
            let y = tape.leaf(n, p);
            let logml = build_log_marginal(&mut tape, &leaves, &self.kernel, &self.likelihood, x, y)?;
            self.graph = Some(GprGraph { tape, leaves, x, y, logml });
        }
        Ok(())
    }

    /// log N(Y | 0, K + sigma^2 I).
    pub fn log_marginal(&mut self) -> Result<f64> {
        self.ensure_graph()?;
        let Self { store, data, graph, .. } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        b.push((g.y, data.y.clone()));
        Ok(g.tape.eval(g.logml, &b)?.as_scalar())
    }

    /// Log marginal and its gradient with respect to the free state.
    pub fn log_marginal_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        self.ensure_graph()?;
        let Self { store, data, graph, .. } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        b.push((g.y, data.y.clone()));
        let value = g.tape.eval(g.logml, &b)?.as_scalar();
        let entries = g.leaves.entries();
        let wrt: Vec<NodeId> = entries.iter().map(|(_, n)| *n).collect();
        let grads = g.tape.grad(g.logml, &wrt)?;
        let packed = super::pack_param_grads(store, &entries, &grads);
        Ok((value, packed))
    }

    /// Latent predictive moments at new inputs. With `full_cov` the
    /// variance is the t x t posterior covariance, otherwise t x 1
    /// marginals (per target column the mean is t x p).
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
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let y = tape.leaf(n, p);
        let xq = tape.leaf(t, d);
        let noise = match &self.likelihood {
            LikelihoodSpec::Gaussian { noise } => *noise,
            _ => unreachable!("construction enforces a gaussian likelihood"),
        };
        let ky = noisy_gram(&mut tape, &leaves, &self.kernel, x, noise)?;
        let l = tape.cholesky(ky)?;
        let kxq = kmatrix_graph(&mut tape, &leaves, &self.kernel, x, Some(xq))?;
        let a = tape.trisolve(l, kxq, true, false)?;
        let ay = tape.trisolve(l, y, true, false)?;
        let at = tape.transpose(a)?;
        let mean = tape.matmul(at, ay)?;
        let var = if full_cov {
            let knn = kmatrix_graph(&mut tape, &leaves, &self.kernel, xq, None)?;
            let qf = tape.matmul(at, a)?;
            tape.sub(knn, qf)?
        } else {
            let kd = kdiag_graph(&mut tape, &leaves, &self.kernel, xq)?;
            let cs = colsum_squares(&mut tape, a)?;
            tape.sub(kd, cs)?
        };
        let mut b = leaves.bindings(&self.store);
        b.push((x, self.data.x.clone()));
        b.push((y, self.data.y.clone()));
        b.push((xq, xnew.clone()));
        let out = tape.eval_many(&[mean, var], &b)?;
        Ok((out[0].clone(), out[1].clone()))
    }

    /// Observation-space prediction: latent moments pushed through the
    /// gaussian likelihood.
    pub fn predict_y(&mut self, xnew: &Value) -> Result<(Value, Value)> {
        let (mean, var) = self.predict(xnew, false)?;
        self.likelihood.predict_mean_var(&self.store, &mean, &var)
    }
}

/// Shared: K(X, X) + sigma^2 I as a graph.
fn noisy_gram(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    kernel: &KernelSpec,
    x: NodeId,
    noise: crate::foundation::ParamId,
) -> Result<NodeId> {
    let (n, _) = tape.shape(x);
    let k = kmatrix_graph(tape, leaves, kernel, x, None)?;
    let s2 = leaves.leaf(noise);
    let ones = tape.constant(Value::ones(n, 1));
    let nv = tape.scalar_mul(s2, ones)?;
    let nd = tape.make_diag(nv)?;
    tape.add(k, nd)
}

fn build_log_marginal(
    tape: &mut Tape,
    leaves: &ParamLeaves,
    kernel: &KernelSpec,
    likelihood: &LikelihoodSpec,
    x: NodeId,
    y: NodeId,
) -> Result<NodeId> {
    let (n, _) = tape.shape(x);
    let p = tape.shape(y).1;
    let noise = match likelihood {
        LikelihoodSpec::Gaussian { noise } => *noise,
        _ => {
            return Err(Error::ModelConfig(
                "exact GP regression requires a gaussian likelihood".into(),
            ))
        }
    };
    let ky = noisy_gram(tape, leaves, kernel, x, noise)?;
    let l = tape.cholesky(ky)?;
    let a = tape.trisolve(l, y, true, false)?;
    let asq = tape.square(a)?;
    let quad = tape.reduce_sum(asq)?;
    let d = tape.diag_part(l)?;
    let ld = tape.log(d)?;
    let sld = tape.reduce_sum(ld)?;
    let mh = tape.scalar(-0.5);
    let t1 = tape.scalar_mul(mh, quad)?;
    let mp = tape.scalar(-(p as f64));
    let t2 = tape.scalar_mul(mp, sld)?;
    let c = tape.scalar(-0.5 * (n * p) as f64 * (2.0 * std::f64::consts::PI).ln());
    let s = tape.add(t1, t2)?;
    tape.add(s, c)
}

impl Objective for GprModel {
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
        let (v, g) = self.log_marginal_and_grad()?;
        Ok((-v, g.iter().map(|x| -x).collect()))
    }
}
