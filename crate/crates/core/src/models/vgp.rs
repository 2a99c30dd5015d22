//! Full-covariance variational GP: the whitened q lives on the training
//! inputs themselves (conceptually Z = X), giving a conjugate-exact
//! family for gaussian likelihoods and a general one otherwise.

use super::{
    conditional_graph, eval_with_jitter, gauss_kl_graph, Dataset, TriFactors,
};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{
    hermite_rule, ParamLeaves, ParamStore, QuadratureRule, DEFAULT_QUADRATURE_POINTS,
};
use crate::inference::Objective;
use crate::kernels::{KernelExpr, KernelSpec};
use crate::likelihoods::LikelihoodSpec;

pub struct VgpModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    pub q_mu: Value,
    pub q_sqrt: TriFactors,
    rule: QuadratureRule,
    graph: Option<VgpGraph>,
}

struct VgpGraph {
    tape: Tape,
    leaves: ParamLeaves,
    x: NodeId,
    obs: Vec<NodeId>,
    qmu: NodeId,
    qsqrt: Vec<NodeId>,
    jitter: NodeId,
    elbo: NodeId,
}

impl VgpModel {
    pub fn new(data: Dataset, kernel_expr: &KernelExpr, likelihood_text: &str) -> Result<Self> {
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::parse(likelihood_text, &mut store)?;
        likelihood.validate_targets(&data.y)?;
        let n = data.len();
        let l = likelihood.latent_dim();
        Ok(VgpModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            q_mu: Value::zeros(n, l),
            q_sqrt: TriFactors::identity(n, l),
            rule: hermite_rule(DEFAULT_QUADRATURE_POINTS)?,
            graph: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.likelihood.latent_dim()
    }

    fn ensure_graph(&mut self) -> Result<()> {
        if self.graph.is_some() {
            return Ok(());
        }
        let (n, d) = self.data.x.shape();
        let l = self.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let obs = self.likelihood.declare_observations(&mut tape, n);
        let qmu = tape.leaf(n, l);
        let qsqrt: Vec<NodeId> = (0..l).map(|_| tape.leaf(n, n)).collect();
        let jitter = tape.leaf(1, 1);

        let cond = conditional_graph(
            &mut tape,
            &leaves,
            &self.kernel,
            x,
            x,
            qmu,
            Some(&qsqrt),
            true,
            false,
            jitter,
        )?;
        let ve = self.likelihood.variational_expectations_graph(
            &mut tape,
            &leaves,
            &self.rule,
            cond.mean,
            cond.var,
            &obs,
        )?;
        let sve = tape.reduce_sum(ve)?;
        let kl = gauss_kl_graph(&mut tape, qmu, &qsqrt)?;
        let elbo = tape.sub(sve, kl)?;

        self.graph = Some(VgpGraph {
            tape,
            leaves,
            x,
            obs,
            qmu,
            qsqrt,
            jitter,
            elbo,
        });
        Ok(())
    }

    pub fn elbo(&mut self) -> Result<f64> {
        self.ensure_graph()?;
        let Self {
            store,
            likelihood,
            data,
            q_mu,
            q_sqrt,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let b = vgp_bindings(g, store, likelihood, data, q_mu, q_sqrt)?;
        let out = eval_with_jitter(&mut g.tape, &[g.elbo], &b, Some(g.jitter))?;
        Ok(out[0].as_scalar())
    }

    pub fn elbo_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        self.ensure_graph()?;
        let Self {
            store,
            likelihood,
            data,
            q_mu,
            q_sqrt,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let b = vgp_bindings(g, store, likelihood, data, q_mu, q_sqrt)?;
        let out = eval_with_jitter(&mut g.tape, &[g.elbo], &b, Some(g.jitter))?;
        let value = out[0].as_scalar();
        let entries = g.leaves.entries();
        let mut wrt: Vec<NodeId> = entries.iter().map(|(_, n)| *n).collect();
        wrt.push(g.qmu);
        wrt.extend(&g.qsqrt);
        let grads = g.tape.grad(g.elbo, &wrt)?;
        let nparams = entries.len();
        let mut packed = super::pack_param_grads(store, &entries, &grads[..nparams]);
        packed.extend_from_slice(grads[nparams].data());
        q_sqrt.pack_grad(&grads[nparams + 1..], &mut packed);
        Ok((value, packed))
    }

    /// Latent predictive moments at new inputs via the conditional
    /// against the training inputs.
    pub fn predict(&mut self, xnew: &Value, full_cov: bool) -> Result<(Value, Vec<Value>)> {
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
        let t = xnew.rows();
        let l = self.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let xq = tape.leaf(t, d);
        let qmu = tape.leaf(n, l);
        let qsqrt: Vec<NodeId> = (0..l).map(|_| tape.leaf(n, n)).collect();
        let jitter = tape.leaf(1, 1);
        let cond = conditional_graph(
            &mut tape,
            &leaves,
            &self.kernel,
            xq,
            x,
            qmu,
            Some(&qsqrt),
            true,
            full_cov,
            jitter,
        )?;
        let mut b = leaves.bindings(&self.store);
        b.push((x, self.data.x.clone()));
        b.push((xq, xnew.clone()));
        b.push((qmu, self.q_mu.clone()));
        for (leaf, f) in qsqrt.iter().zip(&self.q_sqrt.factors) {
            b.push((*leaf, f.clone()));
        }
        let mut roots = vec![cond.mean, cond.var];
        if let Some(covs) = &cond.full_cov {
            roots.extend(covs.iter().copied());
        }
        let out = eval_with_jitter(&mut tape, &roots, &b, Some(jitter))?;
        let mean = out[0].clone();
        if full_cov {
            Ok((mean, out[2..].to_vec()))
        } else {
            Ok((mean, vec![out[1].clone()]))
        }
    }

    pub fn predict_y(&mut self, xnew: &Value) -> Result<(Value, Value)> {
        let (mean, var) = self.predict(xnew, false)?;
        self.likelihood
            .predict_mean_var(&self.store, &mean, &var[0])
    }
}

fn vgp_bindings(
    g: &VgpGraph,
    store: &ParamStore,
    likelihood: &LikelihoodSpec,
    data: &Dataset,
    q_mu: &Value,
    q_sqrt: &TriFactors,
) -> Result<Vec<(NodeId, Value)>> {
    let mut b = g.leaves.bindings(store);
    b.push((g.x, data.x.clone()));
    for (leaf, v) in g.obs.iter().zip(likelihood.encode_observations(&data.y)?) {
        b.push((*leaf, v));
    }
    b.push((g.qmu, q_mu.clone()));
    for (leaf, f) in g.qsqrt.iter().zip(&q_sqrt.factors) {
        b.push((*leaf, f.clone()));
    }
    Ok(b)
}

impl Objective for VgpModel {
    fn state(&self) -> Vec<f64> {
        let mut s = self.store.free_state();
        s.extend_from_slice(self.q_mu.data());
        self.q_sqrt.pack(&mut s);
        s
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        let np = self.store.free_dim();
        let nq = self.q_mu.len();
        let nt = self.q_sqrt.free_dim();
        if state.len() != np + nq + nt {
            return Err(Error::FreeStateLength {
                expected: np + nq + nt,
                got: state.len(),
            });
        }
        self.store.set_free_state(&state[..np])?;
        self.q_mu = Value::new(
            self.q_mu.rows(),
            self.q_mu.cols(),
            state[np..np + nq].to_vec(),
        )?;
        self.q_sqrt.unpack(&state[np + nq..])
    }

    fn data_len(&self) -> usize {
        self.data.len()
    }

    fn value_and_grad(&mut self, _batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.elbo_and_grad()?;
        Ok((-v, g.iter().map(|x| -x).collect()))
    }
}
