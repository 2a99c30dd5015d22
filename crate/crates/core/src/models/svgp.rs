//! Sparse variational GP with an explicit whitened q(u): minibatch-able
//! ELBO for any likelihood, the workhorse of the stochastic training path.

use super::{
    conditional_graph, eval_with_jitter, gauss_kl_graph, Dataset, TriFactors,
};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{
    hermite_rule, ParamId, ParamLeaves, ParamStore, QuadratureRule, Transform,
    DEFAULT_QUADRATURE_POINTS,
};
use crate::inference::Objective;
use crate::kernels::{KernelExpr, KernelSpec};
use crate::likelihoods::LikelihoodSpec;

pub struct SvgpModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    pub z: ParamId,
    pub q_mu: Value,
    pub q_sqrt: TriFactors,
    pub whiten: bool,
    rule: QuadratureRule,
    graph: Option<SvgpGraph>,
}

struct SvgpGraph {
    batch: usize,
    tape: Tape,
    leaves: ParamLeaves,
    xb: NodeId,
    obs: Vec<NodeId>,
    qmu: NodeId,
    qsqrt: Vec<NodeId>,
    jitter: NodeId,
    elbo: NodeId,
}

impl SvgpModel {
    pub fn new(
        data: Dataset,
        kernel_expr: &KernelExpr,
        likelihood_text: &str,
        z_init: Value,
        whiten: bool,
    ) -> Result<Self> {
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
        if !whiten {
            return Err(Error::ModelConfig(
                "the SVGP objective uses the whitened representation; non-whitened \
                 conditionals exist only for the reparameterization check"
                    .into(),
            ));
        }
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::parse(likelihood_text, &mut store)?;
        likelihood.validate_targets(&data.y)?;
        let z = store.add("inducing.z", z_init, Transform::Identity);
        let l = likelihood.latent_dim();
        Ok(SvgpModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            z,
            q_mu: Value::zeros(m, l),
            q_sqrt: TriFactors::identity(m, l),
            whiten,
            rule: hermite_rule(DEFAULT_QUADRATURE_POINTS)?,
            graph: None,
        })
    }

    pub fn inducing_count(&self) -> usize {
        self.store.param(self.z).unconstrained.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.likelihood.latent_dim()
    }

    fn ensure_graph(&mut self, batch: usize) -> Result<()> {
        if self.graph.as_ref().is_some_and(|g| g.batch == batch) {
            return Ok(());
        }
        let n = self.data.len();
        let d = self.data.input_dim();
        let m = self.inducing_count();
        let l = self.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let xb = tape.leaf(batch, d);
        let obs = self.likelihood.declare_observations(&mut tape, batch);
        let qmu = tape.leaf(m, l);
        let qsqrt: Vec<NodeId> = (0..l).map(|_| tape.leaf(m, m)).collect();
        let jitter = tape.leaf(1, 1);
        let z = leaves.leaf(self.z);

        let cond = conditional_graph(
            &mut tape,
            &leaves,
            &self.kernel,
            xb,
            z,
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
        let scale = tape.scalar(n as f64 / batch as f64);
        let data_term = tape.scalar_mul(scale, sve)?;
        let kl = gauss_kl_graph(&mut tape, qmu, &qsqrt)?;
        let elbo = tape.sub(data_term, kl)?;

        self.graph = Some(SvgpGraph {
            batch,
            tape,
            leaves,
            xb,
            obs,
            qmu,
            qsqrt,
            jitter,
            elbo,
        });
        Ok(())
    }

    fn batch_data(&self, batch: Option<&[usize]>) -> (Value, Value) {
        match batch {
            Some(idx) => self.data.gather(idx),
            None => (self.data.x.clone(), self.data.y.clone()),
        }
    }

    /// Stochastic evidence lower bound over a batch (full data when None).
    pub fn elbo(&mut self, batch: Option<&[usize]>) -> Result<f64> {
        let (xb, yb) = self.batch_data(batch);
        self.ensure_graph(xb.rows())?;
        let Self {
            store,
            likelihood,
            q_mu,
            q_sqrt,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let b = svgp_bindings(g, store, likelihood, q_mu, q_sqrt, &xb, &yb)?;
        let out = eval_with_jitter(&mut g.tape, &[g.elbo], &b, Some(g.jitter))?;
        Ok(out[0].as_scalar())
    }

    /// ELBO and gradient over [params | q_mu | packed q_sqrt].
    pub fn elbo_and_grad(&mut self, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (xb, yb) = self.batch_data(batch);
        self.ensure_graph(xb.rows())?;
        let Self {
            store,
            likelihood,
            q_mu,
            q_sqrt,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let b = svgp_bindings(g, store, likelihood, q_mu, q_sqrt, &xb, &yb)?;
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

    /// Latent predictive moments at new inputs; with `full_cov` the second
    /// return is the stacked per-latent t x t covariances (L blocks).
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
        let t = xnew.rows();
        let d = self.data.input_dim();
        let m = self.inducing_count();
        let l = self.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let xq = tape.leaf(t, d);
        let qmu = tape.leaf(m, l);
        let qsqrt: Vec<NodeId> = (0..l).map(|_| tape.leaf(m, m)).collect();
        let jitter = tape.leaf(1, 1);
        let z = leaves.leaf(self.z);
        let cond = conditional_graph(
            &mut tape,
            &leaves,
            &self.kernel,
            xq,
            z,
            qmu,
            Some(&qsqrt),
            self.whiten,
            full_cov,
            jitter,
        )?;
        let mut b = leaves.bindings(&self.store);
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

    /// Observation-space prediction (per-class probabilities for
    /// multiclass).
    pub fn predict_y(&mut self, xnew: &Value) -> Result<(Value, Value)> {
        let (mean, var) = self.predict(xnew, false)?;
        self.likelihood
            .predict_mean_var(&self.store, &mean, &var[0])
    }
}

fn svgp_bindings(
    g: &SvgpGraph,
    store: &ParamStore,
    likelihood: &LikelihoodSpec,
    q_mu: &Value,
    q_sqrt: &TriFactors,
    xb: &Value,
    yb: &Value,
) -> Result<Vec<(NodeId, Value)>> {
    let mut b = g.leaves.bindings(store);
    b.push((g.xb, xb.clone()));
    for (leaf, v) in g.obs.iter().zip(likelihood.encode_observations(yb)?) {
        b.push((*leaf, v));
    }
    b.push((g.qmu, q_mu.clone()));
    for (leaf, f) in g.qsqrt.iter().zip(&q_sqrt.factors) {
        b.push((*leaf, f.clone()));
    }
    Ok(b)
}

impl Objective for SvgpModel {
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

    fn value_and_grad(&mut self, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.elbo_and_grad(batch)?;
        Ok((-v, g.iter().map(|x| -x).collect()))
    }
}
