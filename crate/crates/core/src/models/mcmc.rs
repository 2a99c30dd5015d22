//! Whitened MCMC models: the latent function enters as f = L v with
//! v ~ N(0, I), and hyperparameters ride along in unconstrained space
//! with their priors and transform Jacobians added to the target.

use super::{eval_with_jitter, jittered_gram, conditional_graph, Dataset};
use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{
    hermite_rule, ParamId, ParamLeaves, ParamStore, QuadratureRule, Transform,
    DEFAULT_QUADRATURE_POINTS,
};
use crate::inference::LogTarget;
use crate::kernels::{kmatrix_graph, KernelExpr, KernelSpec};
use crate::likelihoods::LikelihoodSpec;

/// Full-covariance MCMC model. Position layout: [free params | vec(v)].
pub struct GpmcModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    pub v: Value,
    graph: Option<GpmcGraph>,
}

struct GpmcGraph {
    tape: Tape,
    leaves: ParamLeaves,
    x: NodeId,
    obs: Vec<NodeId>,
    vleaf: NodeId,
    jitter: NodeId,
    /// Tape part of the target (likelihood term included unless the
    /// likelihood is piecewise constant in f).
    root: NodeId,
    /// Latent function node, needed when the likelihood value is added
    /// off-tape.
    f: NodeId,
    offtape_likelihood: bool,
}

impl GpmcModel {
    pub fn new(data: Dataset, kernel_expr: &KernelExpr, likelihood_text: &str) -> Result<Self> {
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::parse(likelihood_text, &mut store)?;
        likelihood.validate_targets(&data.y)?;
        let n = data.len();
        let l = likelihood.latent_dim();
        Ok(GpmcModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            v: Value::zeros(n, l),
            graph: None,
        })
    }

    /// Sampled (non-fixed) hyperparameters must carry priors.
    pub fn validate_priors(&self) -> Result<()> {
        validate_priors(&self.store)
    }

    fn ensure_graph(&mut self) -> Result<()> {
        if self.graph.is_some() {
            return Ok(());
        }
        let (n, d) = self.data.x.shape();
        let l = self.likelihood.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let obs = self.likelihood.declare_observations(&mut tape, n);
        let vleaf = tape.leaf(n, l);
        let jitter = tape.leaf(1, 1);

        let k = kmatrix_graph(&mut tape, &leaves, &self.kernel, x, None)?;
        let kj = jittered_gram(&mut tape, k, jitter)?;
        let lchol = tape.cholesky(kj)?;
        let f = tape.matmul(lchol, vleaf)?;

        let vprior = whitened_prior(&mut tape, vleaf)?;
        let offtape = matches!(self.likelihood, LikelihoodSpec::Multiclass { .. });
        let root = if offtape {
            vprior
        } else {
            let lp = self.likelihood.log_prob_graph(&mut tape, &leaves, f, &obs)?;
            let slp = tape.reduce_sum(lp)?;
            tape.add(slp, vprior)?
        };

        self.graph = Some(GpmcGraph {
            tape,
            leaves,
            x,
            obs,
            vleaf,
            jitter,
            root,
            f,
            offtape_likelihood: offtape,
        });
        Ok(())
    }

    /// Initial sampler position: current free state followed by vec(v).
    pub fn position(&self) -> Vec<f64> {
        let mut p = self.store.free_state();
        p.extend_from_slice(self.v.data());
        p
    }

    pub fn set_position(&mut self, position: &[f64]) -> Result<()> {
        let np = self.store.free_dim();
        if position.len() != np + self.v.len() {
            return Err(Error::FreeStateLength {
                expected: np + self.v.len(),
                got: position.len(),
            });
        }
        self.store.set_free_state(&position[..np])?;
        self.v = Value::new(self.v.rows(), self.v.cols(), position[np..].to_vec())?;
        Ok(())
    }

    /// Constrained values of the sampled hyperparameters, for reporting.
    pub fn constrained_params(&self) -> Vec<(String, Vec<f64>)> {
        constrained_params(&self.store)
    }

    pub fn log_target(&mut self, position: &[f64]) -> Result<f64> {
        Ok(self.log_target_and_grad(position)?.0)
    }
}

impl LogTarget for GpmcModel {
    fn dim(&self) -> usize {
        self.store.free_dim() + self.v.len()
    }

    fn log_target_and_grad(&mut self, position: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.set_position(position)?;
        self.ensure_graph()?;
        let Self {
            store,
            likelihood,
            data,
            v,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        for (leaf, val) in g.obs.iter().zip(likelihood.encode_observations(&data.y)?) {
            b.push((*leaf, val));
        }
        b.push((g.vleaf, v.clone()));
        let out = eval_with_jitter(&mut g.tape, &[g.root, g.f], &b, Some(g.jitter))?;
        let mut value = out[0].as_scalar();
        if g.offtape_likelihood {
            let f = &out[1];
            for i in 0..data.len() {
                let fi: Vec<f64> = (0..f.cols()).map(|j| f[(i, j)]).collect();
                value += likelihood.log_prob(store, &fi, data.y[(i, 0)]);
            }
        }
        value += store.log_prior_with_jacobian();

        let entries = g.leaves.entries();
        let mut wrt: Vec<NodeId> = entries.iter().map(|(_, n)| *n).collect();
        wrt.push(g.vleaf);
        let grads = g.tape.grad(g.root, &wrt)?;
        let nparams = entries.len();
        let mut packed = super::pack_param_grads(store, &entries, &grads[..nparams]);
        for (pg, prior_g) in packed.iter_mut().zip(store.log_prior_grad()) {
            *pg += prior_g;
        }
        packed.extend_from_slice(grads[nparams].data());
        Ok((value, packed))
    }
}

/// Sparse MCMC model: u = L_uu v at the inducing inputs, data coupled
/// through the deterministic-u conditional expectations.
pub struct SgpmcModel {
    pub store: ParamStore,
    pub kernel: KernelSpec,
    pub kernel_expr: KernelExpr,
    pub likelihood: LikelihoodSpec,
    pub data: Dataset,
    pub z: ParamId,
    pub v: Value,
    rule: QuadratureRule,
    graph: Option<SgpmcGraph>,
}

struct SgpmcGraph {
    tape: Tape,
    leaves: ParamLeaves,
    x: NodeId,
    obs: Vec<NodeId>,
    vleaf: NodeId,
    jitter: NodeId,
    root: NodeId,
}

impl SgpmcModel {
    pub fn new(
        data: Dataset,
        kernel_expr: &KernelExpr,
        likelihood_text: &str,
        z_init: Value,
    ) -> Result<Self> {
        let m = z_init.rows();
        if m == 0 || m > data.len() {
            return Err(Error::ModelConfig(format!(
                "inducing count {m} must be in 1..={}",
                data.len()
            )));
        }
        let mut store = ParamStore::new();
        let kernel = KernelSpec::instantiate(kernel_expr, &mut store, data.input_dim())?;
        let likelihood = LikelihoodSpec::parse(likelihood_text, &mut store)?;
        likelihood.validate_targets(&data.y)?;
        let z = store.add("inducing.z", z_init, Transform::Identity);
        // inducing inputs are not sampled
        store.param_mut(z).fixed = true;
        let l = likelihood.latent_dim();
        Ok(SgpmcModel {
            store,
            kernel,
            kernel_expr: kernel_expr.clone(),
            likelihood,
            data,
            z,
            v: Value::zeros(m, l),
            rule: hermite_rule(DEFAULT_QUADRATURE_POINTS)?,
            graph: None,
        })
    }

    pub fn validate_priors(&self) -> Result<()> {
        validate_priors(&self.store)
    }

    pub fn inducing_count(&self) -> usize {
        self.store.param(self.z).unconstrained.rows()
    }

    fn ensure_graph(&mut self) -> Result<()> {
        if self.graph.is_some() {
            return Ok(());
        }
        let (n, d) = self.data.x.shape();
        let m = self.inducing_count();
        let l = self.likelihood.latent_dim();
        let mut tape = Tape::new();
        let leaves = ParamLeaves::declare_all(&mut tape, &self.store);
        let x = tape.leaf(n, d);
        let obs = self.likelihood.declare_observations(&mut tape, n);
        let vleaf = tape.leaf(m, l);
        let jitter = tape.leaf(1, 1);
        let z = leaves.leaf(self.z);

        // deterministic-u conditional: q_sqrt = 0, whitened q_mu = v
        let cond = conditional_graph(
            &mut tape,
            &leaves,
            &self.kernel,
            x,
            z,
            vleaf,
            None,
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
        let vprior = whitened_prior(&mut tape, vleaf)?;
        let root = tape.add(sve, vprior)?;

        self.graph = Some(SgpmcGraph {
            tape,
            leaves,
            x,
            obs,
            vleaf,
            jitter,
            root,
        });
        Ok(())
    }

    pub fn position(&self) -> Vec<f64> {
        let mut p = self.store.free_state();
        p.extend_from_slice(self.v.data());
        p
    }

    pub fn set_position(&mut self, position: &[f64]) -> Result<()> {
        let np = self.store.free_dim();
        if position.len() != np + self.v.len() {
            return Err(Error::FreeStateLength {
                expected: np + self.v.len(),
                got: position.len(),
            });
        }
        self.store.set_free_state(&position[..np])?;
        self.v = Value::new(self.v.rows(), self.v.cols(), position[np..].to_vec())?;
        Ok(())
    }

    pub fn constrained_params(&self) -> Vec<(String, Vec<f64>)> {
        constrained_params(&self.store)
    }

    pub fn log_target(&mut self, position: &[f64]) -> Result<f64> {
        Ok(self.log_target_and_grad(position)?.0)
    }
}

impl LogTarget for SgpmcModel {
    fn dim(&self) -> usize {
        self.store.free_dim() + self.v.len()
    }

    fn log_target_and_grad(&mut self, position: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.set_position(position)?;
        self.ensure_graph()?;
        let Self {
            store,
            likelihood,
            data,
            v,
            graph,
            ..
        } = self;
        let g = graph.as_mut().unwrap();
        let mut b = g.leaves.bindings(store);
        b.push((g.x, data.x.clone()));
        for (leaf, val) in g.obs.iter().zip(likelihood.encode_observations(&data.y)?) {
            b.push((*leaf, val));
        }
        b.push((g.vleaf, v.clone()));
        let out = eval_with_jitter(&mut g.tape, &[g.root], &b, Some(g.jitter))?;
        let value = out[0].as_scalar() + store.log_prior_with_jacobian();

        let entries = g.leaves.entries();
        let mut wrt: Vec<NodeId> = entries.iter().map(|(_, n)| *n).collect();
        wrt.push(g.vleaf);
        let grads = g.tape.grad(g.root, &wrt)?;
        let nparams = entries.len();
        let mut packed = super::pack_param_grads(store, &entries, &grads[..nparams]);
        for (pg, prior_g) in packed.iter_mut().zip(store.log_prior_grad()) {
            *pg += prior_g;
        }
        packed.extend_from_slice(grads[nparams].data());
        Ok((value, packed))
    }
}

/// log N(vec(v) | 0, I).
fn whitened_prior(tape: &mut Tape, v: NodeId) -> Result<NodeId> {
    let (rows, cols) = tape.shape(v);
    let sq = tape.square(v)?;
    let s = tape.reduce_sum(sq)?;
    let mh = tape.scalar(-0.5);
    let t = tape.scalar_mul(mh, s)?;
    let c = tape.scalar(-0.5 * (rows * cols) as f64 * (2.0 * std::f64::consts::PI).ln());
    tape.add(t, c)
}

fn validate_priors(store: &ParamStore) -> Result<()> {
    let missing: Vec<String> = store
        .ids()
        .filter_map(|id| {
            let p = store.param(id);
            (!p.fixed && p.prior.is_none()).then(|| p.name.clone())
        })
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::ModelConfig(format!(
            "sampled hyperparameters need priors (or fix them): {}",
            missing.join(", ")
        )))
    }
}

fn constrained_params(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    store
        .ids()
        .filter_map(|id| {
            let p = store.param(id);
            if p.fixed {
                None
            } else {
                Some((p.name.clone(), p.constrained().data().to_vec()))
            }
        })
        .collect()
}
