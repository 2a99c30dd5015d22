//! Observation models and the three quantities inference needs from them:
//! per-datum log density, the variational expectation of the log density
//! under a Gaussian, and predictive moments of the observation.
//!
//! Variational expectations are recorded as tape subgraphs so their
//! gradients with respect to (mu, v) and any likelihood parameters are
//! exact reverse-mode derivatives; non-Gaussian kinds integrate with the
//! shared Gauss-Hermite rule.

use crate::adgraph::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::foundation::{ParamId, ParamLeaves, ParamStore, QuadratureRule};
use crate::special;

pub const DEFAULT_ROBUST_MAX_EPSILON: f64 = 1e-3;
pub const DEFAULT_NOISE_VARIANCE: f64 = 1.0;
/// Floor keeping logs of variances and CDF products finite on the tape.
const TINY: f64 = 1e-300;

#[derive(Debug, Clone)]
pub enum LikelihoodSpec {
    Gaussian { noise: ParamId },
    Bernoulli,
    Poisson,
    Multiclass { classes: usize, epsilon: ParamId },
}

impl LikelihoodSpec {
    pub fn gaussian(store: &mut ParamStore) -> Self {
        let noise = store
            .add_positive_scalar("likelihood.gaussian.noise_variance", DEFAULT_NOISE_VARIANCE);
        LikelihoodSpec::Gaussian { noise }
    }

    pub fn multiclass(store: &mut ParamStore, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::ModelConfig("multiclass needs at least 2 classes".into()));
        }
        let epsilon =
            store.add_positive_scalar("likelihood.multiclass.epsilon", DEFAULT_ROBUST_MAX_EPSILON);
        store.param_mut(epsilon).fixed = true;
        Ok(LikelihoodSpec::Multiclass { classes, epsilon })
    }

    /// Parses `gaussian | bernoulli | poisson | multiclass:<C>`, allocating
    /// any parameters the kind owns.
    pub fn parse(text: &str, store: &mut ParamStore) -> Result<Self> {
        match text.trim() {
            "gaussian" => Ok(Self::gaussian(store)),
            "bernoulli" => Ok(LikelihoodSpec::Bernoulli),
            "poisson" => Ok(LikelihoodSpec::Poisson),
            other => {
                if let Some(c) = other.strip_prefix("multiclass:") {
                    let classes: usize = c
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad class count {c:?}")))?;
                    Self::multiclass(store, classes)
                } else {
                    Err(Error::Parse(format!("unknown likelihood {other:?}")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            LikelihoodSpec::Gaussian { .. } => "gaussian".into(),
            LikelihoodSpec::Bernoulli => "bernoulli".into(),
            LikelihoodSpec::Poisson => "poisson".into(),
            LikelihoodSpec::Multiclass { classes, .. } => format!("multiclass:{classes}"),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, LikelihoodSpec::Gaussian { .. })
    }

    /// Number of latent functions per datum.
    pub fn latent_dim(&self) -> usize {
        match self {
            LikelihoodSpec::Multiclass { classes, .. } => *classes,
            _ => 1,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            LikelihoodSpec::Gaussian { noise } => vec![*noise],
            LikelihoodSpec::Multiclass { epsilon, .. } => vec![*epsilon],
            _ => vec![],
        }
    }

    /// Checks an n x 1 target column against the observation domain.
    pub fn validate_targets(&self, y: &Value) -> Result<()> {
        if y.cols() != 1 {
            return Err(Error::Data(format!(
                "targets must be a single column, got {} columns",
                y.cols()
            )));
        }
        match self {
            LikelihoodSpec::Gaussian { .. } => Ok(()),
            LikelihoodSpec::Bernoulli => {
                for (i, &v) in y.data().iter().enumerate() {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Data(format!(
                            "bernoulli target at row {i} is {v}, expected 0 or 1"
                        )));
                    }
                }
                Ok(())
            }
            LikelihoodSpec::Poisson => {
                for (i, &v) in y.data().iter().enumerate() {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Data(format!(
                            "poisson target at row {i} is {v}, expected a count"
                        )));
                    }
                }
                Ok(())
            }
            LikelihoodSpec::Multiclass { classes, .. } => {
                for (i, &v) in y.data().iter().enumerate() {
                    if v.fract() != 0.0 || v < 0.0 || v >= *classes as f64 {
                        return Err(Error::Data(format!(
                            "class label at row {i} is {v}, expected an integer in [0, {classes})"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Per-datum log p(y | f). `f` holds the latent value(s) for one datum
    /// (length C for multiclass).
    pub fn log_prob(&self, store: &ParamStore, f: &[f64], y: f64) -> f64 {
        match self {
            LikelihoodSpec::Gaussian { noise } => {
                let s2 = store.constrained(*noise).as_scalar();
                -0.5 * (2.0 * std::f64::consts::PI * s2).ln()
                    - (y - f[0]) * (y - f[0]) / (2.0 * s2)
            }
            LikelihoodSpec::Bernoulli => {
                let sign = if y > 0.5 { 1.0 } else { -1.0 };
                special::log_normcdf(sign * f[0])
            }
            LikelihoodSpec::Poisson => y * f[0] - f[0].exp() - special::ln_gamma(y + 1.0),
            LikelihoodSpec::Multiclass { classes, epsilon } => {
                let eps = store.constrained(*epsilon).as_scalar();
                let argmax = f
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                if argmax == y as usize {
                    (1.0 - eps).ln()
                } else {
                    (eps / (*classes as f64 - 1.0)).ln()
                }
            }
        }
    }

    /// Leaves for the observation encoding used by the graph builders;
    /// bind them with [`Self::encode_observations`].
    pub fn declare_observations(&self, tape: &mut Tape, n: usize) -> Vec<NodeId> {
        match self {
            LikelihoodSpec::Gaussian { .. } => vec![tape.leaf(n, 1)],
            LikelihoodSpec::Bernoulli => vec![tape.leaf(n, 1)],
            LikelihoodSpec::Poisson => vec![tape.leaf(n, 1), tape.leaf(n, 1)],
            LikelihoodSpec::Multiclass { classes, .. } => vec![tape.leaf(n, *classes)],
        }
    }

    /// Encodes raw targets into the values bound to
    /// [`Self::declare_observations`] leaves: the targets themselves
    /// (gaussian), their sign (bernoulli), targets plus log y! (poisson),
    /// or a one-hot matrix (multiclass).
    pub fn encode_observations(&self, y: &Value) -> Result<Vec<Value>> {
        self.validate_targets(y)?;
        Ok(match self {
            LikelihoodSpec::Gaussian { .. } => vec![y.clone()],
            LikelihoodSpec::Bernoulli => {
                vec![y.map(|v| if v > 0.5 { 1.0 } else { -1.0 })]
            }
            LikelihoodSpec::Poisson => vec![
                y.clone(),
                y.map(|v| special::ln_gamma(v + 1.0)),
            ],
            LikelihoodSpec::Multiclass { classes, .. } => {
                let mut onehot = Value::zeros(y.rows(), *classes);
                for i in 0..y.rows() {
                    onehot[(i, y[(i, 0)] as usize)] = 1.0;
                }
                vec![onehot]
            }
        })
    }

    /// Per-datum log p(y | f) as a tape expression over the latent node
    /// (n x 1). Multiclass is piecewise constant in f and has no graph
    /// form; callers add its value off-tape (its gradient is zero a.e.).
    pub fn log_prob_graph(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        f: NodeId,
        obs: &[NodeId],
    ) -> Result<NodeId> {
        let (n, _) = tape.shape(f);
        match self {
            LikelihoodSpec::Gaussian { noise } => {
                let y = obs[0];
                let s2 = leaves.leaf(*noise);
                let diff = tape.sub(y, f)?;
                let sq = tape.square(diff)?;
                // 1/(2 sigma^2) = exp(-(log sigma^2 + log 2))
                let ls = tape.log(s2)?;
                let nls = tape.neg(ls)?;
                let ln2 = tape.scalar(-(2.0f64.ln()));
                let shifted = tape.add(nls, ln2)?;
                let recip = tape.exp(shifted)?;
                let quad = tape.scalar_mul(recip, sq)?;
                // -(1/2) log(2 pi sigma^2) broadcast per datum
                let half = tape.scalar(-0.5);
                let log2pi = tape.scalar((2.0 * std::f64::consts::PI).ln());
                let lognorm = tape.add(ls, log2pi)?;
                let c = tape.scalar_mul(half, lognorm)?;
                let ones = tape.constant(Value::ones(n, 1));
                let cvec = tape.scalar_mul(c, ones)?;
                tape.sub(cvec, quad)
            }
            LikelihoodSpec::Bernoulli => {
                let sign = obs[0];
                let sf = tape.mul(sign, f)?;
                tape.log_normcdf(sf)
            }
            LikelihoodSpec::Poisson => {
                let y = obs[0];
                let lgamma = obs[1];
                let yf = tape.mul(y, f)?;
                let ef = tape.exp(f)?;
                let a = tape.sub(yf, ef)?;
                tape.sub(a, lgamma)
            }
            LikelihoodSpec::Multiclass { .. } => Err(Error::ModelConfig(
                "multiclass log-density is piecewise constant; no tape form".into(),
            )),
        }
    }

    /// E_{N(f | mu, v)}[log p(y | f)] per datum as a tape expression.
    /// `mu` and `var` are n x L nodes (L = latent_dim); returns n x 1.
    pub fn variational_expectations_graph(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        rule: &QuadratureRule,
        mu: NodeId,
        var: NodeId,
        obs: &[NodeId],
    ) -> Result<NodeId> {
        let (n, l) = tape.shape(mu);
        if tape.shape(var) != (n, l) {
            return Err(Error::ShapeMismatch {
                op: "variational-expectations".into(),
                detail: format!("mu {:?} vs var {:?}", tape.shape(mu), tape.shape(var)),
            });
        }
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        match self {
            LikelihoodSpec::Gaussian { noise } => {
                // closed form: -0.5 log(2 pi s2) - ((y - mu)^2 + v) / (2 s2)
                let y = obs[0];
                let s2 = leaves.leaf(*noise);
                let diff = tape.sub(y, mu)?;
                let sq = tape.square(diff)?;
                let num = tape.add(sq, var)?;
                let ls = tape.log(s2)?;
                let nls = tape.neg(ls)?;
                let ln2 = tape.scalar(-(2.0f64.ln()));
                let shifted = tape.add(nls, ln2)?;
                let recip = tape.exp(shifted)?;
                let quad = tape.scalar_mul(recip, num)?;
                let half = tape.scalar(-0.5);
                let log2pi = tape.scalar((2.0 * std::f64::consts::PI).ln());
                let lognorm = tape.add(ls, log2pi)?;
                let c = tape.scalar_mul(half, lognorm)?;
                let ones = tape.constant(Value::ones(n, 1));
                let cvec = tape.scalar_mul(c, ones)?;
                tape.sub(cvec, quad)
            }
            LikelihoodSpec::Bernoulli | LikelihoodSpec::Poisson => {
                let scale = self.quad_scale(tape, var)?;
                let mut acc: Option<NodeId> = None;
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let xnode = tape.scalar(x);
                    let offset = tape.scalar_mul(xnode, scale)?;
                    let f = tape.add(mu, offset)?;
                    let term = match self {
                        LikelihoodSpec::Bernoulli => {
                            let sf = tape.mul(obs[0], f)?;
                            tape.log_normcdf(sf)?
                        }
                        _ => {
                            // poisson: y f - e^f (the log y! constant joins below)
                            let yf = tape.mul(obs[0], f)?;
                            let ef = tape.exp(f)?;
                            tape.sub(yf, ef)?
                        }
                    };
                    let wnode = tape.scalar(w * inv_sqrt_pi);
                    let scaled = tape.scalar_mul(wnode, term)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, scaled)?,
                        None => scaled,
                    });
                }
                let mut out = acc.expect("rule has at least one node");
                if matches!(self, LikelihoodSpec::Poisson) {
                    out = tape.sub(out, obs[1])?;
                }
                Ok(out)
            }
            LikelihoodSpec::Multiclass { classes, epsilon } => {
                let c = *classes;
                let onehot = obs[0];
                let ones_nc = tape.constant(Value::ones(n, c));
                let mask = tape.sub(ones_nc, onehot)?; // 1 off the label column
                let ones_c = tape.constant(Value::ones(c, 1));
                // per-datum mean/variance at the labelled latent
                let mu_sel = tape.mul(mu, onehot)?;
                let mu_y = tape.matmul(mu_sel, ones_c)?;
                let var_sel = tape.mul(var, onehot)?;
                let var_y = tape.matmul(var_sel, ones_c)?;
                let scale_y = {
                    let clamped = tape.clamp_min(var_y, TINY)?;
                    let two = tape.scalar(2.0);
                    let doubled = tape.scalar_mul(two, clamped)?;
                    tape.sqrt(doubled)?
                };
                // 1/sqrt(v_j) elementwise over all latents
                let var_clamped = tape.clamp_min(var, TINY)?;
                let lv = tape.log(var_clamped)?;
                let mh = tape.scalar(-0.5);
                let e = tape.scalar_mul(mh, lv)?;
                let inv_sd = tape.exp(e)?;
                let ones_row = tape.constant(Value::ones(1, c));
                // quadrature over the labelled latent of the product of CDFs
                let mut acc: Option<NodeId> = None;
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let xnode = tape.scalar(x);
                    let offset = tape.scalar_mul(xnode, scale_y)?;
                    let f_y = tape.add(mu_y, offset)?; // n x 1
                    let f_bc = tape.matmul(f_y, ones_row)?; // n x C
                    let diff = tape.sub(f_bc, mu)?;
                    let z = tape.mul(diff, inv_sd)?;
                    let cdf = tape.normcdf(z)?;
                    let safe = tape.clamp_min(cdf, TINY)?;
                    let logs = tape.log(safe)?;
                    let masked = tape.mul(logs, mask)?;
                    let sums = tape.matmul(masked, ones_c)?; // n x 1
                    let prod = tape.exp(sums)?;
                    let wnode = tape.scalar(w * inv_sqrt_pi);
                    let scaled = tape.scalar_mul(wnode, prod)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, scaled)?,
                        None => scaled,
                    });
                }
                let p = acc.expect("rule has at least one node");
                // log[(1 - eps) p + eps/(C-1) (1 - p)]
                let eps = leaves.leaf(*epsilon);
                let one = tape.scalar(1.0);
                let neg_eps = tape.neg(eps)?;
                let one_minus_eps = tape.add(one, neg_eps)?;
                let hit = tape.scalar_mul(one_minus_eps, p)?;
                let ones_n = tape.constant(Value::ones(n, 1));
                let miss_p = tape.sub(ones_n, p)?;
                let frac = tape.scalar(1.0 / (c as f64 - 1.0));
                let eps_frac = tape.scalar_mul(frac, eps)?;
                let miss = tape.scalar_mul(eps_frac, miss_p)?;
                let total = tape.add(hit, miss)?;
                tape.log(total)
            }
        }
    }

    /// sqrt(2 v) with the variance clamped away from zero.
    fn quad_scale(&self, tape: &mut Tape, var: NodeId) -> Result<NodeId> {
        let clamped = tape.clamp_min(var, TINY)?;
        let two = tape.scalar(2.0);
        let doubled = tape.scalar_mul(two, clamped)?;
        tape.sqrt(doubled)
    }

    /// Predictive mean and variance of the observation given latent
    /// moments. For multiclass both outputs are t x C: per-class
    /// probabilities and p(1-p). The robust-max class probabilities use a
    /// fine 100-point rule so they normalize to 1e-8; the other kinds are
    /// closed form.
    pub fn predict_mean_var(
        &self,
        store: &ParamStore,
        mu: &Value,
        var: &Value,
    ) -> Result<(Value, Value)> {
        if var.data().iter().any(|&v| v < -1e-8) {
            return Err(Error::InvalidValue("negative predictive variance".into()));
        }
        match self {
            LikelihoodSpec::Gaussian { noise } => {
                let s2 = store.constrained(*noise).as_scalar();
                Ok((mu.clone(), var.map(|v| v.max(0.0) + s2)))
            }
            LikelihoodSpec::Bernoulli => {
                let mean = Value::from_raw_zip(mu, var, |m, v| {
                    special::normcdf(m / (1.0 + v.max(0.0)).sqrt())
                });
                let variance = mean.map(|p| p * (1.0 - p));
                Ok((mean, variance))
            }
            LikelihoodSpec::Poisson => {
                let mean = Value::from_raw_zip(mu, var, |m, v| (m + v.max(0.0) / 2.0).exp());
                let variance = Value::from_raw_zip(mu, var, |m, v| {
                    let v = v.max(0.0);
                    let mean = (m + v / 2.0).exp();
                    mean + (v.exp() - 1.0) * (2.0 * m + v).exp()
                });
                Ok((mean, variance))
            }
            LikelihoodSpec::Multiclass { classes, epsilon } => {
                let c = *classes;
                if mu.cols() != c || var.cols() != c {
                    return Err(Error::ShapeMismatch {
                        op: "predict".into(),
                        detail: format!("expected {c} latent columns, got {}", mu.cols()),
                    });
                }
                let eps = store.constrained(*epsilon).as_scalar();
                let t = mu.rows();
                let rule = crate::foundation::hermite_rule(100)?;
                let mut probs = Value::zeros(t, c);
                let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
                for i in 0..t {
                    for class in 0..c {
                        let m_c = mu[(i, class)];
                        let v_c = var[(i, class)].max(0.0);
                        let mut p = 0.0;
                        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                            let f = m_c + (2.0 * v_c).sqrt() * x;
                            let mut prod = 1.0;
                            for j in 0..c {
                                if j != class {
                                    let vj = var[(i, j)].max(TINY);
                                    prod *= special::normcdf((f - mu[(i, j)]) / vj.sqrt());
                                }
                            }
                            p += w * prod;
                        }
                        p *= inv_sqrt_pi;
                        probs[(i, class)] = (1.0 - eps) * p + eps / (c as f64 - 1.0) * (1.0 - p);
                    }
                }
                let variance = probs.map(|p| p * (1.0 - p));
                Ok((probs, variance))
            }
        }
    }
}

impl Value {
    fn from_raw_zip(a: &Value, b: &Value, f: impl Fn(f64, f64) -> f64) -> Value {
        debug_assert_eq!(a.shape(), b.shape());
        Value::new(
            a.rows(),
            a.cols(),
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        )
        .expect("finite predictive moments")
    }
}

#[cfg(test)]
mod tests;
