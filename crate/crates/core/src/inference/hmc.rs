//! Hamiltonian Monte Carlo with a fixed-step leapfrog integrator,
//! identity mass matrix, and Metropolis correction.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl HmcConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Sampler("step size must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Sampler("leapfrog steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Retained (post burn-in) draws with their accept flags and target values.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub targets: Vec<f64>,
    pub divergences: usize,
}

impl Chain {
    pub fn accept_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }
}

/// A differentiable unnormalized log density.
pub trait LogTarget {
    fn dim(&self) -> usize;
    /// Log target and gradient; numerical failures inside (non-finite
    /// intermediates, factorization breakdown) surface as errors and are
    /// treated as divergent trajectories by the sampler.
    fn log_target_and_grad(&mut self, position: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Half-kick / drift / half-kick integration of
/// H = -log target + ||p||^2 / 2. Returns None on a divergent trajectory
/// (non-finite state or gradient failure). `steps` must be >= 1.
pub fn leapfrog<F>(
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
    mut grad_log_target: F,
) -> Option<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    if steps == 0 {
        return None;
    }
    let mut q = position.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad_log_target(&q)?;
    for (pi, gi) in p.iter_mut().zip(&g) {
        *pi += 0.5 * step_size * gi;
    }
    for s in 0..steps {
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        g = grad_log_target(&q)?;
        let kick = if s + 1 < steps { step_size } else { 0.5 * step_size };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += kick * gi;
        }
    }
    if q.iter().chain(&p).all(|v| v.is_finite()) {
        Some((q, p))
    } else {
        None
    }
}

/// Standard HMC: momentum resampled from N(0, I) each iteration from the
/// seeded generator, Metropolis acceptance with probability
/// min(1, exp(-dH)), burn-in discarded. Aborts if the first 100 proposals
/// all diverge.
pub fn hmc_sample(
    target: &mut impl LogTarget,
    initial: &[f64],
    config: &HmcConfig,
) -> Result<Chain> {
    config.validate()?;
    let dim = target.dim();
    if initial.len() != dim {
        return Err(Error::Sampler(format!(
            "initial state has length {}, target dimension is {dim}",
            initial.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut q = initial.to_vec();
    let (mut logp, _) = target.log_target_and_grad(&q)?;
    if !logp.is_finite() {
        return Err(Error::Sampler(format!(
            "target is {logp} at the initial state"
        )));
    }

    let total = config.burn_in + config.samples;
    let mut chain = Chain {
        samples: Vec::with_capacity(config.samples),
        accepted: Vec::with_capacity(config.samples),
        targets: Vec::with_capacity(config.samples),
        divergences: 0,
    };
    let mut divergent_start = 0usize;

    for iter in 0..total {
        let p0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let u: f64 = rng.random::<f64>();
        let h0 = -logp + 0.5 * p0.iter().map(|v| v * v).sum::<f64>();

        // cache the endpoint's target value so accepted moves don't pay a
        // second evaluation
        let mut end: Option<f64> = None;
        let proposal = leapfrog(&q, &p0, config.step_size, config.leapfrog_steps, |pos| {
            match target.log_target_and_grad(pos) {
                Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => {
                    end = Some(lp);
                    Some(g)
                }
                _ => {
                    end = None;
                    None
                }
            }
        });

        let mut accepted = false;
        match proposal {
            Some((q_new, p_new)) => {
                let lp_new = end.expect("endpoint evaluated");
                let h1 = -lp_new + 0.5 * p_new.iter().map(|v| v * v).sum::<f64>();
                let dh = h1 - h0;
                if dh.is_finite() && u < (-dh).exp() {
                    q = q_new;
                    logp = lp_new;
                    accepted = true;
                }
            }
            None => {
                chain.divergences += 1;
                if iter < 100 {
                    divergent_start += 1;
                    if divergent_start == 100 {
                        return Err(Error::Sampler(
                            "first 100 proposals all diverged; check step size and target".into(),
                        ));
                    }
                }
            }
        }
        if iter >= config.burn_in {
            chain.samples.push(q.clone());
            chain.accepted.push(accepted);
            chain.targets.push(logp);
        }
    }
    Ok(chain)
}
