//! Adam with bias correction, plus the training loop driving it in
//! full-batch or seeded-minibatch mode.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

pub const DEFAULT_ADAM_RATE: f64 = 0.01;

/// Something an optimizer can drive: a flat free state and a minimized
/// objective (negated ELBO or log marginal) with its gradient.
pub trait Objective {
    fn state(&self) -> Vec<f64>;
    fn set_state(&mut self, state: &[f64]) -> Result<()>;
    /// Rows available for minibatching.
    fn data_len(&self) -> usize;
    /// Objective value and gradient; `batch` of None means full data.
    fn value_and_grad(&mut self, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: usize,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Bias-corrected update; returns the parameter delta
    /// -rate * mhat / (sqrt(vhat) + eps).
    pub fn step(&mut self, gradient: &[f64]) -> Result<Vec<f64>> {
        if gradient.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch {
                op: "adam-step".into(),
                detail: format!(
                    "gradient length {} vs state {}",
                    gradient.len(),
                    self.first_moment.len()
                ),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut delta = Vec::with_capacity(gradient.len());
        for ((m, v), &g) in self
            .first_moment
            .iter_mut()
            .zip(self.second_moment.iter_mut())
            .zip(gradient)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            delta.push(-self.rate * mhat / (vhat.sqrt() + self.epsilon));
        }
        Ok(delta)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    FullBatch,
    Stochastic { batch_size: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub seconds: f64,
}

/// Seeded epoch shuffles without replacement; batches of size >= n fall
/// back to the identity order so they reproduce full-batch runs exactly.
struct Batcher {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
    rng: ChaCha12Rng,
    fresh: bool,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Batcher {
            order: (0..n).collect(),
            batch,
            pos: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
            fresh: true,
        }
    }

    fn next(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch >= n {
            return (0..n).collect();
        }
        if self.fresh || self.pos + self.batch > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.fresh = false;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Runs Adam for a fixed number of iterations, recording the objective
/// before each step. Non-finite objectives abort with the iteration
/// number in the diagnostic.
pub fn minimize(
    objective: &mut impl Objective,
    iterations: usize,
    rate: f64,
    mode: Mode,
) -> Result<Vec<TraceRow>> {
    let mut x = objective.state();
    let mut adam = AdamState::new(x.len(), rate);
    let mut batcher = match mode {
        Mode::FullBatch => None,
        Mode::Stochastic { batch_size, seed } => {
            if batch_size == 0 {
                return Err(Error::Optimization {
                    iteration: 0,
                    reason: "batch size must be positive".into(),
                });
            }
            Some(Batcher::new(objective.data_len(), batch_size, seed))
        }
    };
    let start = Instant::now();
    let mut trace = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let batch = batcher.as_mut().map(|b| b.next());
        let (value, grad) = objective
            .value_and_grad(batch.as_deref())
            .map_err(|e| Error::Optimization {
                iteration,
                reason: e.to_string(),
            })?;
        if !value.is_finite() {
            return Err(Error::Optimization {
                iteration,
                reason: format!("objective is {value}"),
            });
        }
        let delta = adam.step(&grad)?;
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
        }
        objective.set_state(&x)?;
        trace.push(TraceRow {
            iteration,
            objective: value,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(trace)
}
