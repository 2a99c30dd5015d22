//! Gradient-based training over free states and Hamiltonian Monte Carlo
//! over whitened MCMC states.

mod adam;
mod hmc;

pub use adam::{minimize, AdamState, Mode, Objective, TraceRow, DEFAULT_ADAM_RATE};
pub use hmc::{hmc_sample, leapfrog, Chain, HmcConfig, LogTarget};
