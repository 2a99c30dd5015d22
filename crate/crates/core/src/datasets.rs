//! Seeded synthetic datasets so training and benchmarking run without
//! any downloads.

use crate::adgraph::Value;
use crate::models::Dataset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct BlobConfig {
    pub classes: usize,
    pub n: usize,
    pub input_dim: usize,
    /// Scale of the class centers (drawn from N(0, scale^2 I)).
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl BlobConfig {
    /// The benchmark protocol's default corpus: 10 classes, n = 1000,
    /// d = 64.
    pub fn benchmark_default(seed: u64) -> Self {
        BlobConfig {
            classes: 10,
            n: 1000,
            input_dim: 64,
            center_scale: 2.0,
            noise: 1.0,
            seed,
        }
    }
}

/// Gaussian class blobs with balanced round-robin labels. Deterministic
/// for a given config.
pub fn class_blobs(cfg: &BlobConfig) -> Dataset {
    assert!(cfg.classes >= 2 && cfg.n >= cfg.classes && cfg.input_dim >= 1);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut centers = vec![vec![0.0f64; cfg.input_dim]; cfg.classes];
    for c in centers.iter_mut() {
        for v in c.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = cfg.center_scale * z;
        }
    }
    let mut x = Value::zeros(cfg.n, cfg.input_dim);
    let mut y = Value::zeros(cfg.n, 1);
    for i in 0..cfg.n {
        let label = i % cfg.classes;
        y[(i, 0)] = label as f64;
        for j in 0..cfg.input_dim {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = centers[label][j] + cfg.noise * z;
        }
    }
    Dataset::new(x, y).expect("generated data is finite")
}

/// Noisy samples of a smooth scalar function on [-range, range]^d.
pub fn smooth_regression(n: usize, input_dim: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let x = Value::from_fn(n, input_dim, |_, _| rng.random_range(-2.5..2.5));
    let mut y = Value::zeros(n, 1);
    for i in 0..n {
        let t: f64 = x.row(i).iter().sum();
        let z: f64 = rng.sample(StandardNormal);
        y[(i, 0)] = (1.2 * t).sin() + 0.4 * (0.6 * t).cos() + noise * z;
    }
    Dataset::new(x, y).expect("generated data is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let cfg = BlobConfig {
            classes: 3,
            n: 30,
            input_dim: 2,
            center_scale: 3.0,
            noise: 0.5,
            seed: 7,
        };
        let a = class_blobs(&cfg);
        let b = class_blobs(&cfg);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let mut counts = [0usize; 3];
        for &l in a.y.data() {
            counts[l as usize] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
    }

    #[test]
    fn benchmark_default_shape() {
        let d = class_blobs(&BlobConfig::benchmark_default(0));
        assert_eq!(d.x.shape(), (1000, 64));
        assert!(d.y.data().iter().all(|&l| l >= 0.0 && l < 10.0));
    }
}
