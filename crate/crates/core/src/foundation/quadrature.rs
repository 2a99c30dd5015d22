//! Gauss-Hermite quadrature in the physicists' convention:
//! integral of e^{-x^2} g(x) dx ~ sum_h w_h g(x_h).
//!
//! Nodes and weights come from the Golub-Welsch construction: the
//! eigendecomposition of the symmetric tridiagonal Jacobi matrix with zero
//! diagonal and off-diagonals sqrt(i/2).

use crate::error::{Error, Result};

pub const DEFAULT_QUADRATURE_POINTS: usize = 20;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Builds the H-point Gauss-Hermite rule, 1 <= H <= 100.
pub fn hermite_rule(h: usize) -> Result<QuadratureRule> {
    if h == 0 || h > 100 {
        return Err(Error::QuadratureOrder(h));
    }
    let mut diag = vec![0.0f64; h];
    let mut off: Vec<f64> = (1..h).map(|i| (i as f64 / 2.0).sqrt()).collect();
    off.push(0.0);
    // First components of the normalized eigenvectors.
    let mut z = vec![0.0f64; h];
    z[0] = 1.0;
    tql_implicit(&mut diag, &mut off, &mut z)?;

    let mu0 = std::f64::consts::PI.sqrt(); // integral of e^{-x^2}
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(&z)
        .map(|(&x, &q)| (x, mu0 * q * q))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // The exact rule is symmetric about zero; enforce it so downstream
    // expectations of even/odd functions behave exactly.
    let n = pairs.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }

    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// E_{N(mu, var)}[g] = (1/sqrt(pi)) sum w_h g(mu + sqrt(2 var) x_h).
    pub fn expect_gaussian(&self, mu: f64, var: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var.max(0.0)).sqrt();
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(mu + scale * x);
        }
        acc * inv_sqrt_pi
    }
}

/// QL with implicit shifts for a symmetric tridiagonal matrix, tracking
/// only the first row of the eigenvector matrix (enough for quadrature
/// weights). `diag` holds eigenvalues on exit; `off[i]` couples i and i+1.
fn tql_implicit(diag: &mut [f64], off: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::InvalidValue(
                    "tridiagonal eigensolver did not converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}
