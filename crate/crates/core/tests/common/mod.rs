//! Shared fixtures and independent oracles for the integration suites.
//! Oracles deliberately avoid the library's Cholesky/solve code paths.

#![allow(dead_code)]

use gptape::adgraph::Value;
use gptape::inference::Objective;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Random inputs in a box.
pub fn random_inputs(rng: &mut ChaCha12Rng, n: usize, d: usize, half_width: f64) -> Value {
    Value::from_fn(n, d, |_, _| rng.random_range(-half_width..half_width))
}

/// Smooth univariate targets for regression fixtures.
pub fn smooth_targets(x: &Value, scale: f64) -> Value {
    Value::from_fn(x.rows(), 1, |i, _| {
        let t: f64 = x.row(i).iter().sum();
        scale * ((1.3 * t).sin() + 0.3 * (0.7 * t).cos())
    })
}

/// Matrix inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Value) -> Value {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut aug = Value::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        aug[(i, n + i)] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if aug[(r, col)].abs() > aug[(piv, col)].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..2 * n {
                let tmp = aug[(col, j)];
                aug[(col, j)] = aug[(piv, j)];
                aug[(piv, j)] = tmp;
            }
        }
        let d = aug[(col, col)];
        assert!(d.abs() > 1e-300, "singular matrix in oracle");
        for j in 0..2 * n {
            aug[(col, j)] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = aug[(r, col)];
                if f != 0.0 {
                    for j in 0..2 * n {
                        aug[(r, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
    }
    Value::from_fn(n, n, |i, j| aug[(i, n + j)])
}

/// log |det A| by Gaussian elimination with partial pivoting (A assumed
/// positive definite so the sign is +1).
pub fn log_det(a: &Value) -> f64 {
    let n = a.rows();
    let mut m = a.clone();
    let mut logdet = 0.0;
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            // row swap flips the sign; PD inputs keep |det| unchanged
        }
        let d = m[(col, col)];
        logdet += d.abs().ln();
        for r in (col + 1)..n {
            let f = m[(r, col)] / d;
            if f != 0.0 {
                for j in col..n {
                    m[(r, j)] -= f * m[(col, j)];
                }
            }
        }
    }
    logdet
}

/// Independent multivariate-normal log density via explicit inverse.
pub fn dense_mvn_logpdf(y: &Value, cov: &Value) -> f64 {
    let n = y.rows();
    let p = y.cols();
    let inv = gauss_jordan_inverse(cov);
    let ld = log_det(cov);
    let mut total = 0.0;
    for c in 0..p {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += y[(i, c)] * inv[(i, j)] * y[(j, c)];
            }
        }
        total += -0.5 * quad - 0.5 * ld - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    total
}

/// RBF covariance computed directly from the formula, entry by entry.
pub fn rbf_matrix(x1: &Value, x2: &Value, variance: f64, lengthscale: f64) -> Value {
    Value::from_fn(x1.rows(), x2.rows(), |i, j| {
        let mut d2 = 0.0;
        for k in 0..x1.cols() {
            let d = (x1[(i, k)] - x2[(j, k)]) / lengthscale;
            d2 += d * d;
        }
        variance * (-0.5 * d2).exp()
    })
}

/// Central finite differences of an Objective's full-batch value against
/// its reported gradient: |fd - g| <= rel * max(|fd|,|g|) with an absolute
/// floor.
pub fn check_objective_gradient(
    obj: &mut impl Objective,
    rel: f64,
    abs_floor: f64,
    label: &str,
) {
    let x0 = obj.state();
    let (_, grad) = obj.value_and_grad(None).unwrap();
    obj.set_state(&x0).unwrap();
    let h = 1e-6;
    for k in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += h;
        xm[k] -= h;
        obj.set_state(&xp).unwrap();
        let (fp, _) = obj.value_and_grad(None).unwrap();
        obj.set_state(&xm).unwrap();
        let (fm, _) = obj.value_and_grad(None).unwrap();
        obj.set_state(&x0).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - grad[k]).abs();
        let tol = (rel * fd.abs().max(grad[k].abs())).max(abs_floor);
        assert!(
            err <= tol,
            "{label}: component {k}: fd={fd:.10e} analytic={:.10e} err={err:.3e} tol={tol:.3e}",
            grad[k]
        );
    }
}

/// Same check for a log target over a sampler position.
pub fn check_target_gradient(
    target: &mut impl gptape::inference::LogTarget,
    position: &[f64],
    rel: f64,
    abs_floor: f64,
    label: &str,
) {
    let (_, grad) = target.log_target_and_grad(position).unwrap();
    let h = 1e-6;
    for k in 0..position.len() {
        let mut xp = position.to_vec();
        let mut xm = position.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let (fp, _) = target.log_target_and_grad(&xp).unwrap();
        let (fm, _) = target.log_target_and_grad(&xm).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - grad[k]).abs();
        let tol = (rel * fd.abs().max(grad[k].abs())).max(abs_floor);
        assert!(
            err <= tol,
            "{label}: component {k}: fd={fd:.10e} analytic={:.10e} err={err:.3e} tol={tol:.3e}",
            grad[k]
        );
    }
}
