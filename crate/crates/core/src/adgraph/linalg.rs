//! Dense kernels backing the tape ops: matrix product, Cholesky
//! factorization, triangular solves, and their reverse-mode rules.
//!
//! Parallel paths split work so that every output entry is produced by
//! exactly one task with a fixed sequential inner loop; results are
//! bitwise identical for any worker count.

use super::value::Value;
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which parallel dispatch is not worth it.
const PAR_FLOPS: usize = 1 << 16;

/// C = A * B.
pub fn matmul(a: &Value, b: &Value) -> Value {
    let (n, k) = a.shape();
    let (k2, m) = b.shape();
    debug_assert_eq!(k, k2);
    let mut out = vec![0.0; n * m];
    let work = n * m * k;
    let row_task = |i: usize, row_out: &mut [f64]| {
        let a_row = a.row(i);
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = b.row(l);
            for (o, &b_lj) in row_out.iter_mut().zip(b_row) {
                *o += a_il * b_lj;
            }
        }
    };
    if work >= PAR_FLOPS && n > 1 {
        out.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| row_task(i, row));
    } else {
        for (i, row) in out.chunks_mut(m).enumerate() {
            row_task(i, row);
        }
    }
    Value::from_raw(n, m, out)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
/// Only the lower triangle of the input is read.
pub fn cholesky(a: &Value) -> Result<Value> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut l = Value::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves op(T) X = B where T is triangular. `lower` selects the stored
/// triangle, `trans` selects op(T) = T^T.
pub fn trisolve(t: &Value, b: &Value, lower: bool, trans: bool) -> Value {
    let n = t.rows();
    let m = b.cols();
    debug_assert_eq!(t.cols(), n);
    debug_assert_eq!(b.rows(), n);
    let mut x = b.clone();
    let col_task = |col: &mut [f64]| {
        // col holds one right-hand side, contiguous.
        solve_single(t, col, lower, trans);
    };
    if n * n * m / 2 >= PAR_FLOPS && m > 1 {
        // Transpose to make each RHS contiguous, solve columns in parallel,
        // transpose back.
        let mut xt = x.transposed();
        xt.data_mut()
            .par_chunks_mut(n)
            .for_each(|col| col_task(col));
        x = xt.transposed();
    } else {
        let mut xt = x.transposed();
        for col in xt.data_mut().chunks_mut(n) {
            col_task(col);
        }
        x = xt.transposed();
    }
    x
}

fn solve_single(t: &Value, b: &mut [f64], lower: bool, trans: bool) {
    let n = t.rows();
    // Forward substitution for an effectively-lower system, back
    // substitution otherwise.
    let forward = lower != trans;
    if forward {
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                let coeff = if trans { t[(j, i)] } else { t[(i, j)] };
                s -= coeff * b[j];
            }
            b[i] = s / t[(i, i)];
        }
    } else {
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..n {
                let coeff = if trans { t[(j, i)] } else { t[(i, j)] };
                s -= coeff * b[j];
            }
            b[i] = s / t[(i, i)];
        }
    }
}

/// Reverse-mode rule for X = solve(L, B) in the lower non-transposed case:
/// Bbar = L^-T Xbar, Lbar = tril(-Bbar X^T).
pub fn trisolve_rev(l: &Value, _b: &Value, x: &Value, xbar: &Value) -> (Value, Value) {
    let bbar = trisolve(l, xbar, true, true);
    let lbar = matmul(&bbar, &x.transposed()).scale(-1.0).tril();
    (lbar, bbar)
}

/// General triangular-solve adjoint covering all four variants.
/// Returns (Tbar, Bbar).
pub fn trisolve_rev_general(
    t: &Value,
    x: &Value,
    xbar: &Value,
    lower: bool,
    trans: bool,
) -> (Value, Value) {
    let bbar = trisolve(t, xbar, lower, !trans);
    let raw = if trans {
        // X = op(T)^-1 B with op = transpose: Tbar = -tri(X Bbar^T)
        matmul(x, &bbar.transposed()).scale(-1.0)
    } else {
        matmul(&bbar, &x.transposed()).scale(-1.0)
    };
    let tbar = if lower { raw.tril() } else { raw.triu() };
    (tbar, bbar)
}

/// Phi operator from the Cholesky pullback: lower triangle with the
/// diagonal halved.
fn phi(m: &Value) -> Value {
    let mut out = m.tril();
    for i in 0..out.rows() {
        out[(i, i)] *= 0.5;
    }
    out
}

/// Unblocked Cholesky pullback in the packed (lower-triangular) convention:
/// the returned matrix holds d/dA_ij for the independent entries i >= j.
fn chol_rev_packed_unblocked(l: &Value, lbar: &Value) -> Value {
    let p = phi(&matmul(&l.transposed(), &lbar.tril()));
    // R = L^-T P L^-1, computed as two triangular solves.
    // W^T solves L^T W^T = P^T  =>  W = P L^-1
    let wt = trisolve(l, &p.transposed(), true, true);
    let r = trisolve(l, &wt.transposed(), true, true);
    // Packed result: Phi(R + R^T).
    phi(&r.add(&r.transposed()))
}

/// Adjoint of A = L L^T given the factor L and upstream Lbar, reported as a
/// full symmetric matrix. Entries of Lbar above the diagonal are ignored.
pub fn chol_rev(l: &Value, lbar: &Value) -> Result<Value> {
    chol_rev_blocked(l, lbar, l.rows().max(1))
}

/// Blocked variant of [`chol_rev`]; `block` is the panel width. A block
/// size at or above n falls through to the unblocked reference.
pub fn chol_rev_blocked(l: &Value, lbar: &Value, block: usize) -> Result<Value> {
    let n = l.rows();
    debug_assert_eq!(l.shape(), lbar.shape());
    for i in 0..n {
        if !(l[(i, i)] > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: i,
                value: l[(i, i)],
            });
        }
    }
    let block = block.max(1);
    let packed = if n <= block {
        chol_rev_packed_unblocked(l, lbar)
    } else {
        chol_rev_packed_blocked(l, lbar, block)
    };
    // Full symmetric reporting: (P + P^T) / 2.
    Ok(packed.add(&packed.transposed()).scale(0.5))
}

/// Blocked packed pullback. Processes block columns from last to first,
/// turning the stored Lbar into the packed Abar in place.
fn chol_rev_packed_blocked(l: &Value, lbar: &Value, block: usize) -> Value {
    let n = l.rows();
    let mut f = lbar.tril();
    let nblocks = n.div_ceil(block);
    for kb in (0..nblocks).rev() {
        let c0 = kb * block;
        let cw = block.min(n - c0);
        let b0 = c0 + cw; // rows below the diagonal block
        let bw = n - b0;
        let lcc = l.block(c0, c0, cw, cw);
        if bw > 0 {
            let lbc = l.block(b0, c0, bw, cw);
            // Reverse of the trailing update S -= L21 L21^T:
            // G = Fbc - (Fbb + Fbb^T) L21, where Fbb is the packed adjoint
            // of the trailing Schur complement produced by later steps.
            let fbb = f.block(b0, b0, bw, bw);
            let fbc = f.block(b0, c0, bw, cw);
            let sym = fbb.add(&fbb.transposed());
            let g = fbc.sub(&matmul(&sym, &lbc));
            // Reverse of the panel solve L21 = A21 L11^-T:
            // Abar21 = G L11^-1   (via L11^T X^T = G^T)
            let abar21 = trisolve(&lcc, &g.transposed(), true, true).transposed();
            f.set_block(b0, c0, &abar21);
            // Lbar11 -= tril(L11^-T G^T L21)
            let m = trisolve(&lcc, &matmul(&g.transposed(), &lbc), true, true).tril();
            let fcc = f.block(c0, c0, cw, cw).sub(&m);
            f.set_block(c0, c0, &fcc);
        }
        // Reverse of the diagonal factorization.
        let fcc = f.block(c0, c0, cw, cw);
        let abar11 = chol_rev_packed_unblocked(&lcc, &fcc);
        f.set_block(c0, c0, &abar11);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rng: &mut ChaCha12Rng, n: usize, m: usize) -> Value {
        Value::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha12Rng, n: usize) -> Value {
        let r = random_matrix(rng, n, n);
        let mut a = matmul(&r, &r.transposed());
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    fn random_lower(rng: &mut ChaCha12Rng, n: usize) -> Value {
        let mut l = random_matrix(rng, n, n).tril();
        for i in 0..n {
            l[(i, i)] = rng.random_range(0.5..2.0);
        }
        l
    }

    #[test]
    fn matmul_small() {
        let a = Value::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Value::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for n in [1usize, 2, 3, 5, 16, 33] {
            let a = random_spd(&mut rng, n);
            let l = cholesky(&a).unwrap();
            let rec = matmul(&l, &l.transposed());
            let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(rec.max_abs_diff(&a) <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn cholesky_1x1_is_sqrt() {
        let l = cholesky(&Value::scalar(4.0)).unwrap();
        assert_eq!(l.as_scalar(), 2.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Value::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn trisolve_all_variants() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for n in [1usize, 3, 7, 20] {
            let l = random_lower(&mut rng, n);
            let u = l.transposed();
            let b = random_matrix(&mut rng, n, 4);
            for (t, lower, trans) in [
                (&l, true, false),
                (&l, true, true),
                (&u, false, false),
                (&u, false, true),
            ] {
                let x = trisolve(t, &b, lower, trans);
                let op_t = if trans { t.transposed() } else { (*t).clone() };
                let back = matmul(&op_t, &x);
                assert!(back.max_abs_diff(&b) <= 1e-9, "n={n} lower={lower} trans={trans}");
            }
        }
    }

    #[test]
    fn trisolve_rev_scalar_example() {
        // L=[[2]], B=[[4]], X=[[2]], Xbar=[[1]] -> Bbar=0.5, Lbar=-1
        let l = Value::scalar(2.0);
        let b = Value::scalar(4.0);
        let x = Value::scalar(2.0);
        let xbar = Value::scalar(1.0);
        let (lbar, bbar) = trisolve_rev(&l, &b, &x, &xbar);
        assert_relative_eq!(bbar.as_scalar(), 0.5);
        assert_relative_eq!(lbar.as_scalar(), -1.0);
    }

    #[test]
    fn trisolve_rev_zero_adjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let l = random_lower(&mut rng, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let x = trisolve(&l, &b, true, false);
        let (lbar, bbar) = trisolve_rev(&l, &b, &x, &Value::zeros(4, 2));
        assert_eq!(lbar, Value::zeros(4, 4));
        assert_eq!(bbar, Value::zeros(4, 2));
    }

    #[test]
    fn chol_rev_scalar_example() {
        // A=4: dL/dA = 1/(2 sqrt A) = 0.25
        let abar = chol_rev(&Value::scalar(2.0), &Value::scalar(1.0)).unwrap();
        assert_relative_eq!(abar.as_scalar(), 0.25);
    }

    #[test]
    fn chol_rev_zero_adjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = random_spd(&mut rng, 5);
        let l = cholesky(&a).unwrap();
        let abar = chol_rev(&l, &Value::zeros(5, 5)).unwrap();
        assert_eq!(abar, Value::zeros(5, 5));
    }

    #[test]
    fn chol_rev_rejects_bad_diagonal() {
        let mut l = Value::eye(2);
        l[(1, 1)] = -1.0;
        assert!(chol_rev(&l, &Value::eye(2)).is_err());
    }

    /// Finite-difference check of the full symmetric adjoint: perturb A
    /// symmetrically and compare <Abar, dA> against central differences of
    /// J = sum(W .* chol(A)).
    #[test]
    fn chol_rev_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 5;
        let a = random_spd(&mut rng, n);
        let w = random_matrix(&mut rng, n, n).tril();
        let l = cholesky(&a).unwrap();
        let abar = chol_rev(&l, &w).unwrap();
        let j = |a: &Value| -> f64 { cholesky(a).unwrap().dot(&w) };
        let h = 1e-6;
        for i in 0..n {
            for k in 0..=i {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[(i, k)] += h;
                am[(i, k)] -= h;
                if i != k {
                    ap[(k, i)] += h;
                    am[(k, i)] -= h;
                }
                let fd = (j(&ap) - j(&am)) / (2.0 * h);
                let analytic = if i == k { abar[(i, i)] } else { 2.0 * abar[(i, k)] };
                let denom = fd.abs().max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom <= 1e-5,
                    "entry ({i},{k}): fd={fd} analytic={analytic}"
                );
            }
        }
    }

    #[test]
    fn blocked_matches_unblocked() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for n in [1usize, 2, 3, 5, 8, 13, 21, 32, 47, 64] {
            let a = random_spd(&mut rng, n);
            let l = cholesky(&a).unwrap();
            let lbar = random_matrix(&mut rng, n, n);
            let reference = chol_rev_blocked(&l, &lbar, n.max(1)).unwrap();
            for block in [1usize, 2, 8, 16, 64] {
                let blocked = chol_rev_blocked(&l, &lbar, block).unwrap();
                assert!(
                    blocked.max_abs_diff(&reference) <= 1e-12,
                    "n={n} block={block} diff={}",
                    blocked.max_abs_diff(&reference)
                );
            }
        }
    }

    #[test]
    fn trisolve_rev_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 4;
        let l = random_lower(&mut rng, n);
        let b = random_matrix(&mut rng, n, 3);
        let w = random_matrix(&mut rng, n, 3);
        let x = trisolve(&l, &b, true, false);
        let (lbar, bbar) = trisolve_rev(&l, &b, &x, &w);
        let j = |l: &Value, b: &Value| trisolve(l, b, true, false).dot(&w);
        let h = 1e-6;
        for i in 0..n {
            for k in 0..=i {
                let mut lp = l.clone();
                let mut lm = l.clone();
                lp[(i, k)] += h;
                lm[(i, k)] -= h;
                let fd = (j(&lp, &b) - j(&lm, &b)) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!((fd - lbar[(i, k)]).abs() / denom <= 1e-6, "L ({i},{k})");
            }
        }
        for i in 0..n {
            for k in 0..3 {
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[(i, k)] += h;
                bm[(i, k)] -= h;
                let fd = (j(&l, &bp) - j(&l, &bm)) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!((fd - bbar[(i, k)]).abs() / denom <= 1e-6, "B ({i},{k})");
            }
        }
    }
}
