//! Exhaustive reference solvers for tiny problems.
//!
//! These enumerate bases, binary patterns or active sets and share no code
//! path with the simplex/active-set pivoting they are used to check.

use nalgebra::{DMatrix, DVector};

use crate::lp::{solve_lp, LpStatus};
use crate::milp::MixedIntegerProgram;
use crate::qp::QuadraticProgram;

/// `min c'x s.t. A x = b, x >= 0` by trying every column basis.
/// `a` is row-major `m x n`. Returns `None` when no basis is feasible.
pub fn lp_by_basis_enumeration(a: &[f64], b: &[f64], c: &[f64], m: usize, n: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        let bm = DMatrix::from_fn(m, m, |i, k| a[i * n + subset[k]]);
        if let Some(xb) = bm.lu().solve(&DVector::from_column_slice(b)) {
            if xb.iter().all(|v| *v >= -1e-9) {
                let v: f64 = subset.iter().zip(xb.iter()).map(|(&j, x)| c[j] * x).sum();
                if best.is_none_or(|bv| v < bv) {
                    best = Some(v);
                }
            }
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    best
}

/// Advances `subset` (sorted indices into `0..n`) to the next combination.
pub fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Minimum over all `2^k` binary patterns of the LP with binaries fixed.
pub fn milp_by_enumeration(mip: &MixedIntegerProgram) -> Option<f64> {
    let k = mip.binaries.len();
    assert!(k <= 20, "enumeration over {k} binaries");
    let mut best: Option<f64> = None;
    for pattern in 0u64..(1u64 << k) {
        let mut lp = mip.lp.clone();
        let mut skip = false;
        for (bit, &j) in mip.binaries.iter().enumerate() {
            let v = ((pattern >> bit) & 1) as f64;
            if v < lp.lower[j] || v > lp.upper[j] {
                skip = true;
                break;
            }
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        if skip {
            continue;
        }
        if let Ok(sol) = solve_lp(&lp) {
            if sol.status == LpStatus::Optimal && best.is_none_or(|b| sol.objective < b) {
                best = Some(sol.objective);
            }
        }
    }
    best
}

/// Solves a [`QuadraticProgram`] with only `>=` rows and bounds by checking
/// the KKT conditions on every subset of at most `n` active constraints.
/// Returns the minimizer with the smallest objective among KKT points.
pub fn qp_by_active_sets(qp: &QuadraticProgram) -> Option<Vec<f64>> {
    assert!(qp.eq_rows.is_empty(), "equality rows are not enumerated");
    let n = qp.n;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, &b) in qp.ge_rows.iter().zip(&qp.ge_rhs) {
        let mut a = vec![0.0; n];
        for &(j, v) in row {
            a[j] += v;
        }
        rows.push((a, b));
    }
    for j in 0..n {
        if qp.lower[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, qp.lower[j]));
        }
        if qp.upper[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = -1.0;
            rows.push((a, -qp.upper[j]));
        }
    }
    let total = rows.len();
    let hdiag: Vec<f64> = (0..n).map(|j| if j < qp.prox_dim { 1.0 / qp.t } else { 0.0 }).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for size in 0..=n.min(total) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            // [H -A'; A 0] [x; lambda] = [-lin + H z; b]
            let dim = n + size;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for j in 0..n {
                kkt[(j, j)] = hdiag[j];
                let zj = if j < qp.prox_dim { qp.center[j] } else { 0.0 };
                rhs[j] = -qp.linear[j] + hdiag[j] * zj;
            }
            for (r, &ci) in subset.iter().enumerate() {
                for j in 0..n {
                    kkt[(j, n + r)] = -rows[ci].0[j];
                    kkt[(n + r, j)] = rows[ci].0[j];
                }
                rhs[n + r] = rows[ci].1;
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let x: Vec<f64> = sol.iter().take(n).copied().collect();
                let duals_ok = (0..size).all(|r| sol[n + r] >= -1e-9);
                let primal_ok = rows.iter().all(|(a, b)| row_dot_dense(a, &x) >= b - 1e-9);
                if duals_ok && primal_ok && sol.iter().all(|v| v.is_finite()) {
                    let obj = qp.objective(&x);
                    if best.as_ref().is_none_or(|(bo, _)| obj < *bo - 1e-12) {
                        best = Some((obj, x));
                    }
                }
            }
            if !next_combination(&mut subset, total) {
                break;
            }
        }
    }
    best.map(|b| b.1)
}

fn row_dot_dense(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

/// Max violation of a point against a MILP's rows, bounds and integrality.
pub fn mip_violation(mip: &MixedIntegerProgram, x: &[f64]) -> f64 {
    let lp = &mip.lp;
    let mut worst = lp.max_violation(x);
    for &j in &mip.binaries {
        worst = worst.max(x[j].min(1.0 - x[j]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_are_exhaustive() {
        let mut s = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut s, 4) {
            count += 1;
        }
        assert_eq!(count, 6);
    }
}
