//! Seeded random small problems for checking the kernels against the
//! references in [`crate::brute`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::lp::LinearProgram;
use crate::milp::MixedIntegerProgram;
use crate::qp::QuadraticProgram;

const INF: f64 = f64::INFINITY;

/// Standard-form `min c'x, A x = b, x >= 0` (5 x 8, row-major `A`) feasible
/// at a hidden point.
pub fn standard_form(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, n) = (5, 8);
    let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-2.0..3.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let b: Vec<f64> = (0..m).map(|i| (0..n).map(|j| a[i * n + j] * x0[j]).sum()).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    (a, b, c)
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, f64)> {
    let mut row = Vec::new();
    for j in 0..n {
        if rng.gen_bool(0.7) {
            row.push((j, rng.gen_range(-2.0..2.0)));
        }
    }
    row
}

/// Random general-form LP feasible at a hidden point.
pub fn general_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(2..9);
    let mut lp = LinearProgram::new();
    let mut x0 = Vec::new();
    for _ in 0..n {
        let kind = rng.gen_range(0..4);
        let (lo, hi) = match kind {
            0 => (rng.gen_range(-3.0..0.0), rng.gen_range(0.0..3.0)),
            1 => (0.0, INF),
            2 => (f64::NEG_INFINITY, rng.gen_range(0.0..2.0)),
            _ => (-5.0, 5.0),
        };
        let v = if lo.is_finite() && hi.is_finite() {
            rng.gen_range(lo..=hi)
        } else if lo.is_finite() {
            lo + rng.gen_range(0.0..2.0)
        } else {
            hi - rng.gen_range(0.0..2.0)
        };
        x0.push(v);
        let cost = match kind {
            1 => rng.gen_range(0.1..2.0),
            2 => rng.gen_range(-2.0..-0.1),
            _ => rng.gen_range(-2.0..2.0),
        };
        lp.add_var(cost, lo, hi);
    }
    for _ in 0..rng.gen_range(0..3) {
        let row = random_row(rng, n);
        let b = row.iter().map(|&(j, v)| v * x0[j]).sum();
        lp.add_eq(row, b);
    }
    for _ in 0..rng.gen_range(1..6) {
        let row = random_row(rng, n);
        let b: f64 = row.iter().map(|&(j, v)| v * x0[j]).sum::<f64>() - rng.gen_range(0.0..1.0);
        lp.add_ge(row, b);
    }
    lp
}

/// A bilevel-KKT-shaped MILP: continuous "u" in a box, a small inner LP
/// written through its KKT conditions with big-M complementarity.
pub fn sup_shaped(rng: &mut ChaCha8Rng, k: usize) -> MixedIntegerProgram {
    let mut lp = LinearProgram::new();
    let u = lp.add_var(0.0, 0.0, 1.0);
    let y = lp.add_var(0.0, -10.0, 10.0);
    let mut bins = Vec::new();
    let f = rng.gen_range(0.5..2.0);
    // inner: min f*y s.t. g_i*y >= a_i + b_i*u, i < k ; duals pi_i
    let mut stat = vec![];
    let mut pis = vec![];
    for _ in 0..k {
        let g: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.5);
        let a = rng.gen_range(-3.0..3.0);
        let b = rng.gen_range(-3.0..3.0);
        let pi = lp.add_var(0.0, 0.0, 20.0);
        let w = lp.add_var(0.0, 0.0, 1.0);
        pis.push(pi);
        bins.push(w);
        stat.push((pi, g));
        lp.add_ge(vec![(y, g), (u, -b)], a);
        lp.add_ge(vec![(w, 20.0), (pi, -1.0)], 0.0);
        // slack <= 40 (1 - w)
        lp.add_le(vec![(y, g), (u, -b), (w, 40.0)], a + 40.0);
    }
    lp.add_eq(stat, f);
    lp.objective[y] = -f;
    lp.objective[u] = rng.gen_range(-1.0..1.0);
    MixedIntegerProgram { lp, binaries: bins }
}

/// A bundle-master-shaped QP: proximal term on 3 variables plus an epigraph
/// variable bounded below by up to 6 cuts.
pub fn random_cut_pool(rng: &mut ChaCha8Rng) -> QuadraticProgram {
    let d = 3;
    let cuts = rng.gen_range(1..=6);
    let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut qp = QuadraticProgram {
        n: d + 1,
        prox_dim: d,
        center,
        t: rng.gen_range(0.2..2.0),
        linear: vec![0.0, 0.0, 0.0, 1.0],
        lower: vec![-2.0, -2.0, -2.0, f64::NEG_INFINITY],
        upper: vec![2.0, 2.0, 2.0, f64::INFINITY],
        ..Default::default()
    };
    for _ in 0..cuts {
        let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = rng.gen_range(-1.0..1.0);
        let mut row = vec![(d, 1.0)];
        row.extend(g.iter().enumerate().map(|(j, &gj)| (j, -gj)));
        qp.ge_rows.push(row);
        qp.ge_rhs.push(v);
    }
    qp
}
