//! Primal active-set method for the proximal master problem
//!
//! ```text
//! min (1/2t) sum_{j < p} (v_j - z_j)^2 + c'v
//! s.t. A_eq v = b_eq, A_ge v >= b_ge, lo <= v <= hi
//! ```
//!
//! The Hessian is diagonal and only positive semidefinite (the trailing
//! variables, e.g. a cut-model epigraph variable, are linear). Each step
//! solves the equality-constrained subproblem on the working set in a
//! null-space basis; zero-curvature descent directions become rays that
//! run until a constraint blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dense::dot;
use crate::lp::{row_dot, solve_lp, LinearProgram, LpStatus, SparseRow};
use crate::{KernelError, Result};

#[derive(Clone, Debug, Default)]
pub struct QuadraticProgram {
    /// Number of variables.
    pub n: usize,
    /// Variables `0..prox_dim` carry the proximal term.
    pub prox_dim: usize,
    pub center: Vec<f64>,
    /// Proximal parameter; must be positive.
    pub t: f64,
    pub linear: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ge_rows: Vec<SparseRow>,
    pub ge_rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_multipliers: Vec<f64>,
    pub ge_multipliers: Vec<f64>,
    /// Multipliers of `v_j >= lo_j`.
    pub lower_multipliers: Vec<f64>,
    /// Multipliers of `-v_j >= -hi_j`.
    pub upper_multipliers: Vec<f64>,
    pub iterations: usize,
    /// Max of stationarity, primal and sign residuals at the returned point.
    pub kkt_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Eq(usize),
    Ge(usize),
    Lower(usize),
    Upper(usize),
}

struct Constraint {
    a: Vec<f64>,
    b: f64,
    kind: Kind,
}

impl QuadraticProgram {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(KernelError::Malformed(format!("proximal parameter must be positive, got {}", self.t)));
        }
        if self.prox_dim > n || self.center.len() != self.prox_dim {
            return Err(KernelError::Malformed("proximal block does not match center".into()));
        }
        if self.linear.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(KernelError::Malformed("vector lengths do not match n".into()));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.ge_rows.len() != self.ge_rhs.len() {
            return Err(KernelError::Malformed("row/rhs count mismatch".into()));
        }
        Ok(())
    }

    fn curvature(&self) -> Vec<f64> {
        (0..self.n).map(|j| if j < self.prox_dim { 1.0 / self.t } else { 0.0 }).collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let prox: f64 = (0..self.prox_dim).map(|j| (x[j] - self.center[j]).powi(2)).sum();
        prox / (2.0 * self.t) + dot(&self.linear, x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let q = if j < self.prox_dim { (x[j] - self.center[j]) / self.t } else { 0.0 };
                q + self.linear[j]
            })
            .collect()
    }

    fn constraints(&self) -> Vec<Constraint> {
        let n = self.n;
        let dense = |row: &SparseRow| {
            let mut a = vec![0.0; n];
            for &(j, v) in row {
                a[j] += v;
            }
            a
        };
        let mut out = Vec::new();
        for (i, row) in self.eq_rows.iter().enumerate() {
            out.push(Constraint { a: dense(row), b: self.eq_rhs[i], kind: Kind::Eq(i) });
        }
        for (i, row) in self.ge_rows.iter().enumerate() {
            out.push(Constraint { a: dense(row), b: self.ge_rhs[i], kind: Kind::Ge(i) });
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            if self.lower[j].is_finite() {
                e[j] = 1.0;
                out.push(Constraint { a: e.clone(), b: self.lower[j], kind: Kind::Lower(j) });
            }
            if self.upper[j].is_finite() {
                e[j] = -1.0;
                out.push(Constraint { a: e, b: -self.upper[j], kind: Kind::Upper(j) });
            }
        }
        out
    }

    fn feasible_point(&self) -> Result<Vec<f64>> {
        let mut lp = LinearProgram::new();
        for j in 0..self.n {
            lp.add_var(0.0, self.lower[j], self.upper[j]);
        }
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            lp.add_eq(row.clone(), b);
        }
        for (row, &b) in self.ge_rows.iter().zip(&self.ge_rhs) {
            lp.add_ge(row.clone(), b);
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.x),
            _ => Err(KernelError::QpInfeasible),
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((row_dot(row, x) - b).abs());
        }
        for (row, &b) in self.ge_rows.iter().zip(&self.ge_rhs) {
            worst = worst.max(b - row_dot(row, x));
        }
        for j in 0..self.n {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    solve_qp_from(qp, None)
}

/// Orthonormal basis of the row space of `rows` (modified Gram-Schmidt, applied twice).
fn row_basis(rows: &[&[f64]], n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let mut v = r.to_vec();
        let norm0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for b in &q {
                let c = dot(&v, b);
                for k in 0..n {
                    v[k] -= c * b[k];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 * norm0.max(1e-300) && norm > 1e-14 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
    }
    q
}

/// Columns spanning the orthogonal complement of `q`.
fn null_space(q: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let r = n - q.len();
    if r == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut proj = DMatrix::<f64>::identity(n, n);
    for b in q {
        for i in 0..n {
            for j in 0..n {
                proj[(i, j)] -= b[i] * b[j];
            }
        }
    }
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut z = DMatrix::zeros(n, r);
    for (c, &k) in idx.iter().take(r).enumerate() {
        z.set_column(c, &eig.eigenvectors.column(k));
    }
    z
}

pub fn solve_qp_from(qp: &QuadraticProgram, start: Option<&[f64]>) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.n;
    let cons = qp.constraints();
    let h = qp.curvature();
    let mut x = match start {
        Some(s) if s.len() == n && qp.violation(s) <= 1e-9 => s.to_vec(),
        _ => qp.feasible_point()?,
    };

    let mut working: Vec<usize> = Vec::new();
    {
        let mut rows: Vec<&[f64]> = Vec::new();
        for (i, c) in cons.iter().enumerate() {
            let active = matches!(c.kind, Kind::Eq(_)) || (dot(&c.a, &x) - c.b).abs() <= 1e-9 * (1.0 + c.b.abs());
            if !active {
                continue;
            }
            rows.push(&c.a);
            if row_basis(&rows, n).len() == rows.len() {
                working.push(i);
            } else {
                rows.pop();
            }
        }
    }

    let cap = 50 * (n + cons.len()) + 200;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(KernelError::QpNoConvergence { iterations });
        }
        let g = qp.gradient(&x);
        let gnorm = dot(&g, &g).sqrt();
        let rows: Vec<&[f64]> = working.iter().map(|&i| cons[i].a.as_slice()).collect();
        let q = row_basis(&rows, n);
        let z = null_space(&q, n);
        let r = z.ncols();

        let mut p = vec![0.0; n];
        let mut ray = false;
        if r > 0 {
            let mut hz = DMatrix::zeros(r, r);
            for a in 0..r {
                for b in a..r {
                    let v: f64 = (0..n).map(|k| z[(k, a)] * h[k] * z[(k, b)]).sum();
                    hz[(a, b)] = v;
                    hz[(b, a)] = v;
                }
            }
            let gz = DVector::from_iterator(r, (0..r).map(|a| (0..n).map(|k| z[(k, a)] * g[k]).sum::<f64>()));
            let eig = SymmetricEigen::new(hz);
            let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let zero = 1e-10 * lmax.max(1e-12);
            let mut dz = DVector::zeros(r);
            let mut ray_dir = DVector::zeros(r);
            for k in 0..r {
                let vk = eig.eigenvectors.column(k);
                let ck = vk.dot(&gz);
                if eig.eigenvalues[k] > zero {
                    dz -= vk * (ck / eig.eigenvalues[k]);
                } else if ck.abs() > 1e-12 * (1.0 + gnorm) {
                    ray_dir -= vk * ck;
                }
            }
            let dzv = if ray_dir.norm() > 0.0 {
                ray = true;
                ray_dir
            } else {
                dz
            };
            for k in 0..n {
                p[k] = (0..r).map(|a| z[(k, a)] * dzv[a]).sum();
            }
        }
        let pnorm = dot(&p, &p).sqrt();
        let xnorm = dot(&x, &x).sqrt();

        if !ray && pnorm <= 1e-11 * (1.0 + xnorm) {
            let lambda = multipliers(&cons, &working, &g, n);
            let mut drop: Option<(usize, f64)> = None;
            for (pos, &i) in working.iter().enumerate() {
                if matches!(cons[i].kind, Kind::Eq(_)) {
                    continue;
                }
                let l = lambda[pos];
                if l < -1e-9 * (1.0 + gnorm) && drop.is_none_or(|(_, d)| l < d) {
                    drop = Some((pos, l));
                }
            }
            match drop {
                Some((pos, _)) => {
                    working.remove(pos);
                    continue;
                }
                None => return Ok(finish(qp, &cons, &working, x, &lambda, iterations)),
            }
        }

        let mut alpha = if ray { f64::INFINITY } else { 1.0 };
        let mut block: Option<usize> = None;
        for (i, c) in cons.iter().enumerate() {
            if working.contains(&i) || matches!(c.kind, Kind::Eq(_)) {
                continue;
            }
            let ap = dot(&c.a, &p);
            let anorm = dot(&c.a, &c.a).sqrt();
            if ap >= -1e-12 * anorm * pnorm {
                continue;
            }
            let step = ((c.b - dot(&c.a, &x)) / ap).max(0.0);
            if step < alpha {
                alpha = step;
                block = Some(i);
            }
        }
        if !alpha.is_finite() {
            return Err(KernelError::QpUnbounded);
        }
        for k in 0..n {
            x[k] += alpha * p[k];
        }
        if let Some(i) = block {
            working.push(i);
        }
    }
}

fn multipliers(cons: &[Constraint], working: &[usize], g: &[f64], n: usize) -> Vec<f64> {
    let k = working.len();
    if k == 0 {
        return Vec::new();
    }
    let a = DMatrix::from_fn(k, n, |r, c| cons[working[r]].a[c]);
    let m = &a * a.transpose();
    let rhs = &a * DVector::from_column_slice(g);
    match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => m.lu().solve(&rhs).map(|v| v.iter().copied().collect()).unwrap_or_else(|| vec![0.0; k]),
    }
}

fn finish(
    qp: &QuadraticProgram,
    cons: &[Constraint],
    working: &[usize],
    x: Vec<f64>,
    lambda: &[f64],
    iterations: usize,
) -> QpSolution {
    let n = qp.n;
    let mut sol = QpSolution {
        objective: qp.objective(&x),
        eq_multipliers: vec![0.0; qp.eq_rows.len()],
        ge_multipliers: vec![0.0; qp.ge_rows.len()],
        lower_multipliers: vec![0.0; n],
        upper_multipliers: vec![0.0; n],
        iterations,
        kkt_residual: 0.0,
        x,
    };
    let g = qp.gradient(&sol.x);
    let mut stationarity = g.clone();
    let mut sign = 0.0f64;
    for (pos, &i) in working.iter().enumerate() {
        let l = lambda[pos];
        for k in 0..n {
            stationarity[k] -= l * cons[i].a[k];
        }
        match cons[i].kind {
            Kind::Eq(r) => sol.eq_multipliers[r] = l,
            Kind::Ge(r) => {
                sol.ge_multipliers[r] = l;
                sign = sign.max(-l);
            }
            Kind::Lower(j) => {
                sol.lower_multipliers[j] = l;
                sign = sign.max(-l);
            }
            Kind::Upper(j) => {
                sol.upper_multipliers[j] = l;
                sign = sign.max(-l);
            }
        }
    }
    let stat = stationarity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sol.kkt_residual = stat.max(qp.violation(&sol.x)).max(sign);
    sol
}
