//! Bounded-variable revised simplex.
//!
//! Problems are stated as
//!
//! ```text
//! min c'x  s.t.  A_eq x = b_eq,  A_ge x >= b_ge,  lo <= x <= hi
//! ```
//!
//! Internally every `>=` row receives a surplus column and every row an
//! artificial column, so the working form is `A x = b` with bounded
//! columns. The explicit basis inverse is kept dense and updated with
//! product-form pivots, refactorized every [`REFACTOR_EVERY`] pivots.

use crate::dense::{dot, invert};
use crate::{KernelError, Result};

pub type SparseRow = Vec<(usize, f64)>;

pub(crate) const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
/// Consecutive degenerate pivots before pricing switches to Bland's rule.
const DEGENERACY_TRIP: usize = 50;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ge_rows: Vec<SparseRow>,
    pub ge_rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lo);
        self.upper.push(hi);
        self.objective.len() - 1
    }

    /// Adds `count` variables sharing the same bounds and zero cost; returns the first index.
    pub fn add_vars(&mut self, count: usize, lo: f64, hi: f64) -> usize {
        let first = self.num_vars();
        for _ in 0..count {
            self.add_var(0.0, lo, hi);
        }
        first
    }

    pub fn add_eq(&mut self, row: SparseRow, rhs: f64) -> usize {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rows.len() - 1
    }

    pub fn add_ge(&mut self, row: SparseRow, rhs: f64) -> usize {
        self.ge_rows.push(row);
        self.ge_rhs.push(rhs);
        self.ge_rows.len() - 1
    }

    /// Stored as the negated `>=` row; its dual is reported for the negated row.
    pub fn add_le(&mut self, row: SparseRow, rhs: f64) -> usize {
        let neg = row.into_iter().map(|(j, v)| (j, -v)).collect();
        self.add_ge(neg, -rhs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(KernelError::Malformed("bound vectors do not match objective".into()));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.ge_rows.len() != self.ge_rhs.len() {
            return Err(KernelError::Malformed("row/rhs count mismatch".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(KernelError::Malformed(format!(
                    "variable {j} has lower bound {} above upper bound {}",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(KernelError::Malformed(format!("variable {j} has an infinite fixed bound")));
            }
        }
        for row in self.eq_rows.iter().chain(&self.ge_rows) {
            if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= n) {
                return Err(KernelError::Malformed(format!("row references variable {j} of {n}")));
            }
        }
        Ok(())
    }

    /// Objective value at `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((row_dot(row, x) - b).abs());
        }
        for (row, &b) in self.ge_rows.iter().zip(&self.ge_rhs) {
            worst = worst.max(b - row_dot(row, x));
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

pub fn row_dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows (free sign).
    pub eq_duals: Vec<f64>,
    /// Multipliers of the `>=` rows (nonnegative at optimality).
    pub ge_duals: Vec<f64>,
    /// `c_j - A_j' y` for every structural column.
    pub reduced_costs: Vec<f64>,
}

impl LpSolution {
    fn empty(status: LpStatus, n: usize) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            objective: match status {
                LpStatus::Infeasible => f64::INFINITY,
                LpStatus::Unbounded => f64::NEG_INFINITY,
                LpStatus::Optimal => 0.0,
            },
            eq_duals: Vec::new(),
            ge_duals: Vec::new(),
            reduced_costs: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Dual objective `b'y + sum_j d_j x_j` over nonbasic bound contributions.
    /// Equals the primal objective at an optimal basis.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let mut v = dot(&lp.eq_rhs, &self.eq_duals) + dot(&lp.ge_rhs, &self.ge_duals);
        for (j, &d) in self.reduced_costs.iter().enumerate() {
            if d.abs() > 0.0 {
                v += d * self.x[j];
            }
        }
        v
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let mut s = Simplex::new(lp);
    let status = s.cold_solve()?;
    Ok(s.solution(status))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum VarStatus {
    Basic,
    Lower,
    Upper,
    /// Free column resting at zero.
    Zero,
}

/// Snapshot of a basis, sufficient to warm-start a re-solve with changed bounds.
#[derive(Clone, Debug)]
pub(crate) struct Basis {
    basis: Vec<usize>,
    status: Vec<VarStatus>,
}

pub(crate) struct Simplex {
    m: usize,
    n_struct: usize,
    n_cols: usize,
    n_eq: usize,
    first_art: usize,
    cols: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<VarStatus>,
    x: Vec<f64>,
    binv: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    iteration_cap: usize,
}

enum PrimalOutcome {
    Optimal,
    Unbounded,
}

enum DualOutcome {
    Optimal,
    Infeasible,
}

impl Simplex {
    pub(crate) fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let n_eq = lp.eq_rows.len();
        let n_ge = lp.ge_rows.len();
        let m = n_eq + n_ge;
        let n_cols = n + n_ge + m;
        let mut cols = vec![0.0; n_cols * m];
        for (i, row) in lp.eq_rows.iter().chain(&lp.ge_rows).enumerate() {
            for &(j, v) in row {
                cols[j * m + i] += v;
            }
        }
        for k in 0..n_ge {
            cols[(n + k) * m + n_eq + k] = -1.0;
        }
        let first_art = n + n_ge;
        for i in 0..m {
            cols[(first_art + i) * m + i] = 1.0;
        }
        let mut cost = vec![0.0; n_cols];
        cost[..n].copy_from_slice(&lp.objective);
        let mut lo = vec![0.0; n_cols];
        let mut hi = vec![f64::INFINITY; n_cols];
        lo[..n].copy_from_slice(&lp.lower);
        hi[..n].copy_from_slice(&lp.upper);
        for j in first_art..n_cols {
            hi[j] = 0.0;
        }
        let mut b = Vec::with_capacity(m);
        b.extend_from_slice(&lp.eq_rhs);
        b.extend_from_slice(&lp.ge_rhs);
        Self {
            m,
            n_struct: n,
            n_cols,
            n_eq,
            first_art,
            cols,
            cost,
            lo,
            hi,
            b,
            basis: Vec::new(),
            status: vec![VarStatus::Lower; n_cols],
            x: vec![0.0; n_cols],
            binv: Vec::new(),
            since_refactor: 0,
            iterations: 0,
            iteration_cap: 50_000 + 200 * (m + n_cols),
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    fn rest_value(&self, j: usize) -> (f64, VarStatus) {
        if self.lo[j].is_finite() {
            (self.lo[j], VarStatus::Lower)
        } else if self.hi[j].is_finite() {
            (self.hi[j], VarStatus::Upper)
        } else {
            (0.0, VarStatus::Zero)
        }
    }

    /// Two-phase solve from a slack/artificial starting basis.
    pub(crate) fn cold_solve(&mut self) -> Result<LpStatus> {
        let m = self.m;
        self.iterations = 0;
        for j in 0..self.first_art {
            let (v, st) = self.rest_value(j);
            self.x[j] = v;
            self.status[j] = st;
        }
        let mut r = self.b.clone();
        for j in 0..self.first_art {
            if self.x[j] != 0.0 {
                let xj = self.x[j];
                for (ri, a) in r.iter_mut().zip(self.col(j)) {
                    *ri -= a * xj;
                }
            }
        }
        self.basis = vec![0; m];
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            let art = self.first_art + i;
            let surplus = if i >= self.n_eq { Some(self.n_struct + i - self.n_eq) } else { None };
            match surplus {
                Some(s) if r[i] <= 0.0 => {
                    self.basis[i] = s;
                    self.status[s] = VarStatus::Basic;
                    self.x[s] = -r[i];
                    self.binv[i * m + i] = -1.0;
                    self.x[art] = 0.0;
                    self.status[art] = VarStatus::Lower;
                    self.hi[art] = 0.0;
                }
                _ => {
                    let sign = if r[i] < 0.0 { -1.0 } else { 1.0 };
                    self.cols[art * m + i] = sign;
                    self.basis[i] = art;
                    self.status[art] = VarStatus::Basic;
                    self.x[art] = r[i].abs();
                    self.hi[art] = f64::INFINITY;
                    self.binv[i * m + i] = sign;
                }
            }
        }
        self.since_refactor = 0;

        let mut phase1_cost = vec![0.0; self.n_cols];
        for c in &mut phase1_cost[self.first_art..] {
            *c = 1.0;
        }
        self.primal(&phase1_cost)?;
        let infeas: f64 = (self.first_art..self.n_cols).map(|j| self.x[j]).sum();
        let scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in self.first_art..self.n_cols {
            self.hi[j] = 0.0;
            if self.status[j] != VarStatus::Basic {
                self.status[j] = VarStatus::Lower;
                self.x[j] = 0.0;
            }
        }
        // a looser threshold passes slightly infeasible LPs on to phase 2,
        // whose objective then undercuts the true value
        if infeas > FEAS_TOL * scale {
            return Ok(LpStatus::Infeasible);
        }
        self.refactor()?;
        let cost = self.cost.clone();
        match self.primal(&cost)? {
            PrimalOutcome::Optimal => Ok(LpStatus::Optimal),
            PrimalOutcome::Unbounded => Ok(LpStatus::Unbounded),
        }
    }

    pub(crate) fn snapshot(&self) -> Basis {
        Basis { basis: self.basis.clone(), status: self.status.clone() }
    }

    /// Re-solve from a dual-feasible basis after structural bounds changed.
    pub(crate) fn warm_solve(&mut self, start: &Basis, lower: &[f64], upper: &[f64]) -> Result<LpStatus> {
        // the cap is per solve, not per lifetime of the workspace
        self.iterations = 0;
        self.lo[..self.n_struct].copy_from_slice(lower);
        self.hi[..self.n_struct].copy_from_slice(upper);
        self.basis.clone_from(&start.basis);
        self.status.clone_from(&start.status);
        for j in 0..self.n_cols {
            self.x[j] = match self.status[j] {
                VarStatus::Basic => 0.0,
                VarStatus::Lower => self.lo[j],
                VarStatus::Upper => self.hi[j],
                VarStatus::Zero => 0.0,
            };
            if !self.x[j].is_finite() {
                let (v, st) = self.rest_value(j);
                self.x[j] = v;
                self.status[j] = st;
            }
        }
        if self.refactor().is_err() {
            return self.cold_solve();
        }
        match self.dual() {
            Ok(DualOutcome::Infeasible) => Ok(LpStatus::Infeasible),
            Ok(DualOutcome::Optimal) => {
                let cost = self.cost.clone();
                match self.primal(&cost) {
                    Ok(PrimalOutcome::Optimal) => Ok(LpStatus::Optimal),
                    Ok(PrimalOutcome::Unbounded) => Ok(LpStatus::Unbounded),
                    Err(_) => self.cold_solve(),
                }
            }
            Err(_) => self.cold_solve(),
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            let c = &self.cols[j * m..(j + 1) * m];
            for i in 0..m {
                bmat[i * m + k] = c[i];
            }
        }
        self.binv = invert(&bmat, m, 1e-13).ok_or(KernelError::SingularBasis)?;
        self.since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut r = self.b.clone();
        for j in 0..self.n_cols {
            if self.status[j] != VarStatus::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (ri, a) in r.iter_mut().zip(&self.cols[j * m..(j + 1) * m]) {
                    *ri -= a * xj;
                }
            }
        }
        for k in 0..m {
            let v = dot(&self.binv[k * m..(k + 1) * m], &r);
            self.x[self.basis[k]] = v;
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for k in 0..m {
            let cb = cost[self.basis[k]];
            if cb != 0.0 {
                for (yi, bi) in y.iter_mut().zip(&self.binv[k * m..(k + 1) * m]) {
                    *yi += cb * bi;
                }
            }
        }
        y
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let a = self.col(j);
        (0..m).map(|k| dot(&self.binv[k * m..(k + 1) * m], a)).collect()
    }

    fn pivot(&mut self, r: usize, w: &[f64]) {
        let m = self.m;
        let pr = w[r];
        let row_r: Vec<f64> = self.binv[r * m..(r + 1) * m].iter().map(|v| v / pr).collect();
        for i in 0..m {
            if i == r || w[i] == 0.0 {
                continue;
            }
            let f = w[i];
            for (dst, src) in self.binv[i * m..(i + 1) * m].iter_mut().zip(&row_r) {
                *dst -= f * src;
            }
        }
        self.binv[r * m..(r + 1) * m].copy_from_slice(&row_r);
        self.since_refactor += 1;
    }

    fn tick(&mut self) -> Result<()> {
        self.iterations += 1;
        if self.iterations > self.iteration_cap {
            return Err(KernelError::Stalled { iterations: self.iterations });
        }
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    fn primal(&mut self, cost: &[f64]) -> Result<PrimalOutcome> {
        let m = self.m;
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            self.tick()?;
            let y = self.duals(cost);
            let mut entering: Option<(usize, f64)> = None;
            let mut best_score = 0.0;
            for j in 0..self.n_cols {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = cost[j] - dot(&y, self.col(j));
                let tol = OPT_TOL * (1.0 + cost[j].abs());
                let eligible = match st {
                    VarStatus::Lower => d < -tol,
                    VarStatus::Upper => d > tol,
                    VarStatus::Zero => d.abs() > tol,
                    VarStatus::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    entering = Some((j, d));
                }
            }
            let Some((q, d)) = entering else {
                return Ok(PrimalOutcome::Optimal);
            };
            let dir = if d < 0.0 { 1.0 } else { -1.0 };
            let w = self.ftran(q);
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            for k in 0..m {
                if w[k].abs() <= PIVOT_TOL {
                    continue;
                }
                let var = self.basis[k];
                let alpha = dir * w[k];
                let t = if alpha > 0.0 {
                    if !self.lo[var].is_finite() {
                        continue;
                    }
                    (self.x[var] - self.lo[var]).max(0.0) / alpha
                } else {
                    if !self.hi[var].is_finite() {
                        continue;
                    }
                    (self.hi[var] - self.x[var]).max(0.0) / (-alpha)
                };
                let better = if t < theta - 1e-12 {
                    true
                } else if t <= theta + 1e-12 {
                    match leave {
                        Some(l) if bland => var < self.basis[l],
                        Some(l) => w[k].abs() > w[l].abs(),
                        None => false,
                    }
                } else {
                    false
                };
                if better {
                    theta = t.min(theta);
                    leave = Some(k);
                }
            }
            if !theta.is_finite() {
                return Ok(PrimalOutcome::Unbounded);
            }
            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERACY_TRIP {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            let step = dir * theta;
            self.x[q] += step;
            for k in 0..m {
                if w[k] != 0.0 {
                    let var = self.basis[k];
                    self.x[var] -= step * w[k];
                }
            }
            match leave {
                None => {
                    self.status[q] = if dir > 0.0 { VarStatus::Upper } else { VarStatus::Lower };
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let out = self.basis[r];
                    if dir * w[r] > 0.0 {
                        self.x[out] = self.lo[out];
                        self.status[out] = VarStatus::Lower;
                    } else {
                        self.x[out] = self.hi[out];
                        self.status[out] = VarStatus::Upper;
                    }
                    self.basis[r] = q;
                    self.status[q] = VarStatus::Basic;
                    self.pivot(r, &w);
                }
            }
        }
    }

    fn dual(&mut self) -> Result<DualOutcome> {
        let m = self.m;
        let mut stall = 0usize;
        loop {
            self.tick()?;
            let mut leave: Option<(usize, f64)> = None;
            let mut worst = 0.0;
            for k in 0..m {
                let var = self.basis[k];
                let v = self.x[var];
                let tol = FEAS_TOL * (1.0 + v.abs());
                let viol = if v < self.lo[var] - tol {
                    self.lo[var] - v
                } else if v > self.hi[var] + tol {
                    v - self.hi[var]
                } else {
                    continue;
                };
                let pick = if stall > DEGENERACY_TRIP {
                    leave.is_none_or(|(l, _)| var < self.basis[l])
                } else {
                    viol > worst
                };
                if pick {
                    worst = viol;
                    let target = if v < self.lo[var] { self.lo[var] } else { self.hi[var] };
                    leave = Some((k, target));
                }
            }
            let Some((r, target)) = leave else {
                return Ok(DualOutcome::Optimal);
            };
            let p = self.basis[r];
            let increase = target > self.x[p];
            let rho: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let y = self.duals(&self.cost.clone());
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..self.n_cols {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let alpha = dot(&rho, self.col(j));
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let ok = match (st, increase) {
                    (VarStatus::Lower, true) => alpha < 0.0,
                    (VarStatus::Upper, true) => alpha > 0.0,
                    (VarStatus::Lower, false) => alpha > 0.0,
                    (VarStatus::Upper, false) => alpha < 0.0,
                    (VarStatus::Zero, _) => true,
                    (VarStatus::Basic, _) => false,
                };
                if !ok {
                    continue;
                }
                let d = self.cost[j] - dot(&y, self.col(j));
                let ratio = d.abs() / alpha.abs();
                let better = match best {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && alpha.abs() > ba),
                };
                if better {
                    best = Some((j, ratio, alpha.abs()));
                }
            }
            let Some((q, ratio, _)) = best else {
                return Ok(DualOutcome::Infeasible);
            };
            if ratio <= 1e-12 {
                stall += 1;
            } else {
                stall = 0;
            }
            let w = self.ftran(q);
            if w[r].abs() <= PIVOT_TOL {
                self.refactor()?;
                continue;
            }
            let dq = (self.x[p] - target) / w[r];
            self.x[q] += dq;
            for k in 0..m {
                if w[k] != 0.0 {
                    let var = self.basis[k];
                    self.x[var] -= dq * w[k];
                }
            }
            self.x[p] = target;
            self.status[p] = if target == self.lo[p] { VarStatus::Lower } else { VarStatus::Upper };
            self.basis[r] = q;
            self.status[q] = VarStatus::Basic;
            self.pivot(r, &w);
        }
    }

    pub(crate) fn solution(&self, status: LpStatus) -> LpSolution {
        let n = self.n_struct;
        if status != LpStatus::Optimal {
            return LpSolution::empty(status, n);
        }
        let y = self.duals(&self.cost);
        let x = self.x[..n].to_vec();
        let reduced_costs = (0..n).map(|j| self.cost[j] - dot(&y, self.col(j))).collect();
        LpSolution {
            status,
            objective: dot(&self.cost[..n], &x),
            x,
            eq_duals: y[..self.n_eq].to_vec(),
            ge_duals: y[self.n_eq..].to_vec(),
            reduced_costs,
        }
    }

    pub(crate) fn value(&self, j: usize) -> f64 {
        self.x[j]
    }

    pub(crate) fn objective(&self) -> f64 {
        dot(&self.cost[..self.n_struct], &self.x[..self.n_struct])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn covering_row() {
        let mut lp = LinearProgram::new();
        let a = lp.add_var(1.0, 0.0, INF);
        let b = lp.add_var(1.0, 0.0, INF);
        lp.add_ge(vec![(a, 1.0), (b, 1.0)], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
        assert!((s.ge_duals[0] - 1.0).abs() < 1e-12);
        assert!((s.x[0] + s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bounded_maximization() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-1.0, 0.0, INF);
        lp.add_le(vec![(x, 1.0)], 3.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective + 3.0).abs() < 1e-12);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, 0.0, 1.0);
        lp.add_ge(vec![(x, 1.0)], 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-1.0, f64::NEG_INFINITY, INF);
        let y = lp.add_var(0.0, 0.0, INF);
        lp.add_ge(vec![(x, 1.0), (y, -1.0)], 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |x - 2| via epigraph, x free
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, f64::NEG_INFINITY, INF);
        let t = lp.add_var(1.0, f64::NEG_INFINITY, INF);
        lp.add_ge(vec![(t, 1.0), (x, -1.0)], -2.0);
        lp.add_ge(vec![(t, 1.0), (x, 1.0)], 2.0);
        let z = lp.add_var(0.0, f64::NEG_INFINITY, INF);
        lp.add_eq(vec![(z, 1.0), (x, -1.0)], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[x] - 2.0).abs() < 1e-9);
        assert!((s.x[z] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_row_is_handled() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, 5.0);
        lp.add_eq(vec![], 0.0);
        lp.add_ge(vec![(x, 1.0)], 2.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
        let mut bad = LinearProgram::new();
        bad.add_var(0.0, 0.0, 1.0);
        bad.add_eq(vec![], 1.0);
        assert_eq!(solve_lp(&bad).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn rejects_crossed_bounds() {
        let mut lp = LinearProgram::new();
        lp.add_var(0.0, 2.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(KernelError::Malformed(_))));
    }
}
