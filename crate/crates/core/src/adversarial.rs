//! Worst-case recourse `Q(xhat) = max_u [sum_t d_t'P_t u^t + min_y f'y]` and
//! recourse feasibility, both through KKT conditions of the stage LPs with
//! big-M complementarity, plus the cuts built from their duals.
//!
//! Two pieces of per-stage structure are computed once per problem:
//!
//! * the vertices of `{W'phi + G'pi = f, pi >= 0}`. Every stage LP has an
//!   optimal dual among them, so their coordinate maxima are exact dual
//!   bounds, and rows whose multiplier vanishes at every vertex need no
//!   complementarity binary;
//! * the extreme rays of `{W'phi + G'pi = 0, pi >= 0}`. A stage is feasible
//!   at `(xhat, u)` iff every ray has `phi'rhs_eq + pi'rhs_in <= 0`, so the
//!   domain test is one LP over U per ray.

use log::{debug, warn};
use msro_optkernel::{
    solve_lp, solve_milp, KernelError, LinearProgram, LpStatus, MipOptions, MipStatus, MixedIntegerProgram, SparseRow,
};
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::model::{dot, Matrix};
use crate::transform::{dense_row, Recourse, StageSolution, TransformError, TwoStageProblem};

/// `(phi, pi)` of one stage LP.
pub type StageDuals = (Vec<f64>, Vec<f64>);

#[derive(Debug, Error)]
pub enum AdversarialError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("recourse infeasible at the worst-case scenario (stage {stage})")]
    InfeasibleAtWorstCase { stage: usize },
    #[error("worst-case MILP is {0:?}")]
    Status(MipStatus),
    #[error("stage {stage} dual polyhedron is empty: recourse is unbounded below")]
    UnboundedStage { stage: usize },
}

pub type Result<T> = std::result::Result<T, AdversarialError>;

#[derive(Clone, Debug)]
pub struct AdversarialConfig {
    /// Cap on `|phi|` and `pi` when vertex bounds are unavailable.
    pub dual_cap: f64,
    /// Primal big-M used when interval propagation leaves a slack unbounded.
    pub fallback_m: f64,
    /// Multiplies every big-M; 1 in normal use.
    pub m_scale: f64,
    pub mip: MipOptions,
    /// `omega` above this is treated as infeasible recourse.
    pub feas_tol: f64,
    /// Subset-count limit for the dual vertex and ray enumerations.
    pub enum_limit: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            dual_cap: 1e4,
            fallback_m: 1e6,
            m_scale: 1.0,
            // big-M times integrality_tol is the complementarity leak; a
            // loose gap makes cuts eps-subgradients at the query point
            mip: MipOptions { gap_tol: 1e-9, node_limit: 200_000, integrality_tol: 1e-9, ..MipOptions::default() },
            feas_tol: 1e-6,
            enum_limit: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutKind {
    Optimality,
    Feasibility,
}

/// Affine minorant `value + grad'(v - point)` of F (optimality) or of a
/// function that is nonpositive on dom F (feasibility).
#[derive(Clone, Debug)]
pub struct Cut {
    pub kind: CutKind,
    pub point: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Scenario that generated the cut.
    pub u: Vec<f64>,
    /// Set when the generating MILP stopped before proving optimality.
    pub inexact: bool,
}

impl Cut {
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.value + self.grad.iter().zip(v.iter().zip(&self.point)).map(|(g, (a, b))| g * (a - b)).sum::<f64>()
    }
}

// ---------------------------------------------------------------- structure

/// Per-stage dual bounds and Farkas rays.
#[derive(Clone, Debug)]
pub struct StageStructure {
    /// Max of `pi_i` over dual vertices; `None` when the dual polyhedron has
    /// no vertex or enumeration was cut short.
    pub pi_max: Option<Vec<f64>>,
    pub phi_max: Option<f64>,
    /// The dual vertices `(phi, pi)` themselves, when enumerated.
    pub vertices: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Extreme rays `(phi, pi)` scaled to unit max-norm; `None` if unavailable.
    pub rays: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

/// Eigen-decomposition based null space of `m` (rows x cols).
fn null_space(m: &DMatrix<f64>) -> (usize, Vec<Vec<f64>>) {
    let k = m.ncols();
    if k == 0 {
        return (0, Vec::new());
    }
    let gram = m.transpose() * m;
    let scale = gram.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let eig = SymmetricEigen::new(gram);
    let mut null = Vec::new();
    for i in 0..k {
        if eig.eigenvalues[i].abs() <= 1e-10 * scale {
            null.push(eig.eigenvectors.column(i).iter().copied().collect());
        }
    }
    (k - null.len(), null)
}

fn for_each_subset(n: usize, max_size: usize, limit: usize, mut f: impl FnMut(&[usize])) -> bool {
    let mut count = 0usize;
    for size in 0..=max_size.min(n) {
        let mut s: Vec<usize> = (0..size).collect();
        loop {
            count += 1;
            if count > limit {
                return false;
            }
            f(&s);
            if !msro_optkernel::brute::next_combination(&mut s, n) {
                break;
            }
        }
    }
    true
}

fn stage_structure(w: &Matrix, g: &Matrix, f: &[f64], limit: usize) -> StageStructure {
    let n_eq = w.rows;
    let n_in = g.rows;
    let n_y = w.cols;
    let column = |k: usize, sub: &[usize]| -> Vec<f64> {
        if k < n_eq {
            w.row(k).to_vec()
        } else {
            g.row(sub[k - n_eq]).to_vec()
        }
    };
    let build = |sub: &[usize]| -> DMatrix<f64> {
        let k = n_eq + sub.len();
        let mut m = DMatrix::zeros(n_y, k);
        for c in 0..k {
            for (r, v) in column(c, sub).into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        m
    };
    let (w_rank, _) = null_space(&build(&[]));
    if w_rank < n_eq {
        debug!("equality rows are dependent; using capped duals and the FP MILP");
        return StageStructure { pi_max: None, phi_max: None, vertices: None, rays: None };
    }
    // candidate rows: nonzero G rows only can carry a dual vertex or ray
    // with phi; zero rows give the trivial ray e_i.
    let rows: Vec<usize> = (0..n_in).collect();

    let mut pi_max = vec![0.0f64; n_in];
    let mut phi_max = 0.0f64;
    let mut vertices: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let fv = nalgebra::DVector::from_column_slice(f);
    let vertex_ok = for_each_subset(rows.len(), n_y.saturating_sub(n_eq), limit, |sub| {
        let sub: Vec<usize> = sub.iter().map(|&i| rows[i]).collect();
        let m = build(&sub);
        let (rank, _) = null_space(&m);
        if rank < m.ncols() {
            return;
        }
        // full column rank, so the normal equations are nonsingular
        let z = if m.ncols() == 0 {
            nalgebra::DVector::zeros(0)
        } else {
            match (m.transpose() * &m).lu().solve(&(m.transpose() * &fv)) {
                Some(z) => z,
                None => return,
            }
        };
        let resid = (&m * &z - &fv).amax();
        if resid > 1e-8 * (1.0 + fv.amax()) {
            return;
        }
        if (0..sub.len()).any(|k| z[n_eq + k] < -1e-9) {
            return;
        }
        let mut pi = vec![0.0; n_in];
        for (k, &i) in sub.iter().enumerate() {
            pi[i] = z[n_eq + k].max(0.0);
        }
        vertices.push(((0..n_eq).map(|j| z[j]).collect(), pi));
        for j in 0..n_eq {
            phi_max = phi_max.max(z[j].abs());
        }
        for (k, &i) in sub.iter().enumerate() {
            pi_max[i] = pi_max[i].max(z[n_eq + k]);
        }
    });

    let mut rays: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let rays_ok = for_each_subset(rows.len(), n_y + 1 - n_eq.min(n_y + 1), limit, |sub| {
        if sub.is_empty() {
            return;
        }
        let sub: Vec<usize> = sub.iter().map(|&i| rows[i]).collect();
        let m = build(&sub);
        let (_, null) = null_space(&m);
        if null.len() != 1 {
            return;
        }
        let mut v = null[0].clone();
        let pi_part = &v[n_eq..];
        let sign = if pi_part.iter().all(|x| *x > 1e-9) {
            1.0
        } else if pi_part.iter().all(|x| *x < -1e-9) {
            -1.0
        } else {
            return;
        };
        let norm = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for x in &mut v {
            *x *= sign / norm;
            if x.abs() < 1e-12 {
                *x = 0.0;
            }
        }
        let phi = v[..n_eq].to_vec();
        let mut pi = vec![0.0; n_in];
        for (k, &i) in sub.iter().enumerate() {
            pi[i] = v[n_eq + k];
        }
        let dup = rays.iter().any(|(p, q)| {
            p.iter().zip(&phi).chain(q.iter().zip(&pi)).all(|(a, b)| (a - b).abs() <= 1e-9)
        });
        if !dup {
            rays.push((phi, pi));
        }
    });

    StageStructure {
        pi_max: (vertex_ok && !vertices.is_empty()).then_some(pi_max),
        phi_max: (vertex_ok && !vertices.is_empty()).then_some(phi_max),
        vertices: (vertex_ok && !vertices.is_empty()).then_some(vertices),
        rays: rays_ok.then_some(rays),
    }
}

// ---------------------------------------------------------------- big-M

/// Big-M values for one query point.
#[derive(Clone, Debug)]
pub struct BigM {
    /// Per stage, per inequality row: bound on `pi_i`; 0 means the row
    /// carries no complementarity binary.
    pub dual: Vec<Vec<f64>>,
    /// Per stage bound on `|phi|`.
    pub phi: Vec<f64>,
    /// Per stage, per inequality row: bound on the row slack.
    pub primal: Vec<Vec<f64>>,
    /// Per stage bounds on `y`.
    pub y_bounds: Vec<Vec<(f64, f64)>>,
    /// Some bound fell back to a default constant.
    pub fallback: bool,
    /// Some dual bound came from the cap rather than vertex enumeration.
    pub capped_duals: bool,
}

/// Range of `r_i - K_i u` over the box of U.
fn rhs_range(r: f64, k: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (r, r);
    for c in 0..k.len() {
        let v = -k[c];
        if v > 0.0 {
            a += v * lo[c];
            b += v * hi[c];
        } else if v < 0.0 {
            a += v * hi[c];
            b += v * lo[c];
        }
    }
    (a, b)
}

fn term_range(coef: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    if coef == 0.0 {
        (0.0, 0.0)
    } else if coef > 0.0 {
        (coef * lo, coef * hi)
    } else {
        (coef * hi, coef * lo)
    }
}

/// Interval propagation of `W y = rhs_eq`, `G y >= rhs_in` with rhs ranges,
/// optionally with a cost cap `f'y <= cap` that every optimal `y` meets.
pub fn propagate_y_bounds(
    w: &Matrix,
    eq: &[(f64, f64)],
    g: &Matrix,
    ineq: &[(f64, f64)],
    cost_cap: Option<(&[f64], f64)>,
) -> Vec<(f64, f64)> {
    let n = w.cols;
    let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
    // each row as (coeffs, lower bound on row activity, upper bound)
    let mut rows: Vec<(&[f64], f64, f64)> = Vec::new();
    for i in 0..w.rows {
        rows.push((w.row(i), eq[i].0, eq[i].1));
    }
    for i in 0..g.rows {
        rows.push((g.row(i), ineq[i].0, f64::INFINITY));
    }
    if let Some((f, cap)) = cost_cap {
        rows.push((f, f64::NEG_INFINITY, cap));
    }
    for _ in 0..20 {
        let mut changed = false;
        for &(a, need_lo, need_hi) in &rows {
            for j in 0..n {
                if a[j] == 0.0 {
                    continue;
                }
                // activity of the other terms
                let (mut olo, mut ohi) = (0.0, 0.0);
                for k in 0..n {
                    if k != j {
                        let (l, h) = term_range(a[k], b[k]);
                        olo += l;
                        ohi += h;
                    }
                }
                // a_j y_j in [need_lo - ohi, need_hi - olo]
                let lo_t = need_lo - ohi;
                let hi_t = need_hi - olo;
                let (nl, nh) = if a[j] > 0.0 { (lo_t / a[j], hi_t / a[j]) } else { (hi_t / a[j], lo_t / a[j]) };
                if nl.is_finite() && nl > b[j].0 + 1e-9 * (1.0 + nl.abs()) {
                    b[j].0 = nl;
                    changed = true;
                }
                if nh.is_finite() && nh < b[j].1 - 1e-9 * (1.0 + nh.abs()) {
                    b[j].1 = nh;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // rounding can cross the ends; the rows still hold, so widening is safe
    for v in &mut b {
        if v.0 > v.1 {
            *v = (v.1, v.0);
        }
    }
    b
}

// ---------------------------------------------------------------- results

#[derive(Clone, Debug)]
pub struct AdversarialResult {
    pub u: Vec<f64>,
    /// `Q(xhat)` re-evaluated at `u` by the stage LPs.
    pub value: f64,
    /// Objective of the MILP incumbent.
    pub mip_value: f64,
    pub mip_bound: f64,
    pub stages: Vec<StageSolution>,
    /// Complementarity pattern of the MILP incumbent, per stage and row.
    pub pattern: Vec<Vec<bool>>,
    pub inexact: bool,
    pub big_m_warning: bool,
    pub nodes: usize,
}

#[derive(Clone, Debug)]
pub struct FeasibilityResult {
    pub omega: f64,
    pub u: Vec<f64>,
    /// Slack-LP multipliers at `u` per stage: `(phi, pi)`.
    pub duals: Vec<(Vec<f64>, Vec<f64>)>,
    pub inexact: bool,
}

/// Outcome of the domain test at one point.
#[derive(Clone, Debug)]
pub enum Domain {
    Feasible,
    /// One violated ray per entry; each yields a feasibility cut.
    Infeasible(Vec<Cut>),
}

// ---------------------------------------------------------------- adversary

pub struct Adversary<'a> {
    pub ts: &'a TwoStageProblem,
    pub cfg: AdversarialConfig,
    pub structure: Vec<StageStructure>,
}

/// SUP variable offsets.
#[derive(Clone, Debug)]
pub struct SupLayout {
    pub u: usize,
    pub y: Vec<usize>,
    pub phi: Vec<usize>,
    /// Per stage, per inequality row: `(pi, w)` variable indices when the row
    /// carries complementarity.
    pub pi: Vec<Vec<Option<(usize, usize)>>>,
}

impl<'a> Adversary<'a> {
    pub fn new(ts: &'a TwoStageProblem, cfg: AdversarialConfig) -> Result<Self> {
        let mut structure = Vec::new();
        for (t, st) in ts.inst.stages.iter().enumerate() {
            let s = stage_structure(&st.w, &st.g, &st.f, cfg.enum_limit);
            if s.pi_max.is_none() && s.phi_max.is_none() && s.rays.is_some() {
                // rays computed but no dual vertex: the dual polyhedron is
                // empty, so every feasible stage LP is unbounded.
                return Err(AdversarialError::UnboundedStage { stage: t });
            }
            structure.push(s);
        }
        Ok(Self { ts, cfg, structure })
    }

    fn u_box(&self) -> (&[f64], &[f64]) {
        (&self.ts.inst.u.lo, &self.ts.inst.u.hi)
    }

    /// Dual bounds, slack bounds and y bounds at `xhat`.
    pub fn choose_big_m(&self, xhat: &[f64]) -> BigM {
        let ts = self.ts;
        let (lo, hi) = self.u_box();
        let mut out = BigM {
            dual: Vec::new(),
            phi: Vec::new(),
            primal: Vec::new(),
            y_bounds: Vec::new(),
            fallback: false,
            capped_duals: false,
        };
        let scale = self.cfg.m_scale;
        for t in 0..ts.horizon() {
            let st = &ts.inst.stages[t];
            let ru = ts.rows_in_u(t, xhat);
            let eq: Vec<(f64, f64)> = (0..st.n_eq()).map(|i| rhs_range(ru.r_eq[i], ru.k_eq.row(i), lo, hi)).collect();
            let ineq: Vec<(f64, f64)> = (0..st.n_in()).map(|i| rhs_range(ru.r_in[i], ru.k_in.row(i), lo, hi)).collect();
            let cap = self.structure[t].vertices.as_ref().map(|vs| {
                vs.iter()
                    .map(|(phi, pi)| {
                        let a: f64 = phi.iter().zip(&eq).map(|(p, r)| if *p > 0.0 { p * r.1 } else { p * r.0 }).sum();
                        let b: f64 = pi.iter().zip(&ineq).map(|(p, r)| if *p > 0.0 { p * r.1 } else { 0.0 }).sum();
                        a + b
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let yb = propagate_y_bounds(&st.w, &eq, &st.g, &ineq, cap.map(|c| (st.f.as_slice(), c + 1e-9 * (1.0 + c.abs()))));
            let mut primal = Vec::with_capacity(st.n_in());
            for i in 0..st.n_in() {
                let mut ub = -ineq[i].0;
                for j in 0..st.n_y {
                    ub += term_range(st.g.get(i, j), yb[j]).1;
                }
                if ub.is_finite() {
                    primal.push(scale * ub.max(0.0));
                } else {
                    out.fallback = true;
                    primal.push(scale * self.cfg.fallback_m);
                }
            }
            let s = &self.structure[t];
            match (&s.pi_max, s.phi_max) {
                (Some(pm), Some(fm)) => {
                    out.dual.push(pm.iter().map(|&b| if b > 0.0 { scale * (b * (1.0 + 1e-6) + 1e-9) } else { 0.0 }).collect());
                    out.phi.push(scale * (fm * (1.0 + 1e-6) + 1e-9));
                }
                _ => {
                    out.capped_duals = true;
                    out.dual.push(
                        (0..st.n_in())
                            .map(|i| if st.g.row(i).iter().any(|v| *v != 0.0) { scale * self.cfg.dual_cap } else { 0.0 })
                            .collect(),
                    );
                    out.phi.push(scale * self.cfg.dual_cap);
                }
            }
            out.primal.push(primal);
            out.y_bounds.push(yb);
        }
        out
    }

    /// KKT/big-M MILP of the worst-case recourse (minimizes the negated value).
    pub fn build_sup(&self, xhat: &[f64], bm: &BigM) -> (MixedIntegerProgram, SupLayout) {
        let ts = self.ts;
        let inst = &ts.inst;
        let n_u = ts.n_u();
        let mut lp = LinearProgram::new();
        let obj_u = ts.uncertain_objective(xhat);
        let u0 = lp.num_vars();
        for c in 0..n_u {
            lp.add_var(-obj_u[c], inst.u.lo[c], inst.u.hi[c]);
        }
        for i in 0..inst.u.d.rows {
            lp.add_le(dense_row(inst.u.d.row(i), u0), inst.u.e[i]);
        }
        let mut binaries = Vec::new();
        let mut lay = SupLayout { u: u0, y: Vec::new(), phi: Vec::new(), pi: Vec::new() };
        for t in 0..ts.horizon() {
            let st = &inst.stages[t];
            let ru = ts.rows_in_u(t, xhat);
            let y0 = lp.num_vars();
            for j in 0..st.n_y {
                let (l, h) = bm.y_bounds[t][j];
                lp.add_var(-st.f[j], l, h);
            }
            let phi0 = lp.add_vars(st.n_eq(), -bm.phi[t], bm.phi[t]);
            let mut pis = Vec::with_capacity(st.n_in());
            for i in 0..st.n_in() {
                if bm.dual[t][i] > 0.0 {
                    let p = lp.add_var(0.0, 0.0, bm.dual[t][i]);
                    let w = lp.add_var(0.0, 0.0, 1.0);
                    binaries.push(w);
                    pis.push(Some((p, w)));
                } else {
                    pis.push(None);
                }
            }
            // primal rows: W y + K u = r, G y + K u >= r
            for i in 0..st.n_eq() {
                let mut row = dense_row(st.w.row(i), y0);
                row.extend(dense_row(ru.k_eq.row(i), u0));
                lp.add_eq(row, ru.r_eq[i]);
            }
            for i in 0..st.n_in() {
                let mut row = dense_row(st.g.row(i), y0);
                row.extend(dense_row(ru.k_in.row(i), u0));
                lp.add_ge(row.clone(), ru.r_in[i]);
                if let Some((p, w)) = pis[i] {
                    // pi <= M_d w
                    lp.add_ge(vec![(w, bm.dual[t][i]), (p, -1.0)], 0.0);
                    // slack <= M_p (1 - w)
                    let mp = bm.primal[t][i];
                    let mut r2: SparseRow = row.iter().map(|&(j, v)| (j, -v)).collect();
                    r2.push((w, -mp));
                    lp.add_ge(r2, -ru.r_in[i] - mp);
                }
            }
            // stationarity: W'phi + G'pi = f
            for j in 0..st.n_y {
                let mut row: SparseRow = Vec::new();
                for i in 0..st.n_eq() {
                    let v = st.w.get(i, j);
                    if v != 0.0 {
                        row.push((phi0 + i, v));
                    }
                }
                for (i, pw) in pis.iter().enumerate() {
                    if let Some((p, _)) = pw {
                        let v = st.g.get(i, j);
                        if v != 0.0 {
                            row.push((*p, v));
                        }
                    }
                }
                lp.add_eq(row, st.f[j]);
            }
            lay.y.push(y0);
            lay.phi.push(phi0);
            lay.pi.push(pis);
        }
        (MixedIntegerProgram { lp, binaries }, lay)
    }

    /// MILP vector of the KKT point at `u` (for warm incumbents).
    fn kkt_point(&self, xhat: &[f64], u: &[f64], bm: &BigM, lay: &SupLayout, n: usize) -> Option<Vec<f64>> {
        let ts = self.ts;
        let Ok(Recourse::Feasible { stages, .. }) = ts.recourse(xhat, u) else { return None };
        let mut v = vec![0.0; n];
        v[lay.u..lay.u + u.len()].copy_from_slice(u);
        for t in 0..ts.horizon() {
            let s = &stages[t];
            for (j, &y) in s.y.iter().enumerate() {
                let (l, h) = bm.y_bounds[t][j];
                v[lay.y[t] + j] = y.clamp(l, h);
            }
            for (i, &p) in s.phi.iter().enumerate() {
                v[lay.phi[t] + i] = p;
            }
            for (i, pw) in lay.pi[t].iter().enumerate() {
                match pw {
                    Some((p, w)) => {
                        v[*p] = s.pi[i].max(0.0);
                        v[*w] = if s.pi[i] > 1e-12 { 1.0 } else { 0.0 };
                    }
                    None if s.pi[i] > 1e-9 => return None,
                    None => {}
                }
            }
        }
        Some(v)
    }

    /// Solves SUP at `xhat` (assumed in dom F). `hints` are candidate
    /// scenarios used to seed the incumbent.
    pub fn solve_worst_case(&self, xhat: &[f64], hints: &[Vec<f64>]) -> Result<AdversarialResult> {
        let bm = self.choose_big_m(xhat);
        self.solve_worst_case_with(xhat, &bm, hints)
    }

    pub fn solve_worst_case_with(&self, xhat: &[f64], bm: &BigM, hints: &[Vec<f64>]) -> Result<AdversarialResult> {
        let ts = self.ts;
        let (mip, lay) = self.build_sup(xhat, bm);
        let n = mip.lp.num_vars();
        let mut opts = self.cfg.mip.clone();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for h in hints {
            if let Some(v) = self.kkt_point(xhat, h, bm, &lay, n) {
                if mip.lp.max_violation(&v) <= 1e-7 {
                    let val = mip.lp.evaluate(&v);
                    if best.as_ref().is_none_or(|b| val < b.0) {
                        best = Some((val, v));
                    }
                }
            }
        }
        opts.incumbent = best.map(|b| b.1);
        let (x, mip_value, mip_bound, nodes, inexact) = match solve_milp(&mip, &opts) {
            Ok(s) => match s.status {
                MipStatus::Optimal => (s.x, -s.objective, -s.bound, s.nodes, false),
                other => return Err(AdversarialError::Status(other)),
            },
            Err(KernelError::NodeLimit { bound, incumbent: Some(inc), incumbent_x: Some(x), limit }) => {
                warn!("worst-case MILP hit node limit {limit}; using incumbent {inc} (bound {bound})");
                (x, -inc, -bound, limit, true)
            }
            Err(e) => return Err(e.into()),
        };
        let u: Vec<f64> = x[lay.u..lay.u + ts.n_u()].to_vec();
        let u = project_into_box(&u, &ts.inst.u.lo, &ts.inst.u.hi);
        let (value, stages) = match ts.recourse(xhat, &u)? {
            Recourse::Feasible { value, stages } => (value + dot(&ts.uncertain_objective(xhat), &u), stages),
            Recourse::Infeasible { stage } => return Err(AdversarialError::InfeasibleAtWorstCase { stage }),
        };
        let mut warn_m = bm.fallback;
        let mut pattern = Vec::new();
        for t in 0..ts.horizon() {
            let st = &ts.inst.stages[t];
            let ru = ts.rows_in_u(t, xhat);
            let mut pt = Vec::new();
            for (i, pw) in lay.pi[t].iter().enumerate() {
                let Some((p, w)) = pw else {
                    pt.push(false);
                    continue;
                };
                pt.push(x[*w] > 0.5);
                let slack = dot(st.g.row(i), &x[lay.y[t]..lay.y[t] + st.n_y])
                    + dot(ru.k_in.row(i), &x[lay.u..lay.u + ts.n_u()])
                    - ru.r_in[i];
                if bm.capped_duals && x[*p] >= (1.0 - 1e-3) * bm.dual[t][i] {
                    warn_m = true;
                }
                if bm.fallback && slack >= (1.0 - 1e-3) * bm.primal[t][i] {
                    warn_m = true;
                }
            }
            pattern.push(pt);
        }
        if warn_m {
            debug!("big-M validation flagged a bound at or near its limit");
        }
        Ok(AdversarialResult {
            u,
            value,
            mip_value,
            mip_bound,
            stages,
            pattern,
            inexact,
            big_m_warning: warn_m,
            nodes,
        })
    }

    /// Optimality cut at `xhat` from a worst-case result.
    pub fn optimality_cut(&self, xhat: &[f64], res: &AdversarialResult) -> Cut {
        let ts = self.ts;
        let mut grad = ts.objective_gradient(&res.u);
        for t in 0..ts.horizon() {
            let cp = ts.coupling(t, &res.u);
            let a = cp.c_eq.tr_mul_vec(&res.stages[t].phi);
            let b = cp.c_in.tr_mul_vec(&res.stages[t].pi);
            for k in 0..grad.len() {
                grad[k] -= a[k] + b[k];
            }
        }
        Cut {
            kind: CutKind::Optimality,
            point: xhat.to_vec(),
            value: ts.first_stage_value(xhat) + res.value,
            grad,
            u: res.u.clone(),
            inexact: res.inexact,
        }
    }

    /// Domain test through the Farkas rays; falls back to the FP MILP for
    /// stages without a ray description.
    pub fn domain(&self, xhat: &[f64]) -> Result<Domain> {
        let ts = self.ts;
        if self.structure.iter().any(|s| s.rays.is_none()) {
            let fr = self.feasibility_value(xhat)?;
            return Ok(if fr.omega > self.cfg.feas_tol {
                Domain::Infeasible(vec![self.feasibility_cut(xhat, &fr)])
            } else {
                Domain::Feasible
            });
        }
        let inst = &ts.inst;
        let mut cuts = Vec::new();
        for t in 0..ts.horizon() {
            let rays = self.structure[t].rays.as_ref().expect("checked above");
            if rays.is_empty() {
                continue;
            }
            let ru = ts.rows_in_u(t, xhat);
            for (phi, pi) in rays {
                // max_u phi'(r_eq - K_eq u) + pi'(r_in - K_in u)
                let konst = dot(phi, &ru.r_eq) + dot(pi, &ru.r_in);
                let ku_e = ru.k_eq.tr_mul_vec(phi);
                let ku_i = ru.k_in.tr_mul_vec(pi);
                let mut lp = LinearProgram::new();
                for c in 0..ts.n_u() {
                    lp.add_var(ku_e[c] + ku_i[c], inst.u.lo[c], inst.u.hi[c]);
                }
                for i in 0..inst.u.d.rows {
                    lp.add_le(dense_row(inst.u.d.row(i), 0), inst.u.e[i]);
                }
                let sol = solve_lp(&lp)?;
                if sol.status != LpStatus::Optimal {
                    return Err(AdversarialError::Kernel(KernelError::Malformed(format!("ray LP {:?}", sol.status))));
                }
                let viol = konst - sol.objective;
                if viol > self.cfg.feas_tol {
                    let u = project_into_box(&sol.x, &inst.u.lo, &inst.u.hi);
                    let cp = ts.coupling(t, &u);
                    let a = cp.c_eq.tr_mul_vec(phi);
                    let b = cp.c_in.tr_mul_vec(pi);
                    let grad: Vec<f64> = a.iter().zip(&b).map(|(p, q)| -(p + q)).collect();
                    let value = dot(phi, &cp.b_eq) + dot(pi, &cp.b_in) - dot(phi, &cp.c_eq.mul_vec(xhat)) - dot(pi, &cp.c_in.mul_vec(xhat));
                    cuts.push(Cut { kind: CutKind::Feasibility, point: xhat.to_vec(), value, grad, u, inexact: false });
                }
            }
        }
        Ok(if cuts.is_empty() { Domain::Feasible } else { Domain::Infeasible(cuts) })
    }

    // ------------------------------------------------------------ FP

    /// Slack LP `min 1'a+ + 1'a- + 1'beta` of one stage at `(xhat, u)`.
    pub fn slack_lp(&self, t: usize, rhs_eq: &[f64], rhs_in: &[f64]) -> LinearProgram {
        let st = &self.ts.inst.stages[t];
        let mut lp = LinearProgram::new();
        let y0 = lp.add_vars(st.n_y, f64::NEG_INFINITY, f64::INFINITY);
        let ap = lp.add_vars(st.n_eq(), 0.0, f64::INFINITY);
        let am = lp.add_vars(st.n_eq(), 0.0, f64::INFINITY);
        let be = lp.add_vars(st.n_in(), 0.0, f64::INFINITY);
        for k in ap..lp.num_vars() {
            lp.objective[k] = 1.0;
        }
        for i in 0..st.n_eq() {
            let mut row = dense_row(st.w.row(i), y0);
            row.push((ap + i, 1.0));
            row.push((am + i, -1.0));
            lp.add_eq(row, rhs_eq[i]);
        }
        for i in 0..st.n_in() {
            let mut row = dense_row(st.g.row(i), y0);
            row.push((be + i, 1.0));
            lp.add_ge(row, rhs_in[i]);
        }
        lp
    }

    /// Sum of stage slack-LP values at `(xhat, u)` with their multipliers.
    pub fn slack_value(&self, xhat: &[f64], u: &[f64]) -> Result<(f64, Vec<StageDuals>)> {
        let mut total = 0.0;
        let mut duals = Vec::new();
        for t in 0..self.ts.horizon() {
            let (eq, ge) = self.ts.rhs(t, xhat, u);
            let sol = solve_lp(&self.slack_lp(t, &eq, &ge))?;
            if sol.status != LpStatus::Optimal {
                return Err(AdversarialError::Kernel(KernelError::Malformed(format!("slack LP {:?}", sol.status))));
            }
            total += sol.objective;
            duals.push((sol.eq_duals, sol.ge_duals));
        }
        Ok((total, duals))
    }

    /// KKT/big-M MILP of the feasibility problem. The stage LPs are taken
    /// over a widened propagated box on `y`, which leaves the zero set of
    /// `omega` unchanged.
    pub fn build_fp(&self, xhat: &[f64]) -> (MixedIntegerProgram, usize) {
        let ts = self.ts;
        let inst = &ts.inst;
        let (lo, hi) = self.u_box();
        let n_u = ts.n_u();
        let scale = self.cfg.m_scale;
        let mut lp = LinearProgram::new();
        let u0 = lp.add_vars(n_u, 0.0, 0.0);
        lp.lower[u0..u0 + n_u].copy_from_slice(lo);
        lp.upper[u0..u0 + n_u].copy_from_slice(hi);
        for i in 0..inst.u.d.rows {
            lp.add_le(dense_row(inst.u.d.row(i), u0), inst.u.e[i]);
        }
        let mut binaries = Vec::new();
        // complementarity x <= M z, s <= S (1 - z) with x = row + xc, s = row + sc
        let comp = |lp: &mut LinearProgram, bins: &mut Vec<usize>, x: SparseRow, xc: f64, mx: f64, s: SparseRow, sc: f64, ms: f64| {
            let z = lp.add_var(0.0, 0.0, 1.0);
            bins.push(z);
            // M z - x >= 0
            let mut r1: SparseRow = x.iter().map(|&(j, v)| (j, -v)).collect();
            r1.push((z, mx));
            lp.add_ge(r1, xc);
            // S (1 - z) - s >= 0
            let mut r2: SparseRow = s.iter().map(|&(j, v)| (j, -v)).collect();
            r2.push((z, -ms));
            lp.add_ge(r2, sc - ms);
        };
        for t in 0..ts.horizon() {
            let st = &inst.stages[t];
            let ru = ts.rows_in_u(t, xhat);
            let eqr: Vec<(f64, f64)> = (0..st.n_eq()).map(|i| rhs_range(ru.r_eq[i], ru.k_eq.row(i), lo, hi)).collect();
            let inr: Vec<(f64, f64)> = (0..st.n_in()).map(|i| rhs_range(ru.r_in[i], ru.k_in.row(i), lo, hi)).collect();
            let yb: Vec<(f64, f64)> = propagate_y_bounds(&st.w, &eqr, &st.g, &inr, None)
                .into_iter()
                .map(|(l, h)| {
                    if l.is_finite() && h.is_finite() && l <= h {
                        let w = h - l;
                        (l - w - 1.0, h + w + 1.0)
                    } else {
                        (-self.cfg.fallback_m.sqrt(), self.cfg.fallback_m.sqrt())
                    }
                })
                .collect();
            let y0 = lp.num_vars();
            for &(l, h) in &yb {
                lp.add_var(0.0, l, h);
            }
            let ap = lp.add_vars(st.n_eq(), 0.0, f64::INFINITY);
            let am = lp.add_vars(st.n_eq(), 0.0, f64::INFINITY);
            let be = lp.add_vars(st.n_in(), 0.0, f64::INFINITY);
            for k in ap..lp.num_vars() {
                lp.objective[k] = -1.0;
            }
            let phi = lp.add_vars(st.n_eq(), -1.0, 1.0);
            let pi = lp.add_vars(st.n_in(), 0.0, 1.0);
            let col_abs: Vec<f64> = (0..st.n_y)
                .map(|j| (0..st.n_eq()).map(|i| st.w.get(i, j).abs()).sum::<f64>() + (0..st.n_in()).map(|i| st.g.get(i, j).abs()).sum::<f64>())
                .collect();
            let rlo = lp.num_vars();
            for j in 0..st.n_y {
                lp.add_var(0.0, 0.0, col_abs[j]);
            }
            let rhi = lp.num_vars();
            for j in 0..st.n_y {
                lp.add_var(0.0, 0.0, col_abs[j]);
            }
            let wy_range = |a: &[f64]| -> (f64, f64) {
                a.iter().zip(&yb).fold((0.0, 0.0), |(l, h), (&c, &b)| {
                    let (tl, th) = term_range(c, b);
                    (l + tl, h + th)
                })
            };
            // primal rows
            for i in 0..st.n_eq() {
                let mut row = dense_row(st.w.row(i), y0);
                row.extend(dense_row(ru.k_eq.row(i), u0));
                row.push((ap + i, 1.0));
                row.push((am + i, -1.0));
                lp.add_eq(row, ru.r_eq[i]);
            }
            for i in 0..st.n_in() {
                let mut row = dense_row(st.g.row(i), y0);
                row.extend(dense_row(ru.k_in.row(i), u0));
                row.push((be + i, 1.0));
                lp.add_ge(row, ru.r_in[i]);
            }
            // stationarity in y: W'phi + G'pi + rho_lo - rho_hi = 0
            for j in 0..st.n_y {
                let mut row: SparseRow = Vec::new();
                for i in 0..st.n_eq() {
                    if st.w.get(i, j) != 0.0 {
                        row.push((phi + i, st.w.get(i, j)));
                    }
                }
                for i in 0..st.n_in() {
                    if st.g.get(i, j) != 0.0 {
                        row.push((pi + i, st.g.get(i, j)));
                    }
                }
                row.push((rlo + j, 1.0));
                row.push((rhi + j, -1.0));
                lp.add_eq(row, 0.0);
            }
            for i in 0..st.n_eq() {
                let (wl, wh) = wy_range(st.w.row(i));
                let m_a = scale * (eqr[i].1 - wl).max(wh - eqr[i].0).max(0.0);
                // a+ (1 - phi) = 0, a- (1 + phi) = 0
                comp(&mut lp, &mut binaries, vec![(ap + i, 1.0)], 0.0, m_a, vec![(phi + i, -1.0)], 1.0, 2.0 * scale);
                comp(&mut lp, &mut binaries, vec![(am + i, 1.0)], 0.0, m_a, vec![(phi + i, 1.0)], 1.0, 2.0 * scale);
            }
            for i in 0..st.n_in() {
                let (gl, gh) = wy_range(st.g.row(i));
                let m_b = scale * (inr[i].1 - gl).max(0.0);
                // beta (1 - pi) = 0
                comp(&mut lp, &mut binaries, vec![(be + i, 1.0)], 0.0, m_b, vec![(pi + i, -1.0)], 1.0, scale);
                // pi * rowslack = 0, rowslack = G y + K u + beta - r
                let m_s = scale * (gh - inr[i].0).max(0.0);
                let mut s = dense_row(st.g.row(i), y0);
                s.extend(dense_row(ru.k_in.row(i), u0));
                s.push((be + i, 1.0));
                comp(&mut lp, &mut binaries, vec![(pi + i, 1.0)], 0.0, scale, s, -ru.r_in[i], m_s);
            }
            for j in 0..st.n_y {
                let width = scale * (yb[j].1 - yb[j].0);
                comp(&mut lp, &mut binaries, vec![(rlo + j, 1.0)], 0.0, scale * col_abs[j], vec![(y0 + j, 1.0)], -yb[j].0, width);
                comp(&mut lp, &mut binaries, vec![(rhi + j, 1.0)], 0.0, scale * col_abs[j], vec![(y0 + j, -1.0)], yb[j].1, width);
            }
        }
        (MixedIntegerProgram { lp, binaries }, u0)
    }

    /// `omega(xhat)` by the FP MILP, with slack-LP duals at the maximizer.
    pub fn feasibility_value(&self, xhat: &[f64]) -> Result<FeasibilityResult> {
        let (mip, u0) = self.build_fp(xhat);
        let (x, inexact) = match solve_milp(&mip, &self.cfg.mip) {
            Ok(s) if s.status == MipStatus::Optimal => (s.x, false),
            Ok(s) => return Err(AdversarialError::Status(s.status)),
            Err(KernelError::NodeLimit { incumbent_x: Some(x), .. }) => (x, true),
            Err(e) => return Err(e.into()),
        };
        let inst = &self.ts.inst;
        let u = project_into_box(&x[u0..u0 + self.ts.n_u()], &inst.u.lo, &inst.u.hi);
        let (omega, duals) = self.slack_value(xhat, &u)?;
        Ok(FeasibilityResult { omega, u, duals, inexact })
    }

    /// Feasibility cut from slack-LP duals: `omega(., u*)` is convex in xhat.
    pub fn feasibility_cut(&self, xhat: &[f64], fr: &FeasibilityResult) -> Cut {
        let ts = self.ts;
        let mut grad = vec![0.0; ts.dim()];
        for t in 0..ts.horizon() {
            let cp = ts.coupling(t, &fr.u);
            let a = cp.c_eq.tr_mul_vec(&fr.duals[t].0);
            let b = cp.c_in.tr_mul_vec(&fr.duals[t].1);
            for k in 0..grad.len() {
                grad[k] -= a[k] + b[k];
            }
        }
        Cut { kind: CutKind::Feasibility, point: xhat.to_vec(), value: fr.omega, grad, u: fr.u.clone(), inexact: fr.inexact }
    }
}

fn project_into_box(u: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    u.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect()
}
