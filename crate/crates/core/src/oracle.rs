//! Brute-force ground truth for small instances.
//!
//! The recourse value at fixed `xhat` is convex in `u` (an LP value convex in
//! its right-hand side plus a linear term), so every maximum over U is
//! attained at a vertex and can be found by enumeration.

use msro_optkernel::{brute::next_combination, solve_lp, KernelError, LinearProgram, LpStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::adversarial::{AdversarialError, Adversary};
use crate::bundle::{self, BundleConfig, BundleError};
use crate::lowerbound::{self, LowerBoundError};
use crate::model::{dot, Instance, Matrix, Polytope, StageData, XBounds};
use crate::transform::{dense_row, solve_adr, Recourse, TransformError, TwoStageProblem};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("vertex enumeration was not exhaustive")]
    NotExhaustive,
    #[error("too many vertices for the epigraph LP ({0})")]
    TooManyVertices(usize),
    #[error("two-stage problem has no feasible affine state policy in the trust box")]
    PolicyInfeasible,
    #[error("epigraph LP is {0:?}")]
    Status(LpStatus),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("{which}: {source}")]
    Bound { which: &'static str, source: Box<dyn std::error::Error + Send + Sync> },
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Clone, Debug, Serialize)]
pub struct VertexList {
    pub vertices: Vec<Vec<f64>>,
    pub exhaustive: bool,
}

/// All vertices of U by solving every square active system. `cap` limits
/// the number of subsets tried.
pub fn enumerate_vertices(u: &Polytope, cap: usize) -> VertexList {
    let n = u.dim();
    // every constraint as a . u <= b
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        rows.push((a.clone(), u.hi[j]));
        a[j] = -1.0;
        rows.push((a, -u.lo[j]));
    }
    for i in 0..u.d.rows {
        rows.push((u.d.row(i).to_vec(), u.e[i]));
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    if n == 0 {
        return VertexList { vertices: vec![Vec::new()], exhaustive: true };
    }
    let mut subset: Vec<usize> = (0..n).collect();
    let mut tried = 0usize;
    let exhaustive = loop {
        tried += 1;
        if tried > cap {
            break false;
        }
        let a = DMatrix::from_fn(n, n, |r, c| rows[subset[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| rows[subset[r]].1);
        let scale = a.amax().max(1.0);
        let solved = if a.rank(1e-10 * scale) == n { a.full_piv_lu().solve(&b) } else { None };
        if let Some(v) = solved {
            let v: Vec<f64> = v.iter().copied().collect();
            if u.violation(&v) <= 1e-9
                && !vertices.iter().any(|w| w.iter().zip(&v).all(|(p, q)| (p - q).abs() <= 1e-9))
            {
                vertices.push(v);
            }
        }
        if !next_combination(&mut subset, rows.len()) {
            break true;
        }
    };
    VertexList { vertices, exhaustive }
}

/// Number of linearly independent constraints active at `v`.
pub fn active_rank(u: &Polytope, v: &[f64]) -> usize {
    let n = u.dim();
    let mut act: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        if (v[j] - u.lo[j]).abs() <= 1e-9 || (v[j] - u.hi[j]).abs() <= 1e-9 {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            act.push(a);
        }
    }
    for i in 0..u.d.rows {
        if (dot(u.d.row(i), v) - u.e[i]).abs() <= 1e-9 {
            act.push(u.d.row(i).to_vec());
        }
    }
    if act.is_empty() {
        return 0;
    }
    DMatrix::from_fn(act.len(), n, |r, c| act[r][c]).rank(1e-9)
}

/// Per-vertex evaluation of the recourse.
#[derive(Clone, Debug, Serialize)]
pub struct VertexValue {
    pub u: Vec<f64>,
    /// `None` when the recourse is infeasible at this vertex.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BruteQ {
    /// `None` if some vertex has infeasible recourse.
    pub q: Option<f64>,
    pub argmax: Option<Vec<f64>>,
    pub table: Vec<VertexValue>,
}

impl BruteQ {
    /// Gap between the best and the runner-up vertex value, `inf` with one
    /// vertex.
    pub fn margin(&self) -> f64 {
        let mut v: Vec<f64> = self.table.iter().filter_map(|r| r.value).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        if v.len() < 2 {
            f64::INFINITY
        } else {
            v[0] - v[1]
        }
    }
}

pub fn brute_force_q(ts: &TwoStageProblem, xhat: &[f64], verts: &VertexList) -> Result<BruteQ> {
    if !verts.exhaustive {
        return Err(OracleError::NotExhaustive);
    }
    let obj_u = ts.uncertain_objective(xhat);
    let mut table = Vec::with_capacity(verts.vertices.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut feasible = true;
    for v in &verts.vertices {
        let value = match ts.recourse(xhat, v)? {
            Recourse::Feasible { value, .. } => Some(value + dot(&obj_u, v)),
            Recourse::Infeasible { .. } => {
                feasible = false;
                None
            }
        };
        if let Some(q) = value {
            if best.as_ref().is_none_or(|b| q > b.0) {
                best = Some((q, v.clone()));
            }
        }
        table.push(VertexValue { u: v.clone(), value });
    }
    let (q, argmax) = match (feasible, best) {
        (true, Some((q, u))) => (Some(q), Some(u)),
        _ => (None, None),
    };
    Ok(BruteQ { q, argmax, table })
}

/// `F(xhat)` by enumeration, `None` outside dom F.
pub fn brute_force_f(ts: &TwoStageProblem, xhat: &[f64], verts: &VertexList) -> Result<Option<f64>> {
    Ok(brute_force_q(ts, xhat, verts)?.q.map(|q| ts.first_stage_value(xhat) + q))
}

/// `omega(xhat)` as the largest slack-LP value over the vertices.
pub fn brute_force_omega(adv: &Adversary, xhat: &[f64], verts: &VertexList) -> std::result::Result<f64, AdversarialError> {
    let mut best: f64 = 0.0;
    for v in &verts.vertices {
        best = best.max(adv.slack_value(xhat, v)?.0);
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoStageOptimum {
    pub value: f64,
    pub xhat: Vec<f64>,
}

/// Exact optimum of the two-stage problem over `|xhat_k| <= radius`: one
/// epigraph LP with an independent recourse copy per vertex.
pub fn brute_force_two_stage(ts: &TwoStageProblem, verts: &VertexList, radius: f64) -> Result<TwoStageOptimum> {
    if !verts.exhaustive {
        return Err(OracleError::NotExhaustive);
    }
    if verts.vertices.len() > 64 {
        return Err(OracleError::TooManyVertices(verts.vertices.len()));
    }
    let dim = ts.dim();
    let mut lp = LinearProgram::new();
    lp.add_vars(dim, f64::NEG_INFINITY, f64::INFINITY);
    let theta = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    ts.add_first_stage_constraints(&mut lp, radius);
    for v in &verts.vertices {
        // theta >= grad(v)'xhat + sum_t f_t'y_t
        let mut epi: Vec<(usize, f64)> = vec![(theta, 1.0)];
        for (k, g) in ts.objective_gradient(v).into_iter().enumerate() {
            if g != 0.0 {
                epi.push((k, -g));
            }
        }
        for t in 0..ts.horizon() {
            let st = &ts.inst.stages[t];
            let y0 = lp.add_vars(st.n_y, f64::NEG_INFINITY, f64::INFINITY);
            for j in 0..st.n_y {
                if st.f[j] != 0.0 {
                    epi.push((y0 + j, -st.f[j]));
                }
            }
            // W y + C xhat = b, G y + C xhat >= b
            let cp = ts.coupling(t, v);
            for i in 0..st.n_eq() {
                let mut row = dense_row(st.w.row(i), y0);
                row.extend(dense_row(cp.c_eq.row(i), 0));
                lp.add_eq(row, cp.b_eq[i]);
            }
            for i in 0..st.n_in() {
                let mut row = dense_row(st.g.row(i), y0);
                row.extend(dense_row(cp.c_in.row(i), 0));
                lp.add_ge(row, cp.b_in[i]);
            }
        }
        lp.add_ge(epi, 0.0);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(TwoStageOptimum { value: sol.objective, xhat: sol.x[..dim].to_vec() }),
        LpStatus::Infeasible => Err(OracleError::PolicyInfeasible),
        s => Err(OracleError::Status(s)),
    }
}

// ---------------------------------------------------------------- finite differences

#[derive(Clone, Debug, Serialize)]
pub enum DirectionCheck {
    /// Central difference compared with `<g, d>`.
    Central { fd: f64, inner: f64, passed: bool },
    /// Kink along `d`: only the subgradient inequality is checked.
    Kink { forward: f64, backward: f64, inner: f64, passed: bool },
    /// `xhat +- h d` leaves dom F.
    OutsideDomain,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub checks: Vec<DirectionCheck>,
    /// Some vertex ties with the maximizer, so F may have a kink here.
    pub tied_maximizers: bool,
}

impl FdReport {
    pub fn differentiable(&self) -> bool {
        !self.tied_maximizers && self.checks.iter().all(|c| matches!(c, DirectionCheck::Central { .. }))
    }

    pub fn central_passed(&self) -> bool {
        self.checks.iter().all(|c| !matches!(c, DirectionCheck::Central { passed: false, .. }))
    }

    /// The subgradient inequality at `xhat +- h d` for every direction.
    pub fn inequality_passed(&self) -> bool {
        self.checks.iter().all(|c| match c {
            DirectionCheck::Kink { passed, .. } => *passed,
            _ => true,
        })
    }
}

/// Compares `g` with finite differences of `f` along `dirs`.
///
/// A direction counts as a kink when forward and backward differences
/// disagree beyond the central-difference tolerance; there the subgradient
/// inequality `f(xhat +- h d) >= f(xhat) +- h <g, d> - 1e-8` is checked instead.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> Option<f64>,
    xhat: &[f64],
    g: &[f64],
    dirs: &[Vec<f64>],
    h: f64,
    tied_maximizers: bool,
) -> FdReport {
    let Some(f0) = f(xhat) else {
        return FdReport { checks: vec![DirectionCheck::OutsideDomain; dirs.len()], tied_maximizers };
    };
    let mut checks = Vec::with_capacity(dirs.len());
    for d in dirs {
        let inner = dot(g, d);
        let plus: Vec<f64> = xhat.iter().zip(d).map(|(x, v)| x + h * v).collect();
        let minus: Vec<f64> = xhat.iter().zip(d).map(|(x, v)| x - h * v).collect();
        let (Some(fp), Some(fm)) = (f(&plus), f(&minus)) else {
            checks.push(DirectionCheck::OutsideDomain);
            continue;
        };
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let tol = 1e-4 * (1.0 + inner.abs());
        if (forward - backward).abs() > tol || tied_maximizers {
            let passed = fp >= f0 + h * inner - 1e-8 && fm >= f0 - h * inner - 1e-8;
            checks.push(DirectionCheck::Kink { forward, backward, inner, passed });
        } else {
            let fd = (fp - fm) / (2.0 * h);
            checks.push(DirectionCheck::Central { fd, inner, passed: (fd - inner).abs() <= tol });
        }
    }
    FdReport { checks, tied_maximizers }
}

/// Random unit directions.
pub fn random_directions(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dot(&v, &v).sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- bound chain

#[derive(Clone, Debug, Serialize)]
pub struct ChainReport {
    /// Scenario-tree lower bound.
    pub v_s: f64,
    /// Bundle upper bound.
    pub v_tpb: f64,
    /// Enumeration optimum when U is small enough.
    pub v_tpb_exact: Option<f64>,
    pub v_adr: f64,
    pub holds: bool,
    pub vertex_table: Option<Vec<Vec<f64>>>,
}

/// Computes `v_S <= v_TPB <= v_ADR` on one instance.
pub fn check_theorem3(inst: &Instance, cfg: &BundleConfig, scenario_cap: usize) -> Result<ChainReport> {
    let bound = |which: &'static str| move |e: Box<dyn std::error::Error + Send + Sync>| OracleError::Bound { which, source: e };
    let adr = solve_adr(inst).map_err(|e| bound("ADR")(Box::new(e)))?;
    let ts = crate::transform::build_two_stage(inst);
    let sol = bundle::run(&ts, cfg).map_err(|e: BundleError| bound("bundle")(Box::new(e)))?;
    let scen = lowerbound::harvest_scenarios(&sol.harvested, &inst.u, scenario_cap)
        .map_err(|e: LowerBoundError| bound("harvest")(Box::new(e)))?;
    let tree = lowerbound::build_scenario_tree(inst, &scen, lowerbound::PREFIX_TOL);
    let v_s = lowerbound::solve_stmarmilp(inst, &tree).map_err(|e| bound("scenario tree")(Box::new(e)))?;
    let verts = enumerate_vertices(&inst.u, 100_000);
    let (v_tpb_exact, vertex_table) = if verts.exhaustive && verts.vertices.len() <= 64 {
        let ex = brute_force_two_stage(&ts, &verts, sol.trust_radius)?;
        (Some(ex.value), Some(verts.vertices))
    } else {
        (None, None)
    };
    let tol = 1e-6 * (1.0 + sol.ub.abs());
    let holds = v_s <= sol.ub + tol && sol.ub <= adr.value + tol;
    Ok(ChainReport { v_s, v_tpb: sol.ub, v_tpb_exact, v_adr: adr.value, holds, vertex_table })
}

// ---------------------------------------------------------------- random instances

/// Parameters of [`random_instance`].
#[derive(Clone, Debug)]
pub struct RandomShape {
    pub horizon: usize,
    pub max_dim: usize,
    /// Upper limit on total uncertain dimension (box vertices are `2^n`).
    pub max_n_u: usize,
    /// Drop the overflow variable so some rows are hard and feasibility cuts
    /// appear.
    pub hard_rows: bool,
    /// Keep `n_y <= max_dim` too: free balance variables absorb the state
    /// equations instead of a split slack pair per state.
    pub compact: bool,
}

impl Default for RandomShape {
    fn default() -> Self {
        Self { horizon: 2, max_dim: 2, max_n_u: 4, hard_rows: false, compact: false }
    }
}

/// Stage with `y = (balance, extra, overflow)`: `balance` is free and enters
/// only its own state equation, `extra` is boxed, and `overflow >= 0` (absent
/// with `hard_rows`) softens the balance bounds and the random rows.
fn compact_stage(rng: &mut ChaCha8Rng, shape: &RandomShape, n_x: usize, n_prev: usize, n_s: usize, n_u: usize) -> StageData {
    let overflow = usize::from(!shape.hard_rows);
    let n_e = rng.gen_range(0..=shape.max_dim.saturating_sub(n_s + overflow));
    let n_y = n_s + n_e + overflow;
    let n_rand = rng.gen_range(1..=2usize);
    let n_in = 2 * n_s + 2 * n_e + overflow + n_rand + 2 * n_s;
    let mut st = StageData::zeros(n_x, n_prev, n_s, n_y, n_u, n_s, n_in);
    let mut u = |lo: f64, hi: f64| (rng.gen_range(lo..hi) * 100.0f64).round() / 100.0;
    for i in 0..n_s {
        st.a.set(i, i, 1.0);
        for j in 0..n_prev {
            st.b.set(i, j, u(-0.8, 0.8));
        }
        for j in 0..n_x {
            st.t_mat.set(i, j, u(-1.0, 1.0));
        }
        st.w.set(i, i, 1.0);
        for j in 0..n_e {
            st.w.set(i, n_s + j, u(-1.0, 1.0));
        }
        st.h0[i] = u(-1.0, 1.0);
        for j in 0..n_u {
            st.h.set(i, j, u(-1.0, 1.0));
        }
    }
    let v = n_s + n_e;
    let mut r = 0;
    for j in 0..n_s {
        // |balance| <= b, softened by the overflow
        let b = u(1.0, 3.0);
        for sign in [1.0, -1.0] {
            st.g.set(r, j, sign);
            if overflow == 1 {
                st.g.set(r, v, 1.0);
            }
            st.m0[r] = -b;
            r += 1;
        }
    }
    for j in 0..n_e {
        st.g.set(r, n_s + j, 1.0);
        st.g.set(r + 1, n_s + j, -1.0);
        st.m0[r + 1] = -u(1.0, 3.0);
        r += 2;
    }
    if overflow == 1 {
        st.g.set(r, v, 1.0);
        r += 1;
    }
    for _ in 0..n_rand {
        for j in 0..n_x {
            st.l.set(r, j, u(-1.0, 1.0));
        }
        for j in 0..n_s {
            st.e.set(r, j, u(-1.0, 1.0));
        }
        for j in 0..n_s + n_e {
            st.g.set(r, j, u(-1.0, 1.0));
        }
        if overflow == 1 {
            st.g.set(r, v, 1.0);
        }
        st.m0[r] = u(-1.0, 0.5);
        for j in 0..n_u {
            st.m.set(r, j, u(-0.5, 0.5));
        }
        r += 1;
    }
    for j in 0..n_s {
        st.e.set(r, j, 1.0);
        st.m0[r] = -10.0;
        st.e.set(r + 1, j, -1.0);
        st.m0[r + 1] = -10.0;
        r += 2;
    }
    for j in 0..n_s + n_e {
        st.f[j] = u(-1.0, 1.0);
    }
    if overflow == 1 {
        st.f[v] = u(3.0, 5.0);
    }
    for j in 0..n_s {
        st.d[j] = u(-0.5, 0.5);
    }
    st
}

/// Random instance with bounded recourse and an ADR-feasible zero policy.
///
/// Controls per stage are `(z, e+, e-, v)`: bounded `z`, balance slacks `e+-`
/// on the state equations and an overflow `v` on the random rows, all
/// penalized. State bounds `|s| <= 10` carry no control, so they restrict
/// the policy itself. With `compact` the stages come from [`compact_stage`].
pub fn random_instance(seed: u64, shape: &RandomShape) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = shape.horizon.max(1);
    let n_x = rng.gen_range(0..=shape.max_dim);
    let n_s0 = rng.gen_range(1..=shape.max_dim);
    let mut n_u_left = shape.max_n_u.max(t_len);
    let mut stages = Vec::with_capacity(t_len);
    let mut n_prev = n_s0;
    for t in 0..t_len {
        let remaining = t_len - t - 1;
        let n_u = rng.gen_range(1..=shape.max_dim.min(n_u_left - remaining).max(1));
        n_u_left -= n_u;
        if shape.compact {
            let n_s = rng.gen_range(1..=(shape.max_dim - usize::from(!shape.hard_rows)).max(1));
            stages.push(compact_stage(&mut rng, shape, n_x, n_prev, n_s, n_u));
            n_prev = n_s;
            continue;
        }
        let n_s = rng.gen_range(1..=shape.max_dim);
        let n_z = rng.gen_range(1..=shape.max_dim);
        let n_rand = rng.gen_range(1..=2usize);
        let overflow = usize::from(!shape.hard_rows);
        let n_y = n_z + 2 * n_s + overflow;
        let n_in = 2 * n_z + 2 * n_s + overflow + n_rand + 2 * n_s;
        let mut st = StageData::zeros(n_x, n_prev, n_s, n_y, n_u, n_s, n_in);
        let mut u = |lo: f64, hi: f64| (rng.gen_range(lo..hi) * 100.0f64).round() / 100.0;
        for i in 0..n_s {
            st.a.set(i, i, 1.0);
            for j in 0..n_prev {
                st.b.set(i, j, u(-0.8, 0.8));
            }
            for j in 0..n_x {
                st.t_mat.set(i, j, u(-1.0, 1.0));
            }
            for j in 0..n_z {
                st.w.set(i, j, u(-1.0, 1.0));
            }
            st.w.set(i, n_z + i, 1.0);
            st.w.set(i, n_z + n_s + i, -1.0);
            st.h0[i] = u(-1.0, 1.0);
            for j in 0..n_u {
                st.h.set(i, j, u(-1.0, 1.0));
            }
        }
        let mut r = 0;
        for j in 0..n_z {
            st.g.set(r, j, 1.0);
            st.g.set(r + 1, j, -1.0);
            st.m0[r + 1] = -u(1.0, 3.0);
            r += 2;
        }
        for j in 0..2 * n_s + overflow {
            st.g.set(r, n_z + j, 1.0);
            r += 1;
        }
        for _ in 0..n_rand {
            for j in 0..n_x {
                st.l.set(r, j, u(-1.0, 1.0));
            }
            for j in 0..n_s {
                st.e.set(r, j, u(-1.0, 1.0));
            }
            for j in 0..n_z {
                st.g.set(r, j, u(-1.0, 1.0));
            }
            if overflow == 1 {
                st.g.set(r, n_z + 2 * n_s, 1.0);
            }
            st.m0[r] = u(-1.0, 0.5);
            for j in 0..n_u {
                st.m.set(r, j, u(-0.5, 0.5));
            }
            r += 1;
        }
        for j in 0..n_s {
            st.e.set(r, j, 1.0);
            st.m0[r] = -10.0;
            st.e.set(r + 1, j, -1.0);
            st.m0[r + 1] = -10.0;
            r += 2;
        }
        for j in 0..n_z {
            st.f[j] = u(-1.0, 1.0);
        }
        for j in n_z..n_y {
            st.f[j] = u(3.0, 5.0);
        }
        for j in 0..n_s {
            st.d[j] = u(-0.5, 0.5);
        }
        stages.push(st);
        n_prev = n_s;
    }
    let n_u: usize = stages.iter().map(|s| s.n_u).sum();
    let lo: Vec<f64> = (0..n_u).map(|_| (rng.gen_range(-1.0..1.0f64) * 100.0).round() / 100.0).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + (rng.gen_range(0.5..2.0f64) * 100.0).round() / 100.0).collect();
    let mut u = Polytope::boxed(lo.clone(), hi.clone());
    if n_u >= 2 && rng.gen_bool(0.3) {
        // budget on total deviation above lo
        let width: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).sum();
        u.d = Matrix::from_rows(&[vec![1.0; n_u]]);
        u.e = vec![lo.iter().sum::<f64>() + 0.6 * width];
    }
    let c: Vec<f64> = (0..n_x).map(|_| (rng.gen_range(-1.0..1.0f64) * 100.0).round() / 100.0).collect();
    let mut x_bounds = XBounds::free(n_x);
    x_bounds.lo = vec![0.0; n_x];
    x_bounds.hi = vec![3.0; n_x];
    let s0 = (0..n_s0).map(|_| (rng.gen_range(-1.0..1.0f64) * 100.0).round() / 100.0).collect();
    Instance { n_x, c, s0, x_bounds, stages, u }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::{AdversarialConfig, Domain};
    use crate::transform::build_two_stage;

    #[test]
    fn box_and_budget_vertices() {
        let b = Polytope::boxed(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(enumerate_vertices(&b, 1000).vertices.len(), 4);
        let mut s = b.clone();
        s.d = Matrix::from_rows(&[vec![1.0, 1.0]]);
        s.e = vec![1.0];
        let vl = enumerate_vertices(&s, 1000);
        assert!(vl.exhaustive);
        assert_eq!(vl.vertices.len(), 3);
        for v in &vl.vertices {
            assert_eq!(active_rank(&s, v), 2);
        }
    }

    #[test]
    fn box_has_two_to_the_d_vertices() {
        for d in 1..=6 {
            let b = Polytope::boxed(vec![-1.0; d], vec![2.0; d]);
            let vl = enumerate_vertices(&b, 1_000_000);
            assert!(vl.exhaustive);
            assert_eq!(vl.vertices.len(), 1 << d);
        }
    }

    #[test]
    fn cap_marks_partial_enumeration() {
        let b = Polytope::boxed(vec![0.0; 4], vec![1.0; 4]);
        assert!(!enumerate_vertices(&b, 3).exhaustive);
    }

    #[test]
    fn random_instances_validate_and_match_milp() {
        for seed in 0..8 {
            let inst = random_instance(seed, &RandomShape::default());
            assert!(crate::model::validate(&inst).is_empty(), "seed {seed}: {}", crate::model::validate(&inst));
            let ts = build_two_stage(&inst);
            let adv = Adversary::new(&ts, AdversarialConfig::default()).unwrap();
            let xhat = solve_adr(&inst).unwrap().xhat;
            let verts = enumerate_vertices(&inst.u, 100_000);
            let bq = brute_force_q(&ts, &xhat, &verts).unwrap();
            let res = adv.solve_worst_case(&xhat, &[]).unwrap();
            let q = bq.q.unwrap();
            assert!((q - res.value).abs() <= 1e-6 * (1.0 + q.abs()), "seed {seed}: {q} vs {}", res.value);
        }
    }

    #[test]
    fn omega_matches_vertex_maximum() {
        let shape = RandomShape { hard_rows: true, max_dim: 1, max_n_u: 3, horizon: 2, compact: false };
        let mut seen_positive = false;
        for seed in 0..10 {
            let inst = random_instance(seed, &shape);
            let ts = build_two_stage(&inst);
            let adv = Adversary::new(&ts, AdversarialConfig::default()).unwrap();
            let verts = enumerate_vertices(&inst.u, 100_000);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xhat: Vec<f64> = (0..ts.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let brute = brute_force_omega(&adv, &xhat, &verts).unwrap();
            let fr = adv.feasibility_value(&xhat).unwrap();
            assert!((brute - fr.omega).abs() <= 1e-6 * (1.0 + brute), "seed {seed}: {brute} vs {}", fr.omega);
            let dom = adv.domain(&xhat).unwrap();
            assert_eq!(brute > 1e-6, matches!(dom, Domain::Infeasible(_)), "seed {seed}");
            seen_positive |= brute > 1e-6;
        }
        assert!(seen_positive);
    }

    #[test]
    fn deterministic_two_stage_equals_joint_lp() {
        let mut inst = random_instance(3, &RandomShape::default());
        let n = inst.u.dim();
        let mid: Vec<f64> = inst.u.lo.iter().zip(&inst.u.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        inst.u = Polytope::boxed(mid.clone(), mid.clone());
        let ts = build_two_stage(&inst);
        let verts = enumerate_vertices(&inst.u, 1000);
        assert_eq!(verts.vertices.len(), 1);
        let opt = brute_force_two_stage(&ts, &verts, 1e3).unwrap();
        let adr = solve_adr(&inst).unwrap();
        assert_eq!(n, mid.len());
        assert!((opt.value - adr.value).abs() <= 1e-7 * (1.0 + adr.value.abs()));
    }

    #[test]
    fn finite_differences_on_a_smooth_function() {
        let f = |x: &[f64]| Some(x[0] * 2.0 - x[1]);
        let rep = finite_diff_check(f, &[1.0, 1.0], &[2.0, -1.0], &[vec![0.6, 0.8], vec![0.0, 0.0]], 1e-5, false);
        assert!(rep.differentiable() && rep.central_passed());
        let kink = |x: &[f64]| Some(x[0].abs());
        let rep = finite_diff_check(kink, &[0.0], &[0.3], &[vec![1.0]], 1e-5, false);
        assert!(!rep.differentiable());
        assert!(rep.inequality_passed());
    }
}
