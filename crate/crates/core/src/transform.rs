//! Causal affine state rules `s_t = P_t u^t + q_t` and the two-stage problem
//! they induce, plus the fully affine baseline counterpart.
//!
//! The aggregated first stage `xhat = (x, P_0.., q_0..)` is a flat vector; see
//! [`XhatIndex`] for the layout. For fixed `(xhat, u)` the recourse splits by
//! stage: `min f_t'y_t s.t. W_t y_t = rhs_eq_t, G_t y_t >= rhs_in_t`.

use msro_optkernel::{solve_lp, LinearProgram, LpSolution, LpStatus, SparseRow};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dot, Instance, Matrix, Sense};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("stage {stage} recourse LP is unbounded below")]
    UnboundedRecourse { stage: usize },
    #[error("affine counterpart is {0:?}")]
    Counterpart(LpStatus),
    #[error(transparent)]
    Kernel(#[from] msro_optkernel::KernelError),
}

#[derive(Clone, Debug, PartialEq)]
struct StageBlock {
    n_s: usize,
    p_cols: usize,
    p_off: usize,
    q_off: usize,
}

/// Flat coordinates of `(x, P_t, q_t)`. `P_t` is stored row-major with
/// exactly `prefix_dim(t)` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct XhatIndex {
    pub n_x: usize,
    blocks: Vec<StageBlock>,
    dim: usize,
}

impl XhatIndex {
    pub fn new(inst: &Instance) -> Self {
        let mut off = inst.n_x;
        let mut blocks = Vec::with_capacity(inst.horizon());
        for t in 0..inst.horizon() {
            let n_s = inst.stages[t].n_s;
            let p_cols = inst.prefix_dim(t);
            let p_off = off;
            off += n_s * p_cols;
            let q_off = off;
            off += n_s;
            blocks.push(StageBlock { n_s, p_cols, p_off, q_off });
        }
        Self { n_x: inst.n_x, blocks, dim: off }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_s(&self, t: usize) -> usize {
        self.blocks[t].n_s
    }

    pub fn p_cols(&self, t: usize) -> usize {
        self.blocks[t].p_cols
    }

    #[inline]
    pub fn x(&self, j: usize) -> usize {
        debug_assert!(j < self.n_x);
        j
    }

    #[inline]
    pub fn p(&self, t: usize, r: usize, c: usize) -> usize {
        let b = &self.blocks[t];
        assert!(r < b.n_s && c < b.p_cols, "P_{t}[{r}][{c}] violates the causal shape");
        b.p_off + r * b.p_cols + c
    }

    #[inline]
    pub fn q(&self, t: usize, r: usize) -> usize {
        let b = &self.blocks[t];
        debug_assert!(r < b.n_s);
        b.q_off + r
    }

    /// Whether coordinate `k` belongs to a `P` block.
    pub fn is_p(&self, k: usize) -> bool {
        self.blocks.iter().any(|b| k >= b.p_off && k < b.q_off)
    }
}

/// Per-stage `P_t` (n_s x prefix_dim(t)) and `q_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineStatePolicy {
    pub p: Vec<Matrix>,
    pub q: Vec<Vec<f64>>,
    pub n_u: usize,
}

impl AffineStatePolicy {
    pub fn from_xhat(idx: &XhatIndex, n_u: usize, xhat: &[f64]) -> Self {
        let mut p = Vec::new();
        let mut q = Vec::new();
        for (t, b) in idx.blocks.iter().enumerate() {
            p.push(Matrix {
                rows: b.n_s,
                cols: b.p_cols,
                data: xhat[b.p_off..b.p_off + b.n_s * b.p_cols].to_vec(),
            });
            q.push((0..b.n_s).map(|r| xhat[idx.q(t, r)]).collect());
        }
        Self { p, q, n_u }
    }

    pub fn write_into(&self, idx: &XhatIndex, xhat: &mut [f64]) {
        for (t, b) in idx.blocks.iter().enumerate() {
            xhat[b.p_off..b.p_off + b.n_s * b.p_cols].copy_from_slice(&self.p[t].data);
            for r in 0..b.n_s {
                xhat[idx.q(t, r)] = self.q[t][r];
            }
        }
    }
}

/// `s_t = P_t u^t + q_t` for every stage.
pub fn evaluate_state_policy(pol: &AffineStatePolicy, u: &[f64]) -> Result<Vec<Vec<f64>>, TransformError> {
    if u.len() != pol.n_u {
        return Err(TransformError::Dimension(format!("u has length {}, expected {}", u.len(), pol.n_u)));
    }
    let mut out = Vec::with_capacity(pol.p.len());
    for (p, q) in pol.p.iter().zip(&pol.q) {
        if p.cols > u.len() {
            return Err(TransformError::Dimension(format!("P has {} columns for u of length {}", p.cols, u.len())));
        }
        let s: Vec<f64> = (0..p.rows).map(|r| dot(p.row(r), &u[..p.cols]) + q[r]).collect();
        out.push(s);
    }
    Ok(out)
}

/// Recourse rows at fixed `u`, affine in `xhat`: `rhs = b - C xhat`.
#[derive(Clone, Debug)]
pub struct StageCoupling {
    pub c_eq: Matrix,
    pub b_eq: Vec<f64>,
    pub c_in: Matrix,
    pub b_in: Vec<f64>,
}

/// Recourse rows at fixed `xhat`, affine in `u`: `rhs = r - K u`.
#[derive(Clone, Debug)]
pub struct StageInU {
    pub k_eq: Matrix,
    pub r_eq: Vec<f64>,
    pub k_in: Matrix,
    pub r_in: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StageSolution {
    pub y: Vec<f64>,
    /// Equality-row multipliers.
    pub phi: Vec<f64>,
    /// Inequality-row multipliers, nonnegative.
    pub pi: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub enum Recourse {
    Feasible { value: f64, stages: Vec<StageSolution> },
    Infeasible { stage: usize },
}

/// The two-stage problem over `xhat` obtained from affine state rules.
#[derive(Clone, Debug)]
pub struct TwoStageProblem {
    pub inst: Instance,
    pub index: XhatIndex,
}

pub fn build_two_stage(inst: &Instance) -> TwoStageProblem {
    TwoStageProblem { inst: inst.clone(), index: XhatIndex::new(inst) }
}

impl TwoStageProblem {
    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn horizon(&self) -> usize {
        self.inst.horizon()
    }

    pub fn n_u(&self) -> usize {
        self.inst.n_u_total()
    }

    pub fn policy(&self, xhat: &[f64]) -> AffineStatePolicy {
        AffineStatePolicy::from_xhat(&self.index, self.n_u(), xhat)
    }

    /// `c'x + sum_t d_t'q_t`.
    pub fn first_stage_value(&self, xhat: &[f64]) -> f64 {
        let idx = &self.index;
        let mut v = dot(&self.inst.c, &xhat[..idx.n_x]);
        for (t, s) in self.inst.stages.iter().enumerate() {
            for r in 0..s.n_s {
                v += s.d[r] * xhat[idx.q(t, r)];
            }
        }
        v
    }

    /// Coefficients on `u` of `sum_t d_t'P_t u^t`.
    pub fn uncertain_objective(&self, xhat: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_u()];
        for (t, s) in self.inst.stages.iter().enumerate() {
            for r in 0..s.n_s {
                if s.d[r] != 0.0 {
                    for (c, o) in out.iter_mut().enumerate().take(self.index.p_cols(t)) {
                        *o += s.d[r] * xhat[self.index.p(t, r, c)];
                    }
                }
            }
        }
        out
    }

    /// Gradient in `xhat` of `c'x + sum_t d_t'(P_t u^t + q_t)` at fixed `u`.
    pub fn objective_gradient(&self, u: &[f64]) -> Vec<f64> {
        let idx = &self.index;
        let mut g = vec![0.0; idx.dim()];
        g[..idx.n_x].copy_from_slice(&self.inst.c);
        for (t, s) in self.inst.stages.iter().enumerate() {
            for r in 0..s.n_s {
                g[idx.q(t, r)] = s.d[r];
                for (c, &uc) in u.iter().enumerate().take(idx.p_cols(t)) {
                    g[idx.p(t, r, c)] = s.d[r] * uc;
                }
            }
        }
        g
    }

    /// Right-hand sides of stage `t` recourse rows at `(xhat, u)`.
    pub fn rhs(&self, t: usize, xhat: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let inst = &self.inst;
        let st = &inst.stages[t];
        let idx = &self.index;
        let x = &xhat[..idx.n_x];
        let state = |k: usize| -> Vec<f64> {
            (0..idx.n_s(k))
                .map(|r| {
                    let mut v = xhat[idx.q(k, r)];
                    for (c, &uc) in u.iter().enumerate().take(idx.p_cols(k)) {
                        v += xhat[idx.p(k, r, c)] * uc;
                    }
                    v
                })
                .collect()
        };
        let s_t = state(t);
        let s_prev = if t == 0 { inst.s0.clone() } else { state(t - 1) };
        let ut = &u[inst.u_offset(t)..inst.u_offset(t) + st.n_u];
        let tx = st.t_mat.mul_vec(x);
        let as_ = st.a.mul_vec(&s_t);
        let bs = st.b.mul_vec(&s_prev);
        let hu = st.h.mul_vec(ut);
        let eq = (0..st.n_eq()).map(|i| st.h0[i] + hu[i] - tx[i] - as_[i] - bs[i]).collect();
        let lx = st.l.mul_vec(x);
        let es = st.e.mul_vec(&s_t);
        let mu = st.m.mul_vec(ut);
        let ge = (0..st.n_in()).map(|i| st.m0[i] + mu[i] - lx[i] - es[i]).collect();
        (eq, ge)
    }

    /// Stage `t` rows at fixed `u` as an affine map of `xhat`.
    pub fn coupling(&self, t: usize, u: &[f64]) -> StageCoupling {
        let inst = &self.inst;
        let st = &inst.stages[t];
        let idx = &self.index;
        let n = idx.dim();
        let ut = &u[inst.u_offset(t)..inst.u_offset(t) + st.n_u];
        let pc = idx.p_cols(t);

        let mut c_eq = Matrix::zeros(st.n_eq(), n);
        let hu = st.h.mul_vec(ut);
        let mut b_eq: Vec<f64> = (0..st.n_eq()).map(|i| st.h0[i] + hu[i]).collect();
        if t == 0 {
            let bs = st.b.mul_vec(&inst.s0);
            for (b, v) in b_eq.iter_mut().zip(bs) {
                *b -= v;
            }
        }
        for i in 0..st.n_eq() {
            for j in 0..idx.n_x {
                c_eq.set(i, idx.x(j), st.t_mat.get(i, j));
            }
            for r in 0..st.n_s {
                let a = st.a.get(i, r);
                if a != 0.0 {
                    c_eq.set(i, idx.q(t, r), a);
                    for c in 0..pc {
                        c_eq.set(i, idx.p(t, r, c), a * u[c]);
                    }
                }
            }
            if t > 0 {
                let pcp = idx.p_cols(t - 1);
                for r in 0..idx.n_s(t - 1) {
                    let b = st.b.get(i, r);
                    if b != 0.0 {
                        c_eq.set(i, idx.q(t - 1, r), b);
                        for c in 0..pcp {
                            c_eq.set(i, idx.p(t - 1, r, c), b * u[c]);
                        }
                    }
                }
            }
        }

        let mut c_in = Matrix::zeros(st.n_in(), n);
        let mu = st.m.mul_vec(ut);
        let b_in = (0..st.n_in()).map(|i| st.m0[i] + mu[i]).collect();
        for i in 0..st.n_in() {
            for j in 0..idx.n_x {
                c_in.set(i, idx.x(j), st.l.get(i, j));
            }
            for r in 0..st.n_s {
                let e = st.e.get(i, r);
                if e != 0.0 {
                    c_in.set(i, idx.q(t, r), e);
                    for c in 0..pc {
                        c_in.set(i, idx.p(t, r, c), e * u[c]);
                    }
                }
            }
        }
        StageCoupling { c_eq, b_eq, c_in, b_in }
    }

    /// Stage `t` rows at fixed `xhat` as an affine map of `u`.
    pub fn rows_in_u(&self, t: usize, xhat: &[f64]) -> StageInU {
        let inst = &self.inst;
        let st = &inst.stages[t];
        let idx = &self.index;
        let n_u = self.n_u();
        let off = inst.u_offset(t);
        let pol = self.policy(xhat);
        let x = &xhat[..idx.n_x];

        // rhs = h0 + H u_t - T x - A (P_t u + q_t) - B (P_{t-1} u + q_{t-1})
        let mut k_eq = Matrix::zeros(st.n_eq(), n_u);
        let tx = st.t_mat.mul_vec(x);
        let aq = st.a.mul_vec(&pol.q[t]);
        let bq = if t == 0 { st.b.mul_vec(&inst.s0) } else { st.b.mul_vec(&pol.q[t - 1]) };
        let r_eq = (0..st.n_eq()).map(|i| st.h0[i] - tx[i] - aq[i] - bq[i]).collect();
        for i in 0..st.n_eq() {
            for c in 0..st.n_u {
                k_eq.set(i, off + c, -st.h.get(i, c));
            }
            for r in 0..st.n_s {
                let a = st.a.get(i, r);
                for c in 0..pol.p[t].cols {
                    let v = k_eq.get(i, c) + a * pol.p[t].get(r, c);
                    k_eq.set(i, c, v);
                }
            }
            if t > 0 {
                let pp = &pol.p[t - 1];
                for r in 0..pp.rows {
                    let b = st.b.get(i, r);
                    for c in 0..pp.cols {
                        let v = k_eq.get(i, c) + b * pp.get(r, c);
                        k_eq.set(i, c, v);
                    }
                }
            }
        }

        let mut k_in = Matrix::zeros(st.n_in(), n_u);
        let lx = st.l.mul_vec(x);
        let eq_ = st.e.mul_vec(&pol.q[t]);
        let r_in = (0..st.n_in()).map(|i| st.m0[i] - lx[i] - eq_[i]).collect();
        for i in 0..st.n_in() {
            for c in 0..st.n_u {
                k_in.set(i, off + c, -st.m.get(i, c));
            }
            for r in 0..st.n_s {
                let e = st.e.get(i, r);
                for c in 0..pol.p[t].cols {
                    let v = k_in.get(i, c) + e * pol.p[t].get(r, c);
                    k_in.set(i, c, v);
                }
            }
        }
        StageInU { k_eq, r_eq, k_in, r_in }
    }

    /// `min f_t'y s.t. W_t y = rhs_eq, G_t y >= rhs_in`, y free.
    pub fn stage_lp(&self, t: usize, rhs_eq: &[f64], rhs_in: &[f64]) -> LinearProgram {
        let st = &self.inst.stages[t];
        let mut lp = LinearProgram::new();
        for j in 0..st.n_y {
            lp.add_var(st.f[j], f64::NEG_INFINITY, f64::INFINITY);
        }
        for i in 0..st.n_eq() {
            lp.add_eq(dense_row(st.w.row(i), 0), rhs_eq[i]);
        }
        for i in 0..st.n_in() {
            lp.add_ge(dense_row(st.g.row(i), 0), rhs_in[i]);
        }
        lp
    }

    /// Solves every stage LP at `(xhat, u)`. The value excludes the
    /// `d_t'P_t u^t` term.
    pub fn recourse(&self, xhat: &[f64], u: &[f64]) -> Result<Recourse, TransformError> {
        let mut stages = Vec::with_capacity(self.horizon());
        let mut total = 0.0;
        for t in 0..self.horizon() {
            let (eq, ge) = self.rhs(t, xhat, u);
            let lp = self.stage_lp(t, &eq, &ge);
            let sol = solve_lp(&lp)?;
            match sol.status {
                LpStatus::Infeasible => return Ok(Recourse::Infeasible { stage: t }),
                LpStatus::Unbounded => return Err(TransformError::UnboundedRecourse { stage: t }),
                LpStatus::Optimal => {}
            }
            total += sol.objective;
            stages.push(stage_solution(sol));
        }
        Ok(Recourse::Feasible { value: total, stages })
    }

    /// The whole recourse as one LP over all `y_t` jointly.
    pub fn joint_recourse_lp(&self, xhat: &[f64], u: &[f64]) -> LinearProgram {
        let mut lp = LinearProgram::new();
        for t in 0..self.horizon() {
            let st = &self.inst.stages[t];
            let base = lp.num_vars();
            for j in 0..st.n_y {
                lp.add_var(st.f[j], f64::NEG_INFINITY, f64::INFINITY);
            }
            let (eq, ge) = self.rhs(t, xhat, u);
            for i in 0..st.n_eq() {
                lp.add_eq(dense_row(st.w.row(i), base), eq[i]);
            }
            for i in 0..st.n_in() {
                lp.add_ge(dense_row(st.g.row(i), base), ge[i]);
            }
        }
        lp
    }

    /// Adds `Omega_0` (bounds and rows on x) to an LP whose first
    /// `index.dim()` variables are `xhat`, plus the box `|xhat_k| <= radius`.
    pub fn add_first_stage_constraints(&self, lp: &mut LinearProgram, radius: f64) {
        let idx = &self.index;
        for k in 0..idx.dim() {
            lp.lower[k] = lp.lower[k].max(-radius);
            lp.upper[k] = lp.upper[k].min(radius);
        }
        for j in 0..idx.n_x {
            lp.lower[j] = lp.lower[j].max(self.inst.x_bounds.lo[j]);
            lp.upper[j] = lp.upper[j].min(self.inst.x_bounds.hi[j]);
        }
        for row in &self.inst.x_bounds.rows {
            let r = dense_row(&row.coeffs, 0);
            match row.sense {
                Sense::Ge => lp.add_ge(r, row.rhs),
                Sense::Le => lp.add_le(r, row.rhs),
                Sense::Eq => lp.add_eq(r, row.rhs),
            };
        }
    }
}

pub(crate) fn stage_solution(sol: LpSolution) -> StageSolution {
    StageSolution { value: sol.objective, y: sol.x, phi: sol.eq_duals, pi: sol.ge_duals }
}

/// Sparse row of the nonzeros of `coeffs`, shifted by `base`.
pub fn dense_row(coeffs: &[f64], base: usize) -> SparseRow {
    coeffs.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (base + j, v)).collect()
}

// ---------------------------------------------------------------- policy export

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PolicyDoc {
    pub x: Vec<f64>,
    /// Per stage `{rows, cols, triplets}`.
    #[serde(rename = "P")]
    pub p: Vec<crate::model::MatrixDoc>,
    pub q: Vec<Vec<f64>>,
}

impl PolicyDoc {
    pub fn new(ts: &TwoStageProblem, xhat: &[f64]) -> Self {
        let pol = ts.policy(xhat);
        Self {
            x: xhat[..ts.index.n_x].to_vec(),
            p: pol.p.iter().map(crate::model::MatrixDoc::from_matrix).collect(),
            q: pol.q,
        }
    }
}

// ---------------------------------------------------------------- affine baseline

/// Linear expression `terms . v + constant` over LP variables.
#[derive(Clone, Debug, Default)]
struct Affine {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn add(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
    }

    fn scaled(&self, k: f64) -> Affine {
        Affine { terms: self.terms.iter().map(|&(j, v)| (j, k * v)).collect(), constant: k * self.constant }
    }
}

/// Adds rows enforcing `max_{u in U} g(v)'u + b(v) <= 0` through the dual of
/// the inner maximization.
fn add_robust_le(lp: &mut LinearProgram, inst: &Instance, g: &[Affine], b: &Affine) {
    let u = &inst.u;
    let n_u = u.dim();
    let nd = u.d.rows;
    let lam = lp.add_vars(nd, 0.0, f64::INFINITY);
    let mup = lp.add_vars(n_u, 0.0, f64::INFINITY);
    let mum = lp.add_vars(n_u, 0.0, f64::INFINITY);
    for c in 0..n_u {
        // D'lam + mu+ - mu- = g_c(v)
        let mut row: SparseRow = Vec::new();
        for i in 0..nd {
            let v = u.d.get(i, c);
            if v != 0.0 {
                row.push((lam + i, v));
            }
        }
        row.push((mup + c, 1.0));
        row.push((mum + c, -1.0));
        for &(j, v) in &g[c].terms {
            row.push((j, -v));
        }
        lp.add_eq(row, g[c].constant);
    }
    // e'lam + hi'mu+ - lo'mu- + b(v) <= 0
    let mut row: SparseRow = Vec::new();
    for i in 0..nd {
        row.push((lam + i, u.e[i]));
    }
    for c in 0..n_u {
        row.push((mup + c, u.hi[c]));
        row.push((mum + c, -u.lo[c]));
    }
    row.extend(b.terms.iter().copied());
    lp.add_le(row, -b.constant);
}

/// Variable layout of the affine counterpart LP.
#[derive(Clone, Debug)]
pub struct AdrLayout {
    /// `xhat` occupies `0..index.dim()` with the [`XhatIndex`] layout.
    pub index: XhatIndex,
    /// Start of `Y_t` (n_y x prefix_dim(t), row-major) per stage.
    pub y_off: Vec<usize>,
    /// Start of `y0_t` per stage.
    pub y0_off: Vec<usize>,
    pub tau: usize,
}

/// LP for affine rules on both `s_t` and `y_t`, every row robustified over U.
pub fn build_adr_counterpart(inst: &Instance) -> (LinearProgram, AdrLayout) {
    let index = XhatIndex::new(inst);
    let mut lp = LinearProgram::new();
    let inf = f64::INFINITY;
    lp.add_vars(index.dim(), -inf, inf);
    let mut y_off = Vec::new();
    let mut y0_off = Vec::new();
    for t in 0..inst.horizon() {
        let st = &inst.stages[t];
        y_off.push(lp.add_vars(st.n_y * index.p_cols(t), -inf, inf));
        y0_off.push(lp.add_vars(st.n_y, -inf, inf));
    }
    let tau = lp.add_var(1.0, -inf, inf);
    for j in 0..inst.n_x {
        lp.objective[index.x(j)] = inst.c[j];
    }
    let layout = AdrLayout { index, y_off, y0_off, tau };
    let ts = TwoStageProblem { inst: inst.clone(), index: layout.index.clone() };
    ts.add_first_stage_constraints(&mut lp, inf);

    let idx = &layout.index;
    let n_u = inst.n_u_total();
    let yv = |t: usize, j: usize, c: usize| layout.y_off[t] + j * idx.p_cols(t) + c;

    // Objective epigraph: max_u sum_t d_t's_t + f_t'y_t - tau <= 0.
    let mut g = vec![Affine::default(); n_u];
    let mut b = Affine::default();
    b.add(layout.tau, -1.0);
    for (t, st) in inst.stages.iter().enumerate() {
        for r in 0..st.n_s {
            b.add(idx.q(t, r), st.d[r]);
            for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                gc.add(idx.p(t, r, c), st.d[r]);
            }
        }
        for j in 0..st.n_y {
            b.add(layout.y0_off[t] + j, st.f[j]);
            for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                gc.add(yv(t, j, c), st.f[j]);
            }
        }
    }
    add_robust_le(&mut lp, inst, &g, &b);

    for (t, st) in inst.stages.iter().enumerate() {
        let off = inst.u_offset(t);
        // Equality row i as an affine function of u:
        // T x + A s_t + B s_{t-1} + W y_t - h0 - H u_t.
        for i in 0..st.n_eq() {
            let mut g = vec![Affine::default(); n_u];
            let mut b = Affine { terms: Vec::new(), constant: -st.h0[i] };
            for j in 0..inst.n_x {
                b.add(idx.x(j), st.t_mat.get(i, j));
            }
            for r in 0..st.n_s {
                let a = st.a.get(i, r);
                b.add(idx.q(t, r), a);
                for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                    gc.add(idx.p(t, r, c), a);
                }
            }
            if t == 0 {
                b.constant += dot(st.b.row(i), &inst.s0);
            } else {
                for r in 0..idx.n_s(t - 1) {
                    let bv = st.b.get(i, r);
                    b.add(idx.q(t - 1, r), bv);
                    for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t - 1)) {
                        gc.add(idx.p(t - 1, r, c), bv);
                    }
                }
            }
            for j in 0..st.n_y {
                let w = st.w.get(i, j);
                b.add(layout.y0_off[t] + j, w);
                for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                    gc.add(yv(t, j, c), w);
                }
            }
            for c in 0..st.n_u {
                g[off + c].constant -= st.h.get(i, c);
            }
            let neg: Vec<Affine> = g.iter().map(|a| a.scaled(-1.0)).collect();
            add_robust_le(&mut lp, inst, &g, &b);
            add_robust_le(&mut lp, inst, &neg, &b.scaled(-1.0));
        }
        // Inequality row i: L x + E s_t + G y_t - m0 - M u_t >= 0, i.e.
        // max_u of its negation <= 0.
        for i in 0..st.n_in() {
            let mut g = vec![Affine::default(); n_u];
            let mut b = Affine { terms: Vec::new(), constant: st.m0[i] };
            for j in 0..inst.n_x {
                b.add(idx.x(j), -st.l.get(i, j));
            }
            for r in 0..st.n_s {
                let e = st.e.get(i, r);
                b.add(idx.q(t, r), -e);
                for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                    gc.add(idx.p(t, r, c), -e);
                }
            }
            for j in 0..st.n_y {
                let gv = st.g.get(i, j);
                b.add(layout.y0_off[t] + j, -gv);
                for (c, gc) in g.iter_mut().enumerate().take(idx.p_cols(t)) {
                    gc.add(yv(t, j, c), -gv);
                }
            }
            for c in 0..st.n_u {
                g[off + c].constant += st.m.get(i, c);
            }
            add_robust_le(&mut lp, inst, &g, &b);
        }
    }
    (lp, layout)
}

#[derive(Clone, Debug)]
pub struct AdrSolution {
    pub value: f64,
    /// The `(x, P, q)` part of the optimal affine policy.
    pub xhat: Vec<f64>,
}

/// Optimal value and state policy of the fully affine baseline.
pub fn solve_adr(inst: &Instance) -> Result<AdrSolution, TransformError> {
    let (lp, layout) = build_adr_counterpart(inst);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(TransformError::Counterpart(sol.status));
    }
    Ok(AdrSolution { value: sol.objective, xhat: sol.x[..layout.index.dim()].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polytope, StageData, XBounds};

    /// Two stages, one state, two controls, box U in R^2.
    pub(crate) fn toy() -> Instance {
        let mut s1 = StageData::zeros(1, 1, 1, 2, 1, 1, 3);
        s1.a = Matrix::from_rows(&[vec![1.0]]);
        s1.b = Matrix::from_rows(&[vec![-1.0]]);
        s1.w = Matrix::from_rows(&[vec![-1.0, 0.0]]);
        s1.h = Matrix::from_rows(&[vec![-1.0]]);
        s1.t_mat = Matrix::from_rows(&[vec![0.5]]);
        s1.g = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        s1.e = Matrix::from_rows(&[vec![-1.0], vec![2.0], vec![0.0]]);
        s1.f = vec![1.0, 1.0];
        s1.d = vec![0.3];
        let mut s2 = s1.clone();
        s2.t_mat = Matrix::zeros(1, 1);
        s2.l = Matrix::from_rows(&[vec![1.0], vec![0.0], vec![0.0]]);
        Instance {
            n_x: 1,
            c: vec![1.0],
            s0: vec![2.0],
            x_bounds: XBounds { lo: vec![0.0], hi: vec![5.0], rows: Vec::new() },
            stages: vec![s1, s2],
            u: Polytope::boxed(vec![1.0, 0.5], vec![3.0, 2.0]),
        }
    }

    #[test]
    fn dimension_formula() {
        let inst = toy();
        let idx = XhatIndex::new(&inst);
        assert_eq!(idx.dim(), 1 + (1 + 1) + (2 + 1));
        let mut seen = vec![false; idx.dim()];
        seen[idx.x(0)] = true;
        for t in 0..2 {
            seen[idx.q(t, 0)] = true;
            for c in 0..idx.p_cols(t) {
                assert!(!seen[idx.p(t, 0, c)]);
                seen[idx.p(t, 0, c)] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    #[should_panic(expected = "causal")]
    fn future_column_is_rejected() {
        let idx = XhatIndex::new(&toy());
        idx.p(0, 0, 1);
    }

    #[test]
    fn state_policy_arithmetic() {
        let pol = AffineStatePolicy {
            p: vec![Matrix::from_rows(&[vec![0.0]]), Matrix::from_rows(&[vec![1.0, 2.0]])],
            q: vec![vec![0.0], vec![3.0]],
            n_u: 2,
        };
        let s = evaluate_state_policy(&pol, &[4.0, 5.0]).unwrap();
        assert_eq!(s[1], vec![17.0]);
        assert!(evaluate_state_policy(&pol, &[1.0]).is_err());
    }

    #[test]
    fn first_stage_value_arithmetic() {
        let mut inst = toy();
        inst.stages.truncate(1);
        inst.u = Polytope::boxed(vec![0.0], vec![1.0]);
        inst.stages[0].d = vec![3.0];
        inst.c = vec![1.0];
        let ts = build_two_stage(&inst);
        let mut xhat = vec![0.0; ts.dim()];
        assert_eq!(ts.first_stage_value(&xhat), 0.0);
        xhat[0] = 2.0;
        xhat[ts.index.q(0, 0)] = 4.0;
        assert_eq!(ts.first_stage_value(&xhat), 14.0);
    }

    #[test]
    fn coupling_and_rows_in_u_agree_with_rhs() {
        let ts = build_two_stage(&toy());
        let xhat: Vec<f64> = (0..ts.dim()).map(|k| 0.1 * k as f64 - 0.2).collect();
        let u = [1.7, 0.9];
        for t in 0..2 {
            let (eq, ge) = ts.rhs(t, &xhat, &u);
            let cp = ts.coupling(t, &u);
            let ceq = cp.c_eq.mul_vec(&xhat);
            let cin = cp.c_in.mul_vec(&xhat);
            let ru = ts.rows_in_u(t, &xhat);
            let keq = ru.k_eq.mul_vec(&u);
            let kin = ru.k_in.mul_vec(&u);
            for i in 0..eq.len() {
                assert!((eq[i] - (cp.b_eq[i] - ceq[i])).abs() < 1e-12);
                assert!((eq[i] - (ru.r_eq[i] - keq[i])).abs() < 1e-12);
            }
            for i in 0..ge.len() {
                assert!((ge[i] - (cp.b_in[i] - cin[i])).abs() < 1e-12);
                assert!((ge[i] - (ru.r_in[i] - kin[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stagewise_recourse_equals_joint_lp() {
        let ts = build_two_stage(&toy());
        let mut xhat = vec![0.0; ts.dim()];
        xhat[ts.index.q(0, 0)] = 1.0;
        xhat[ts.index.q(1, 0)] = 5.0;
        xhat[ts.index.p(1, 0, 1)] = -0.5;
        for u in [[1.0, 0.5], [3.0, 2.0], [2.2, 1.1]] {
            let Recourse::Feasible { value, .. } = ts.recourse(&xhat, &u).unwrap() else { panic!() };
            let joint = solve_lp(&ts.joint_recourse_lp(&xhat, &u)).unwrap();
            assert!((joint.objective - value).abs() < 1e-9);
        }
    }

    #[test]
    fn adr_with_vacuous_uncertainty_equals_nominal_lp() {
        let mut inst = toy();
        for s in &mut inst.stages {
            s.h = Matrix::zeros(s.h.rows, s.h.cols);
        }
        let adr = solve_adr(&inst).unwrap();
        // Nominal: deterministic LP over x, s, y.
        let single = {
            let mut i2 = inst.clone();
            i2.u = Polytope::boxed(vec![2.0, 1.0], vec![2.0, 1.0]);
            solve_adr(&i2).unwrap().value
        };
        assert!((adr.value - single).abs() < 1e-7, "{} vs {single}", adr.value);
    }

    #[test]
    fn adr_at_singleton_equals_deterministic_lp() {
        let mut inst = toy();
        let point = vec![2.5, 1.5];
        inst.u = Polytope::boxed(point.clone(), point.clone());
        let adr = solve_adr(&inst).unwrap();
        // Deterministic LP: variables x, s_0, s_1, y_0, y_1.
        let ts = build_two_stage(&inst);
        let mut lp = LinearProgram::new();
        lp.add_vars(ts.dim(), f64::NEG_INFINITY, f64::INFINITY);
        ts.add_first_stage_constraints(&mut lp, f64::INFINITY);
        lp.objective = ts.objective_gradient(&point);
        for t in 0..2 {
            let cp = ts.coupling(t, &point);
            let base = lp.num_vars();
            for j in 0..2 {
                lp.add_var(inst.stages[t].f[j], f64::NEG_INFINITY, f64::INFINITY);
            }
            for i in 0..cp.b_eq.len() {
                let mut row = dense_row(cp.c_eq.row(i), 0);
                row.extend(dense_row(inst.stages[t].w.row(i), base));
                lp.add_eq(row, cp.b_eq[i]);
            }
            for i in 0..cp.b_in.len() {
                let mut row = dense_row(cp.c_in.row(i), 0);
                row.extend(dense_row(inst.stages[t].g.row(i), base));
                lp.add_ge(row, cp.b_in[i]);
            }
        }
        let det = solve_lp(&lp).unwrap();
        assert_eq!(det.status, LpStatus::Optimal);
        assert!((adr.value - det.objective).abs() < 1e-7, "{} vs {}", adr.value, det.objective);
    }
}
