//! Proximal bundle method over `xhat`.
//!
//! Each iteration solves the regularized cut model
//! `min eta + |v - z|^2 / 2t` around the stability center `z`, evaluates F at
//! the minimizer and either moves the center (serious step), keeps it and
//! shrinks `t` (null step) or only adds feasibility cuts.

use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};
use msro_optkernel::{solve_qp, KernelError, QpSolution, QuadraticProgram, SparseRow};
use serde::Serialize;
use thiserror::Error;

use crate::adversarial::{AdversarialConfig, AdversarialError, Adversary, Cut, CutKind, Domain};
use crate::model::{dot, Sense};
use crate::transform::{dense_row, solve_adr, TwoStageProblem};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("invalid bundle configuration: {0}")]
    Config(String),
    #[error("iteration {k}: {source}")]
    Adversarial { k: usize, source: AdversarialError },
    #[error("iteration {k}: master problem: {source}")]
    Master { k: usize, source: KernelError },
    #[error("no feasible affine state policy found within {0} feasibility rounds")]
    NoFeasibleStart(usize),
    #[error("cut {index} has linearization error {error} at the center")]
    CorruptedCut { index: usize, error: f64 },
    #[error("iteration {k}: aggregate identity violated by {residual}")]
    Identity { k: usize, residual: f64 },
    #[error("write log: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BundleError>;

#[derive(Clone, Debug)]
pub struct BundleConfig {
    /// Stop when `delta <= delta_tol * (1 + |F(z0)|)`.
    pub delta_tol: f64,
    /// Descent fraction for serious steps.
    pub m: f64,
    pub t0: f64,
    pub t_min: f64,
    pub t_shrink: f64,
    pub max_iter: usize,
    /// Initial half-width of the box on every `xhat` coordinate.
    pub trust_radius: f64,
    /// How many times the box may grow 10x when active at the result.
    pub max_enlargements: usize,
    pub adversarial: AdversarialConfig,
    /// Fail on a violated aggregate identity with the box inactive instead
    /// of logging it.
    pub strict_identities: bool,
    /// Starting point; the ADR policy when `None`.
    pub z0: Option<Vec<f64>>,
    /// Budget for the feasibility-only start when no ADR policy exists.
    pub phase1_rounds: usize,
    /// Reuse at most this many recent worst cases as MILP incumbent hints.
    pub hint_count: usize,
    /// Doublings tried along a serious step on which the model was accurate
    /// (t never grows, so long linear stretches would otherwise take one
    /// short step per iteration); 0 disables.
    pub extrapolation: usize,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            delta_tol: 1e-5,
            m: 0.1,
            t0: 1.0,
            t_min: 1e-3,
            t_shrink: 0.5,
            max_iter: 500,
            trust_radius: 1e3,
            max_enlargements: 3,
            adversarial: AdversarialConfig::default(),
            strict_identities: false,
            z0: None,
            phase1_rounds: 200,
            hint_count: 16,
            extrapolation: 20,
        }
    }
}

impl BundleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BundleError::Config(m.into()));
        if !(self.m > 0.0 && self.m < 1.0) {
            return bad("m must lie in (0, 1)");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t0) {
            return bad("need 0 < t_min <= t0");
        }
        if !(self.t_shrink > 0.0 && self.t_shrink <= 1.0) {
            return bad("t_shrink must lie in (0, 1]");
        }
        if !(self.delta_tol >= 0.0) {
            return bad("delta_tol must be nonnegative");
        }
        if !(self.trust_radius > 0.0) {
            return bad("trust radius must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Initial,
    Serious,
    Null,
    Feasibility,
    Converged,
}

impl StepKind {
    fn as_str(self) -> &'static str {
        match self {
            StepKind::Initial => "initial",
            StepKind::Serious => "serious",
            StepKind::Null => "null",
            StepKind::Feasibility => "feasibility",
            StepKind::Converged => "converged",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub step: StepKind,
    pub query: Vec<f64>,
    /// `F(query)`, or the largest violation when the query is infeasible.
    pub f_or_omega: f64,
    pub f_center: f64,
    pub delta: f64,
    /// Cut model at the query.
    pub model: f64,
    pub g_hat: Vec<f64>,
    pub g_norm: f64,
    pub e_hat: f64,
    pub t: f64,
    pub time_ms: f64,
    pub box_active: bool,
    /// `|model - (F(z) - t|g|^2 - e)|`.
    pub identity_model: f64,
    /// `|delta - (t/2 |g|^2 + e)|`.
    pub identity_delta: f64,
    pub inexact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Solution {
    pub xhat: Vec<f64>,
    /// `F` at the final center; an upper bound on the optimum.
    pub ub: f64,
    pub f_z0: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
    #[serde(skip)]
    pub cuts: Vec<Cut>,
    /// Scenario of every adversarial solve, in order.
    pub harvested: Vec<Vec<f64>>,
    pub trust_radius: f64,
    pub box_active: bool,
}

impl Solution {
    /// Sum of `delta_k` over serious steps.
    pub fn serious_delta_sum(&self) -> f64 {
        self.log.iter().filter(|r| r.step == StepKind::Serious).map(|r| r.delta).sum()
    }
}

/// Result of evaluating F at a point.
pub enum Evaluation {
    Feasible { value: f64, cut: Cut },
    Infeasible { violation: f64, cuts: Vec<Cut> },
}

/// Domain test, then the worst-case solve when inside dom F.
pub fn evaluate_f(adv: &Adversary, xhat: &[f64], hints: &[Vec<f64>]) -> std::result::Result<Evaluation, AdversarialError> {
    match adv.domain(xhat)? {
        Domain::Infeasible(cuts) => {
            let violation = cuts.iter().map(|c| c.value).fold(0.0, f64::max);
            Ok(Evaluation::Infeasible { violation, cuts })
        }
        Domain::Feasible => {
            let res = adv.solve_worst_case(xhat, hints)?;
            let cut = adv.optimality_cut(xhat, &res);
            Ok(Evaluation::Feasible { value: cut.value, cut })
        }
    }
}

/// `F(z) - [value_l + g_l'(z - xhat_l)]` for each optimality cut.
pub fn linearization_errors(cuts: &[Cut], z: &[f64], f_z: f64) -> Vec<f64> {
    cuts.iter().filter(|c| c.kind == CutKind::Optimality).map(|c| f_z - c.eval(z)).collect()
}

/// Cut model `max_l value_l + g_l'(v - xhat_l)` over optimality cuts.
pub fn cut_model(cuts: &[Cut], v: &[f64]) -> f64 {
    cuts.iter().filter(|c| c.kind == CutKind::Optimality).map(|c| c.eval(v)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn expected_decrease(f_z: f64, model_next: f64, x_next: &[f64], z: &[f64], t: f64) -> f64 {
    let d2: f64 = x_next.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    f_z - model_next - d2 / (2.0 * t)
}

pub fn step_decision(f_z: f64, f_next: f64, delta: f64, m: f64) -> StepKind {
    if f_z - f_next >= m * delta {
        StepKind::Serious
    } else {
        StepKind::Null
    }
}

pub fn update_t(t: f64, step: StepKind, cfg: &BundleConfig) -> f64 {
    match step {
        StepKind::Null => (cfg.t_shrink * t).max(cfg.t_min),
        _ => t,
    }
}

/// Layout of the master QP: `xhat` first, then `eta` if present.
pub struct Master {
    pub qp: QuadraticProgram,
    /// Row index of each cut (all cuts are `>=` rows, in pool order).
    pub cut_rows: Vec<usize>,
    /// `(row, a, b)` of the first-stage rows expressed as `a'v >= b`.
    pub omega_rows: Vec<(usize, SparseRow, f64)>,
    pub has_eta: bool,
}

/// Regularized master over the cut pool. Without optimality cuts there is
/// no `eta` and the problem is the projection of `z` onto the feasibility
/// cuts.
pub fn build_master(ts: &TwoStageProblem, cuts: &[Cut], z: &[f64], t: f64, radius: f64) -> Master {
    let dim = ts.dim();
    let has_eta = cuts.iter().any(|c| c.kind == CutKind::Optimality);
    let n = dim + usize::from(has_eta);
    let mut qp = QuadraticProgram {
        n,
        prox_dim: dim,
        center: z.to_vec(),
        t,
        linear: vec![0.0; n],
        lower: vec![-radius; n],
        upper: vec![radius; n],
        ..QuadraticProgram::default()
    };
    if has_eta {
        qp.linear[dim] = 1.0;
        qp.lower[dim] = f64::NEG_INFINITY;
        qp.upper[dim] = f64::INFINITY;
    }
    let xb = &ts.inst.x_bounds;
    for j in 0..ts.index.n_x {
        qp.lower[j] = qp.lower[j].max(xb.lo[j]);
        qp.upper[j] = qp.upper[j].min(xb.hi[j]);
    }
    let mut cut_rows = Vec::with_capacity(cuts.len());
    for c in cuts {
        // eta - g'v >= value - g'point  or  -g'v >= value - g'point
        let mut row: SparseRow = c.grad.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(k, &g)| (k, -g)).collect();
        if c.kind == CutKind::Optimality {
            row.push((dim, 1.0));
        }
        cut_rows.push(qp.ge_rows.len());
        qp.ge_rows.push(row);
        qp.ge_rhs.push(c.value - dot(&c.grad, &c.point));
    }
    let mut omega_rows = Vec::new();
    for r in &xb.rows {
        let a = dense_row(&r.coeffs, 0);
        let neg: SparseRow = a.iter().map(|&(j, v)| (j, -v)).collect();
        match r.sense {
            Sense::Ge => {
                omega_rows.push((qp.ge_rows.len(), a.clone(), r.rhs));
                qp.ge_rows.push(a);
                qp.ge_rhs.push(r.rhs);
            }
            Sense::Le => {
                omega_rows.push((qp.ge_rows.len(), neg.clone(), -r.rhs));
                qp.ge_rows.push(neg);
                qp.ge_rhs.push(-r.rhs);
            }
            Sense::Eq => {
                qp.eq_rows.push(a);
                qp.eq_rhs.push(r.rhs);
            }
        }
    }
    Master { qp, cut_rows, omega_rows, has_eta }
}

/// Aggregate subgradient and error from the master multipliers.
///
/// With stationarity `(v - z)/t + c = sum lambda_i a_i` over all `a'v >= b`
/// rows (cuts, first-stage rows and box bounds),
/// `g_hat = (z - v)/t` restricted to `xhat` and `e_hat` collects the
/// multiplier-weighted gaps of every row at `z`:
/// optimality cuts contribute their linearization error, other rows
/// `lambda (a'z - b)`. Then `model(v) = F(z) - t|g|^2 - e` and
/// `delta = t/2 |g|^2 + e` hold exactly at the master optimum.
pub fn aggregate_certificate(
    master: &Master,
    sol: &QpSolution,
    cuts: &[Cut],
    z: &[f64],
    f_z: f64,
) -> (Vec<f64>, f64) {
    let dim = master.qp.prox_dim;
    let mut g = vec![0.0; dim];
    let mut e = 0.0;
    for (l, c) in cuts.iter().enumerate() {
        let lam = sol.ge_multipliers[master.cut_rows[l]];
        if lam == 0.0 {
            continue;
        }
        for k in 0..dim {
            g[k] += lam * c.grad[k];
        }
        e += match c.kind {
            CutKind::Optimality => lam * (f_z - c.eval(z)),
            CutKind::Feasibility => -lam * c.eval(z),
        };
    }
    for (row, a, b) in &master.omega_rows {
        let lam = sol.ge_multipliers[*row];
        for &(j, v) in a {
            g[j] -= lam * v;
        }
        e += lam * (msro_optkernel::lp::row_dot(a, z) - b);
    }
    for (i, (a, b)) in master.qp.eq_rows.iter().zip(&master.qp.eq_rhs).enumerate() {
        let lam = sol.eq_multipliers[i];
        for &(j, v) in a {
            g[j] -= lam * v;
        }
        e += lam * (msro_optkernel::lp::row_dot(a, z) - b);
    }
    for k in 0..dim {
        let (lo, hi) = (sol.lower_multipliers[k], sol.upper_multipliers[k]);
        g[k] += hi - lo;
        // multipliers of infinite bounds are zero
        if lo != 0.0 {
            e += lo * (z[k] - master.qp.lower[k]);
        }
        if hi != 0.0 {
            e += hi * (master.qp.upper[k] - z[k]);
        }
    }
    (g, e)
}

struct State<'a> {
    ts: &'a TwoStageProblem,
    cfg: &'a BundleConfig,
    adv: Adversary<'a>,
    cuts: Vec<Cut>,
    harvested: Vec<Vec<f64>>,
    log: Vec<IterationRecord>,
    start: Instant,
}

impl State<'_> {
    fn hints(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for u in self.harvested.iter().rev() {
            if out.len() >= self.cfg.hint_count {
                break;
            }
            if !out.iter().any(|v| v.iter().zip(u).all(|(a, b)| (a - b).abs() <= 1e-9)) {
                out.push(u.clone());
            }
        }
        out
    }

    fn evaluate(&mut self, k: usize, xhat: &[f64]) -> Result<Evaluation> {
        let hints = self.hints();
        let ev = evaluate_f(&self.adv, xhat, &hints).map_err(|source| BundleError::Adversarial { k, source })?;
        match &ev {
            Evaluation::Feasible { cut, .. } => {
                self.harvested.push(cut.u.clone());
                self.cuts.push(cut.clone());
            }
            Evaluation::Infeasible { cuts, .. } => {
                for c in cuts {
                    self.harvested.push(c.u.clone());
                    self.cuts.push(c.clone());
                }
            }
        }
        Ok(ev)
    }

    fn master(&self, k: usize, z: &[f64], t: f64, radius: f64) -> Result<(Master, QpSolution)> {
        let master = build_master(self.ts, &self.cuts, z, t, radius);
        let sol = solve_qp(&master.qp).map_err(|source| BundleError::Master { k, source })?;
        Ok((master, sol))
    }

    fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}

/// `v` in `Omega_0` and inside the trust box.
fn in_first_stage_set(ts: &TwoStageProblem, v: &[f64], radius: f64) -> bool {
    let xb = &ts.inst.x_bounds;
    let tol = |b: f64| 1e-9 * (1.0 + b.abs());
    v.iter().all(|x| x.abs() <= radius)
        && (0..ts.index.n_x).all(|j| v[j] >= xb.lo[j] - tol(xb.lo[j]) && v[j] <= xb.hi[j] + tol(xb.hi[j]))
        && xb.rows.iter().all(|r| {
            let a = dot(&r.coeffs, &v[..ts.index.n_x]);
            let tol = tol(r.rhs);
            match r.sense {
                Sense::Ge => a >= r.rhs - tol,
                Sense::Le => a <= r.rhs + tol,
                Sense::Eq => (a - r.rhs).abs() <= tol,
            }
        })
}

fn box_active(ts: &TwoStageProblem, v: &[f64], radius: f64) -> bool {
    let xb = &ts.inst.x_bounds;
    v.iter().enumerate().any(|(k, &x)| {
        // a box face that coincides with a finite x bound is not artificial
        let at_lo = x <= -radius + 1e-6 * radius && !(k < ts.index.n_x && xb.lo[k] >= -radius);
        let at_hi = x >= radius - 1e-6 * radius && !(k < ts.index.n_x && xb.hi[k] <= radius);
        at_lo || at_hi
    })
}

/// Feasibility-only phase: project onto the feasibility cuts until the
/// projection lies in dom F.
fn phase_one(st: &mut State, z: &[f64], radius: f64) -> Result<(Vec<f64>, f64)> {
    let mut point = z.to_vec();
    for k in 0..st.cfg.phase1_rounds {
        match st.evaluate(k, &point)? {
            Evaluation::Feasible { value, .. } => return Ok((point, value)),
            Evaluation::Infeasible { .. } => {
                let feas: Vec<Cut> = st.cuts.iter().filter(|c| c.kind == CutKind::Feasibility).cloned().collect();
                let master = build_master(st.ts, &feas, z, 1.0, radius);
                let sol = match solve_qp(&master.qp) {
                    Ok(s) => s,
                    Err(KernelError::QpInfeasible) => return Err(BundleError::NoFeasibleStart(k + 1)),
                    Err(source) => return Err(BundleError::Master { k, source }),
                };
                point = sol.x[..st.ts.dim()].to_vec();
            }
        }
    }
    Err(BundleError::NoFeasibleStart(st.cfg.phase1_rounds))
}

/// Runs the proximal bundle method from the ADR policy (or `cfg.z0`).
pub fn run(ts: &TwoStageProblem, cfg: &BundleConfig) -> Result<Solution> {
    cfg.validate()?;
    let adv = Adversary::new(ts, cfg.adversarial.clone()).map_err(|source| BundleError::Adversarial { k: 0, source })?;
    let mut st = State { ts, cfg, adv, cuts: Vec::new(), harvested: Vec::new(), log: Vec::new(), start: Instant::now() };

    let start = match &cfg.z0 {
        Some(z) => Some(z.clone()),
        None => match solve_adr(&ts.inst) {
            Ok(a) => Some(a.xhat),
            Err(e) => {
                warn!("ADR start unavailable ({e}); running the feasibility phase");
                None
            }
        },
    };
    let mut radius = cfg.trust_radius;
    if let Some(z) = &start {
        let m = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        while m > radius * (1.0 - 1e-9) {
            radius *= 10.0;
        }
    }
    let (mut z, mut f_z) = match start {
        Some(z) => match st.evaluate(0, &z)? {
            Evaluation::Feasible { value, .. } => (z, value),
            Evaluation::Infeasible { violation, .. } => {
                warn!("start point violates recourse feasibility by {violation}; running the feasibility phase");
                phase_one(&mut st, &z, radius)?
            }
        },
        None => phase_one(&mut st, &vec![0.0; ts.dim()], radius)?,
    };
    let f_z0 = f_z;
    st.log.push(IterationRecord {
        k: 0,
        step: StepKind::Initial,
        query: z.clone(),
        f_or_omega: f_z,
        f_center: f_z,
        delta: f64::NAN,
        model: f_z,
        g_hat: Vec::new(),
        g_norm: f64::NAN,
        e_hat: f64::NAN,
        t: cfg.t0,
        time_ms: st.elapsed_ms(),
        box_active: false,
        identity_model: 0.0,
        identity_delta: 0.0,
        inexact: false,
    });
    let tol = cfg.delta_tol * (1.0 + f_z0.abs());
    let mut t = cfg.t0;
    let mut enlargements = 0;
    let mut converged = false;
    let mut last_box_active = false;
    let mut k = 0;
    while k < cfg.max_iter {
        k += 1;
        let (master, sol) = st.master(k, &z, t, radius)?;
        let x_next = sol.x[..ts.dim()].to_vec();
        let model = cut_model(&st.cuts, &x_next);
        let delta = expected_decrease(f_z, model, &x_next, &z, t);
        let (g_hat, e_hat) = aggregate_certificate(&master, &sol, &st.cuts, &z, f_z);
        let g2 = dot(&g_hat, &g_hat);
        let identity_model = (model - (f_z - t * g2 - e_hat)).abs();
        let identity_delta = (delta - (0.5 * t * g2 + e_hat)).abs();
        let active = box_active(ts, &x_next, radius);
        let id_tol = 1e-6 * (1.0 + f_z.abs());
        if !active && identity_model.max(identity_delta) > id_tol {
            if cfg.strict_identities {
                return Err(BundleError::Identity { k, residual: identity_model.max(identity_delta) });
            }
            warn!("iteration {k}: aggregate identities off by {}", identity_model.max(identity_delta));
        }
        let mut rec = IterationRecord {
            k,
            step: StepKind::Converged,
            query: x_next.clone(),
            f_or_omega: f64::NAN,
            f_center: f_z,
            delta,
            model,
            g_norm: g2.sqrt(),
            g_hat,
            e_hat,
            t,
            time_ms: 0.0,
            box_active: active,
            identity_model,
            identity_delta,
            inexact: false,
        };
        if delta <= tol {
            let center_active = box_active(ts, &z, radius) || active;
            if center_active && enlargements < cfg.max_enlargements {
                enlargements += 1;
                radius *= 10.0;
                info!("trust box active at the solution; enlarging to {radius}");
                rec.time_ms = st.elapsed_ms();
                rec.step = StepKind::Null;
                rec.f_or_omega = f_z;
                st.log.push(rec);
                continue;
            }
            last_box_active = center_active;
            rec.f_or_omega = f_z;
            rec.time_ms = st.elapsed_ms();
            st.log.push(rec);
            converged = true;
            break;
        }
        match st.evaluate(k, &x_next)? {
            Evaluation::Infeasible { violation, .. } => {
                rec.step = StepKind::Feasibility;
                rec.f_or_omega = violation;
            }
            Evaluation::Feasible { value, cut } => {
                rec.f_or_omega = value;
                rec.inexact = cut.inexact;
                let step = step_decision(f_z, value, delta, cfg.m);
                rec.step = step;
                if step == StepKind::Serious {
                    let accurate = f_z - value >= 0.9 * (f_z - model);
                    let d: Vec<f64> = x_next.iter().zip(&z).map(|(a, b)| a - b).collect();
                    let base = std::mem::replace(&mut z, x_next);
                    f_z = value;
                    if accurate {
                        let mut s = 2.0;
                        for _ in 0..cfg.extrapolation {
                            let y: Vec<f64> = base.iter().zip(&d).map(|(b, d)| b + s * d).collect();
                            if !in_first_stage_set(ts, &y, radius) {
                                break;
                            }
                            match st.evaluate(k, &y)? {
                                Evaluation::Feasible { value, .. } if value < f_z => {
                                    z = y;
                                    f_z = value;
                                    s *= 2.0;
                                }
                                _ => break,
                            }
                        }
                        debug!("k={k} extrapolated to {}x the step", s / 2.0);
                    }
                    let errs = linearization_errors(&st.cuts, &z, f_z);
                    for (i, (e, c)) in errs.iter().zip(st.cuts.iter().filter(|c| c.kind == CutKind::Optimality)).enumerate() {
                        if *e < -1e-6 * (1.0 + f_z.abs()) && !c.inexact {
                            return Err(BundleError::CorruptedCut { index: i, error: *e });
                        }
                    }
                }
                t = update_t(t, step, cfg);
            }
        }
        rec.time_ms = st.elapsed_ms();
        debug!("k={k} step={} F={} delta={delta:.3e} t={t}", rec.step.as_str(), rec.f_or_omega);
        st.log.push(rec);
    }
    if !converged {
        warn!("bundle stopped at max_iter={} without meeting the tolerance", cfg.max_iter);
        last_box_active = box_active(ts, &z, radius);
    }
    if last_box_active {
        warn!("trust box is active at the returned policy; the bound is relative to the box");
    }
    Ok(Solution {
        xhat: z,
        ub: f_z,
        f_z0,
        iterations: k,
        converged,
        log: st.log,
        cuts: st.cuts,
        harvested: st.harvested,
        trust_radius: radius,
        box_active: last_box_active,
    })
}

/// Writes the iteration log as CSV. With `deterministic`, wall times are
/// written as zero so repeated runs are byte-identical.
pub fn write_log<W: Write>(log: &[IterationRecord], out: W, deterministic: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| BundleError::Io(std::io::Error::other(e));
    w.write_record(["k", "step", "F_or_omega", "delta", "g_norm", "e_hat", "t_k", "time_ms"]).map_err(io)?;
    for r in log {
        let time = if deterministic { 0.0 } else { r.time_ms };
        w.write_record([
            r.k.to_string(),
            r.step.as_str().to_string(),
            format!("{:.10e}", r.f_or_omega),
            format!("{:.6e}", r.delta),
            format!("{:.6e}", r.g_norm),
            format!("{:.6e}", r.e_hat),
            format!("{:.6e}", r.t),
            format!("{time:.3}"),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::CutKind;
    use crate::oracle::{brute_force_two_stage, enumerate_vertices, random_instance, RandomShape};
    use crate::transform::build_two_stage;

    fn cut(point: Vec<f64>, value: f64, grad: Vec<f64>) -> Cut {
        Cut { kind: CutKind::Optimality, point, value, grad, u: vec![], inexact: false }
    }

    #[test]
    fn arithmetic_of_delta_step_and_t() {
        let d = expected_decrease(10.0, 8.0, &[1.0, 1.0], &[0.0, 0.0], 1.0);
        assert_eq!(d, 1.0);
        assert_eq!(expected_decrease(3.0, 3.0, &[2.0], &[2.0], 0.5), 0.0);
        assert_eq!(step_decision(10.0, 8.0, 1.0, 0.1), StepKind::Serious);
        assert_eq!(step_decision(10.0, 9.99, 1.0, 0.5), StepKind::Null);
        let cfg = BundleConfig { t_min: 0.1, t_shrink: 0.5, ..BundleConfig::default() };
        assert_eq!(update_t(1.0, StepKind::Null, &cfg), 0.5);
        assert_eq!(update_t(0.15, StepKind::Null, &cfg), 0.1);
        assert_eq!(update_t(0.15, StepKind::Serious, &cfg), 0.15);
    }

    #[test]
    fn linearization_error_arithmetic() {
        let cuts = vec![cut(vec![0.0], 3.0, vec![1.0]), cut(vec![1.0], 5.0, vec![2.0])];
        assert_eq!(linearization_errors(&cuts, &[1.0], 5.0), vec![1.0, 0.0]);
    }

    fn free_problem(dim: usize) -> TwoStageProblem {
        let mut inst = random_instance(0, &RandomShape { horizon: 1, max_dim: 1, max_n_u: 1, hard_rows: false, compact: false });
        inst.n_x = dim;
        inst.c = vec![0.0; dim];
        inst.x_bounds = crate::model::XBounds::free(dim);
        for s in &mut inst.stages {
            s.t_mat = crate::model::Matrix::zeros(s.t_mat.rows, dim);
            s.l = crate::model::Matrix::zeros(s.l.rows, dim);
        }
        build_two_stage(&inst)
    }

    #[test]
    fn single_cut_master_is_a_gradient_step() {
        let ts = free_problem(2);
        let dim = ts.dim();
        let mut g = vec![0.0; dim];
        g[0] = 1.0;
        g[1] = -2.0;
        let z = vec![0.5; dim];
        let cuts = vec![cut(z.clone(), 4.0, g.clone())];
        let m = build_master(&ts, &cuts, &z, 0.25, 1e3);
        let sol = solve_qp(&m.qp).unwrap();
        for k in 0..dim {
            assert!((sol.x[k] - (z[k] - 0.25 * g[k])).abs() < 1e-9);
        }
        let (gh, eh) = aggregate_certificate(&m, &sol, &cuts, &z, 4.0);
        assert!(eh.abs() < 1e-12);
        for k in 0..dim {
            assert!((gh[k] - g[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_cuts_keep_the_center() {
        let ts = free_problem(1);
        let dim = ts.dim();
        let mut g = vec![0.0; dim];
        g[0] = 1.0;
        let z = vec![0.0; dim];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let cuts = vec![cut(z.clone(), 1.0, g), cut(z.clone(), 1.0, neg)];
        let m = build_master(&ts, &cuts, &z, 1.0, 1e3);
        let sol = solve_qp(&m.qp).unwrap();
        assert!(sol.x[..dim].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn master_matches_its_dual_value() {
        // primal optimum = F(z) - t/2 |g|^2 - e with the aggregate pair
        let ts = free_problem(2);
        let dim = ts.dim();
        let z = vec![0.0; dim];
        let mut cuts = Vec::new();
        for (i, s) in [(0usize, 1.0), (1, -1.0), (0, -0.5)] {
            let mut g = vec![0.0; dim];
            g[i] = s;
            let mut p = vec![0.0; dim];
            p[1 - i] = 0.3;
            cuts.push(cut(p, 2.0 + s, g));
        }
        let f_z = cut_model(&cuts, &z) + 0.7;
        let t = 0.8;
        let m = build_master(&ts, &cuts, &z, t, 1e3);
        let sol = solve_qp(&m.qp).unwrap();
        let (g, e) = aggregate_certificate(&m, &sol, &cuts, &z, f_z);
        let dual = f_z - 0.5 * t * dot(&g, &g) - e;
        assert!((sol.objective - dual).abs() < 1e-9, "{} vs {dual}", sol.objective);
    }

    #[test]
    fn converges_to_the_enumeration_optimum() {
        for seed in 0..3 {
            let inst = random_instance(seed, &RandomShape::default());
            let ts = build_two_stage(&inst);
            let cfg = BundleConfig { delta_tol: 1e-7, strict_identities: true, ..BundleConfig::default() };
            let sol = run(&ts, &cfg).unwrap();
            assert!(sol.converged);
            let verts = enumerate_vertices(&inst.u, 100_000);
            let exact = brute_force_two_stage(&ts, &verts, sol.trust_radius).unwrap();
            assert!(
                (sol.ub - exact.value).abs() <= 1e-4 * (1.0 + exact.value.abs()),
                "seed {seed}: {} vs {}",
                sol.ub,
                exact.value
            );
            let mut t_prev = f64::INFINITY;
            for r in &sol.log[1..] {
                assert!(r.t <= t_prev);
                t_prev = r.t;
                if r.step != StepKind::Converged {
                    assert!(r.delta >= -1e-9);
                }
            }
            assert!(sol.serious_delta_sum() <= (sol.f_z0 - exact.value) / cfg.m + 1e-6);
        }
    }

    #[test]
    fn log_is_csv_with_fixed_header() {
        let inst = random_instance(1, &RandomShape::default());
        let ts = build_two_stage(&inst);
        let sol = run(&ts, &BundleConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_log(&sol.log, &mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,step,F_or_omega,delta,g_norm,e_hat,t_k,time_ms\n"));
        assert_eq!(text.lines().count(), sol.log.len() + 1);
    }
}
