//! Robust multi-period inventory instances and the TPB/ADR gap study.
//!
//! Period `t` has one state (the stock level `s_t`) and two controls: the
//! order and an epigraph variable for the holding/shortage cost. Demand is
//! the uncertain parameter. A deviation budget is written either directly on
//! the demand or on lifted coordinates, see [`BudgetEncoding`].

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{self, BundleConfig};
use crate::lowerbound::{self, optimality_gap, PREFIX_TOL};
use crate::model::{validate, Instance, Matrix, Polytope, StageData, XBounds};
use crate::transform::{build_two_stage, solve_adr};

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("invalid inventory configuration: {0}")]
    Config(String),
    #[error("generated instance is invalid: {0}")]
    Invalid(String),
    #[error("write study: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InventoryConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub init_inventory: f64,
    pub order_lo: f64,
    pub order_hi: f64,
    /// Stock must stay within `[-cap, cap]` (negative stock is backlog).
    pub cap: f64,
    pub hold_cost: f64,
    pub short_cost: f64,
    pub order_cost: f64,
    pub demand_nominal: Vec<f64>,
    pub demand_dev: Vec<f64>,
    /// Bound on the total normalized deviation; `None` leaves the box.
    pub budget: Option<f64>,
    #[serde(default)]
    pub budget_encoding: BudgetEncoding,
}

/// How `sum_t |u_t - nom_t| / dev_t <= budget` enters `D u <= e`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetEncoding {
    /// One row per sign pattern over the periods with positive deviation;
    /// `u` is the raw demand. Needs `2^T` rows.
    #[default]
    SignPatterns,
    /// Appends `xi_t` to `u_t` with `|u_t - nom_t| <= dev_t xi_t` and
    /// `sum xi_t <= budget`. Decision rules may then depend on `xi`.
    Lifted,
}

/// Above this many periods with deviation the sign-pattern rows are refused.
pub const MAX_SIGN_PATTERN_PERIODS: usize = 16;

impl InventoryConfig {
    pub fn validate(&self) -> Result<(), InventoryError> {
        let bad = |m: String| Err(InventoryError::Config(m));
        if self.horizon == 0 {
            return bad("T must be positive".into());
        }
        if self.demand_nominal.len() != self.horizon || self.demand_dev.len() != self.horizon {
            return bad(format!("demand vectors must have length T = {}", self.horizon));
        }
        if [self.hold_cost, self.short_cost, self.order_cost].iter().any(|c| *c < 0.0) {
            return bad("costs must be nonnegative".into());
        }
        if self.order_lo > self.order_hi {
            return bad(format!("order_lo {} exceeds order_hi {}", self.order_lo, self.order_hi));
        }
        if self.demand_dev.iter().any(|d| *d < 0.0) {
            return bad("demand_dev must be nonnegative".into());
        }
        if self.cap < 0.0 {
            return bad("cap must be nonnegative".into());
        }
        if let Some(g) = self.budget {
            if g < 0.0 {
                return bad(format!("budget {g} leaves U empty"));
            }
            let active = self.demand_dev.iter().filter(|d| **d > 0.0).count();
            if self.budget_encoding == BudgetEncoding::SignPatterns && active > MAX_SIGN_PATTERN_PERIODS {
                return bad(format!("{active} uncertain periods exceed the sign-pattern limit {MAX_SIGN_PATTERN_PERIODS}; use the lifted encoding"));
            }
        }
        Ok(())
    }
}

/// Builds the instance; `n_x = 0`.
pub fn generate(cfg: &InventoryConfig) -> Result<Instance, InventoryError> {
    cfg.validate()?;
    let t_len = cfg.horizon;
    let lifted = cfg.budget.is_some() && cfg.budget_encoding == BudgetEncoding::Lifted;
    let n_u = if lifted { 2 } else { 1 };
    let aux_cap = cfg.hold_cost.max(cfg.short_cost) * cfg.cap;
    let mut stages = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let mut st = StageData::zeros(0, 1, 1, 2, n_u, 1, 7);
        // s_t - s_{t-1} - order_t = -demand_t
        st.a = Matrix::from_rows(&[vec![1.0]]);
        st.b = Matrix::from_rows(&[vec![-1.0]]);
        st.w = Matrix::from_rows(&[vec![-1.0, 0.0]]);
        st.h.set(0, 0, -1.0);
        st.g = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, -1.0],
        ]);
        st.e = Matrix::from_rows(&[
            vec![-cfg.hold_cost],
            vec![cfg.short_cost],
            vec![0.0],
            vec![0.0],
            vec![1.0],
            vec![-1.0],
            vec![0.0],
        ]);
        // aux <= max(h, p) cap never binds at an optimum with |s| <= cap
        st.m0 = vec![0.0, 0.0, cfg.order_lo, -cfg.order_hi, -cfg.cap, -cfg.cap, -aux_cap];
        st.f = vec![cfg.order_cost, 1.0];
        stages.push(st);
    }
    let mut lo = Vec::with_capacity(n_u * t_len);
    let mut hi = Vec::with_capacity(n_u * t_len);
    for t in 0..t_len {
        lo.push(cfg.demand_nominal[t] - cfg.demand_dev[t]);
        hi.push(cfg.demand_nominal[t] + cfg.demand_dev[t]);
        if lifted {
            lo.push(0.0);
            hi.push(1.0);
        }
    }
    let mut u = Polytope::boxed(lo, hi);
    if let Some(gamma) = cfg.budget {
        let (rows, e) = if lifted { lifted_rows(cfg, gamma) } else { sign_pattern_rows(cfg, gamma) };
        if !rows.is_empty() {
            u.d = Matrix::from_rows(&rows);
            u.e = e;
        }
    }
    let inst = Instance { n_x: 0, c: Vec::new(), s0: vec![cfg.init_inventory], x_bounds: XBounds::free(0), stages, u };
    let report = validate(&inst);
    if !report.is_empty() {
        return Err(InventoryError::Invalid(report.to_string()));
    }
    Ok(inst)
}

fn lifted_rows(cfg: &InventoryConfig, gamma: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = 2 * cfg.horizon;
    let mut rows = Vec::new();
    let mut e = Vec::new();
    for t in 0..cfg.horizon {
        // |demand_t - nominal_t| <= dev_t xi_t
        let mut r = vec![0.0; n];
        r[2 * t] = 1.0;
        r[2 * t + 1] = -cfg.demand_dev[t];
        rows.push(r.clone());
        e.push(cfg.demand_nominal[t]);
        r[2 * t] = -1.0;
        rows.push(r);
        e.push(-cfg.demand_nominal[t]);
    }
    let mut r = vec![0.0; n];
    for t in 0..cfg.horizon {
        r[2 * t + 1] = 1.0;
    }
    rows.push(r);
    e.push(gamma);
    (rows, e)
}

fn sign_pattern_rows(cfg: &InventoryConfig, gamma: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let active: Vec<usize> = (0..cfg.horizon).filter(|&t| cfg.demand_dev[t] > 0.0).collect();
    // the box already implies the budget row
    if gamma >= active.len() as f64 {
        return (Vec::new(), Vec::new());
    }
    let mut rows = Vec::new();
    let mut e = Vec::new();
    for mask in 0..1usize << active.len() {
        let mut r = vec![0.0; cfg.horizon];
        let mut rhs = gamma;
        for (k, &t) in active.iter().enumerate() {
            let sign = if mask >> k & 1 == 1 { -1.0 } else { 1.0 };
            r[t] = sign / cfg.demand_dev[t];
            rhs += sign * cfg.demand_nominal[t] / cfg.demand_dev[t];
        }
        rows.push(r);
        e.push(rhs);
    }
    (rows, e)
}

/// A randomized configuration with a budgeted demand set. Order capacity is
/// close to the mean demand so the stock sign depends on the realization.
pub fn random_config(horizon: usize, seed: u64) -> InventoryConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r2 = |v: f64| (v * 100.0).round() / 100.0;
    let demand_nominal: Vec<f64> = (0..horizon).map(|_| r2(rng.gen_range(5.0..15.0))).collect();
    let demand_dev: Vec<f64> = demand_nominal.iter().map(|d| r2(d * rng.gen_range(0.3..0.6))).collect();
    let mean = demand_nominal.iter().sum::<f64>() / horizon as f64;
    let peak = demand_nominal.iter().zip(&demand_dev).map(|(d, v)| d + v).fold(0.0, f64::max);
    InventoryConfig {
        horizon,
        init_inventory: r2(rng.gen_range(0.0..3.0)),
        order_lo: 0.0,
        order_hi: r2(mean * rng.gen_range(1.0..1.3)),
        cap: r2(2.0 * peak * horizon as f64),
        hold_cost: r2(rng.gen_range(0.5..2.0)),
        short_cost: r2(rng.gen_range(3.0..6.0)),
        order_cost: r2(rng.gen_range(0.5..1.5)),
        demand_nominal,
        demand_dev,
        budget: Some(r2(horizon as f64 * rng.gen_range(0.3..0.7))),
        budget_encoding: BudgetEncoding::SignPatterns,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tpb,
    Adr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tpb => "tpb",
            Method::Adr => "adr",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub method: Method,
    #[serde(rename = "UB")]
    pub ub: f64,
    #[serde(rename = "LB")]
    pub lb: f64,
    pub gap: f64,
    pub iters: usize,
    pub time_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// `(seed, reason)` of instances excluded from the averages.
    pub failed: Vec<(u64, String)>,
}

impl StudyReport {
    pub fn average_gap(&self, method: Method) -> Option<f64> {
        let g: Vec<f64> = self.rows.iter().filter(|r| r.method == method).map(|r| r.gap).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }

    pub fn max_gap(&self, method: Method) -> Option<f64> {
        self.rows.iter().filter(|r| r.method == method).map(|r| r.gap).reduce(f64::max)
    }

    /// Seeds where the TPB gap exceeds the ADR gap by more than `tol`.
    pub fn tpb_worse(&self, tol: f64) -> Vec<u64> {
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r.method == Method::Tpb) {
            if let Some(a) = self.rows.iter().find(|a| a.method == Method::Adr && a.seed == r.seed) {
                if r.gap > a.gap + tol {
                    out.push(r.seed);
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W, deterministic: bool) -> Result<(), InventoryError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| InventoryError::Io(std::io::Error::other(e));
        w.write_record(["seed", "T", "method", "UB", "LB", "gap", "iters", "time_ms"]).map_err(io)?;
        for r in &self.rows {
            let time = if deterministic { 0.0 } else { r.time_ms };
            w.write_record([
                r.seed.to_string(),
                r.horizon.to_string(),
                r.method.as_str().to_string(),
                format!("{:.10e}", r.ub),
                format!("{:.10e}", r.lb),
                format!("{:.8e}", r.gap),
                r.iters.to_string(),
                format!("{time:.3}"),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every method on every `(seed, config)` pair. The lower bound is the
/// scenario tree over the worst cases found by the bundle run.
pub fn study(cases: &[(u64, InventoryConfig)], methods: &[Method], cfg: &BundleConfig, scenario_cap: usize) -> StudyReport {
    let results: Vec<Result<Vec<StudyRow>, (u64, String)>> =
        cases.par_iter().map(|(seed, ic)| study_one(*seed, ic, methods, cfg, scenario_cap).map_err(|e| (*seed, e))).collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(f) => failed.push(f),
        }
    }
    StudyReport { rows, failed }
}

fn study_one(seed: u64, ic: &InventoryConfig, methods: &[Method], cfg: &BundleConfig, scenario_cap: usize) -> Result<Vec<StudyRow>, String> {
    let inst = generate(ic).map_err(|e| e.to_string())?;
    let ts = build_two_stage(&inst);
    let start = Instant::now();
    let sol = bundle::run(&ts, cfg).map_err(|e| format!("bundle: {e}"))?;
    let tpb_ms = start.elapsed().as_secs_f64() * 1e3;
    let scen = lowerbound::harvest_scenarios(&sol.harvested, &inst.u, scenario_cap).map_err(|e| format!("harvest: {e}"))?;
    let tree = lowerbound::build_scenario_tree(&inst, &scen, PREFIX_TOL);
    let lb = lowerbound::solve_stmarmilp(&inst, &tree).map_err(|e| format!("lower bound: {e}"))?;
    let mut rows = Vec::new();
    for m in methods {
        let (ub, iters, time_ms) = match m {
            Method::Tpb => (sol.ub, sol.iterations, tpb_ms),
            Method::Adr => {
                let t0 = Instant::now();
                let adr = solve_adr(&inst).map_err(|e| format!("adr: {e}"))?;
                (adr.value, 0, t0.elapsed().as_secs_f64() * 1e3)
            }
        };
        let gap = optimality_gap(ub, lb).map_err(|e| e.to_string())?;
        rows.push(StudyRow { seed, horizon: ic.horizon, method: *m, ub, lb, gap, iters, time_ms });
    }
    Ok(rows)
}
