//! Scenario-tree lower bound, the relative gap, and a uniform sampler of U.

use log::warn;
use msro_optkernel::{solve_lp, KernelError, LinearProgram, LpStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, Polytope, Sense};
use crate::transform::dense_row;

/// Prefixes closer than this (max-norm) share decisions.
pub const PREFIX_TOL: f64 = 1e-9;
/// Harvested scenarios closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error("no scenarios to build a bound from")]
    Empty,
    #[error("scenario-tree LP is {0:?}")]
    Status(LpStatus),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("gap undefined: UB + LB = {0}")]
    UndefinedGap(f64),
    #[error("sampler accepted {accepted} of {trials} trials; tighten the bounding box of U")]
    DegenerateSampler { accepted: usize, trials: usize },
}

pub type Result<T> = std::result::Result<T, LowerBoundError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Harvested,
    Sampled,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Vec<f64>>,
    pub tags: Vec<Provenance>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.scenarios).expect("finite floats")
    }
}

/// Distinct worst cases from a run, keeping the `cap` most recent.
pub fn harvest_scenarios(log: &[Vec<f64>], u: &Polytope, cap: usize) -> Result<ScenarioSet> {
    if log.is_empty() {
        return Err(LowerBoundError::Empty);
    }
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for s in log.iter().rev() {
        if kept.len() >= cap {
            break;
        }
        if !u.contains(s, 1e-8) {
            warn!("dropping harvested scenario outside U by {}", u.violation(s));
            continue;
        }
        if !kept.iter().any(|k| k.iter().zip(s).all(|(a, b)| (a - b).abs() <= DEDUP_TOL)) {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(LowerBoundError::Empty);
    }
    kept.reverse();
    let tags = vec![Provenance::Harvested; kept.len()];
    Ok(ScenarioSet { scenarios: kept, tags })
}

/// Groups of scenarios with equal observed prefix, per stage.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioTree {
    /// `groups[t][g]` lists the scenario indices of group `g` at stage `t`.
    pub groups: Vec<Vec<Vec<usize>>>,
    /// `group_of[t][i]` is the group of scenario `i` at stage `t`.
    pub group_of: Vec<Vec<usize>>,
    pub scenarios: Vec<Vec<f64>>,
}

impl ScenarioTree {
    pub fn group_counts(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

pub fn build_scenario_tree(inst: &Instance, set: &ScenarioSet, tol: f64) -> ScenarioTree {
    let n = set.len();
    let mut groups = Vec::with_capacity(inst.horizon());
    let mut group_of = Vec::with_capacity(inst.horizon());
    for t in 0..inst.horizon() {
        let p = inst.prefix_dim(t);
        let mut gs: Vec<Vec<usize>> = Vec::new();
        let mut of = vec![0; n];
        for i in 0..n {
            // groups must refine the previous stage, so only compare within it
            let found = gs.iter().position(|g| {
                let r = g[0];
                (t == 0 || group_of_prev(&group_of, t, r) == group_of_prev(&group_of, t, i))
                    && set.scenarios[r][..p].iter().zip(&set.scenarios[i][..p]).all(|(a, b)| (a - b).abs() <= tol)
            });
            match found {
                Some(g) => {
                    gs[g].push(i);
                    of[i] = g;
                }
                None => {
                    of[i] = gs.len();
                    gs.push(vec![i]);
                }
            }
        }
        groups.push(gs);
        group_of.push(of);
    }
    ScenarioTree { groups, group_of, scenarios: set.scenarios.clone() }
}

fn group_of_prev(group_of: &[Vec<usize>], t: usize, i: usize) -> usize {
    group_of[t - 1][i]
}

/// Optimal value of the multistage problem restricted to the tree's
/// scenarios, with shared `x` and one epigraph variable.
pub fn solve_stmarmilp(inst: &Instance, tree: &ScenarioTree) -> Result<f64> {
    let n = tree.scenarios.len();
    if n == 0 {
        return Err(LowerBoundError::Empty);
    }
    let mut lp = LinearProgram::new();
    let x0 = lp.num_vars();
    for j in 0..inst.n_x {
        lp.add_var(inst.c[j], inst.x_bounds.lo[j], inst.x_bounds.hi[j]);
    }
    for r in &inst.x_bounds.rows {
        let row = dense_row(&r.coeffs, x0);
        match r.sense {
            Sense::Ge => lp.add_ge(row, r.rhs),
            Sense::Le => lp.add_le(row, r.rhs),
            Sense::Eq => lp.add_eq(row, r.rhs),
        };
    }
    let theta = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    // (s offset, y offset) per stage and group
    let mut slots: Vec<Vec<(usize, usize)>> = Vec::with_capacity(inst.horizon());
    for (t, st) in inst.stages.iter().enumerate() {
        let off = inst.u_offset(t);
        let mut stage_slots = Vec::with_capacity(tree.groups[t].len());
        for g in &tree.groups[t] {
            let s = lp.add_vars(st.n_s, f64::NEG_INFINITY, f64::INFINITY);
            let y = lp.add_vars(st.n_y, f64::NEG_INFINITY, f64::INFINITY);
            stage_slots.push((s, y));
            let rep = g[0];
            let u_t = &tree.scenarios[rep][off..off + st.n_u];
            let prev = if t == 0 { None } else { Some(slots[t - 1][tree.group_of[t - 1][rep]].0) };
            for i in 0..st.n_eq() {
                let mut row = dense_row(st.t_mat.row(i), x0);
                row.extend(dense_row(st.a.row(i), s));
                row.extend(dense_row(st.w.row(i), y));
                let mut rhs = st.h0[i] + crate::model::dot(st.h.row(i), u_t);
                match prev {
                    Some(p) => row.extend(dense_row(st.b.row(i), p)),
                    None => rhs -= crate::model::dot(st.b.row(i), &inst.s0),
                }
                lp.add_eq(row, rhs);
            }
            for i in 0..st.n_in() {
                let mut row = dense_row(st.l.row(i), x0);
                row.extend(dense_row(st.e.row(i), s));
                row.extend(dense_row(st.g.row(i), y));
                lp.add_ge(row, st.m0[i] + crate::model::dot(st.m.row(i), u_t));
            }
        }
        slots.push(stage_slots);
    }
    for i in 0..n {
        let mut row = vec![(theta, 1.0)];
        for (t, st) in inst.stages.iter().enumerate() {
            let (s, y) = slots[t][tree.group_of[t][i]];
            row.extend(dense_row(&st.d, s).into_iter().map(|(j, v)| (j, -v)));
            row.extend(dense_row(&st.f, y).into_iter().map(|(j, v)| (j, -v)));
        }
        lp.add_ge(row, 0.0);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        s => Err(LowerBoundError::Status(s)),
    }
}

/// `(UB - LB) / (0.5 (UB + LB))`.
pub fn optimality_gap(ub: f64, lb: f64) -> Result<f64> {
    let s = ub + lb;
    if s.abs() < 1e-12 {
        return Err(LowerBoundError::UndefinedGap(s));
    }
    Ok((ub - lb) / (0.5 * s))
}

/// `n` uniform points of U by rejection from its bounding box.
pub fn sample_uniform_scenarios(u: &Polytope, n: usize, seed: u64) -> Result<ScenarioSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 10_000usize.saturating_mul(n.max(1));
    let mut out = Vec::with_capacity(n);
    let mut trials = 0;
    while out.len() < n {
        if trials >= budget {
            return Err(LowerBoundError::DegenerateSampler { accepted: out.len(), trials });
        }
        trials += 1;
        let p: Vec<f64> = u
            .lo
            .iter()
            .zip(&u.hi)
            .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
            .collect();
        if u.contains(&p, 0.0) {
            out.push(p);
        }
    }
    Ok(ScenarioSet { scenarios: out, tags: vec![Provenance::Sampled; n] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matrix;
    use crate::oracle::{random_instance, RandomShape};
    use crate::transform::solve_adr;

    fn set(s: Vec<Vec<f64>>) -> ScenarioSet {
        let n = s.len();
        ScenarioSet { scenarios: s, tags: vec![Provenance::Harvested; n] }
    }

    #[test]
    fn gap_formula() {
        assert_eq!(optimality_gap(11.0, 9.0).unwrap(), 0.2);
        assert_eq!(optimality_gap(4.0, 4.0).unwrap(), 0.0);
        assert!(matches!(optimality_gap(1.0, -1.0), Err(LowerBoundError::UndefinedGap(_))));
    }

    #[test]
    fn harvest_dedups_and_caps() {
        let u = Polytope::boxed(vec![0.0, 0.0], vec![1.0, 1.0]);
        let log = vec![vec![0.0, 1.0], vec![0.0, 1.0 + 1e-9], vec![1.0, 1.0], vec![0.5, 0.5]];
        let s = harvest_scenarios(&log, &u, 64).unwrap();
        assert_eq!(s.len(), 3);
        let s = harvest_scenarios(&log, &u, 2).unwrap();
        assert_eq!(s.scenarios, vec![vec![1.0, 1.0], vec![0.5, 0.5]]);
        assert!(harvest_scenarios(&[], &u, 4).is_err());
    }

    #[test]
    fn tree_groups_by_prefix() {
        let inst = random_instance(0, &RandomShape { horizon: 2, max_dim: 1, max_n_u: 2, hard_rows: false, compact: false });
        assert_eq!(inst.prefix_dim(0), 1);
        let tree = build_scenario_tree(&inst, &set(vec![vec![0.5, 0.1], vec![0.5, 0.2]]), PREFIX_TOL);
        assert_eq!(tree.group_counts(), vec![1, 2]);
        let tree = build_scenario_tree(&inst, &set(vec![vec![0.5, 0.1]; 4]), PREFIX_TOL);
        assert_eq!(tree.group_counts(), vec![1, 1]);
    }

    #[test]
    fn single_scenario_is_the_deterministic_lp() {
        let mut inst = random_instance(2, &RandomShape::default());
        let mid: Vec<f64> = inst.u.lo.iter().zip(&inst.u.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let tree = build_scenario_tree(&inst, &set(vec![mid.clone()]), PREFIX_TOL);
        let lb = solve_stmarmilp(&inst, &tree).unwrap();
        inst.u = Polytope::boxed(mid.clone(), mid);
        inst.u.d = Matrix::zeros(0, inst.u.lo.len());
        let det = solve_adr(&inst).unwrap().value;
        assert!((lb - det).abs() <= 1e-7 * (1.0 + det.abs()), "{lb} vs {det}");
    }

    #[test]
    fn sampler_is_seeded_and_inside() {
        let mut u = Polytope::boxed(vec![0.0; 3], vec![1.0; 3]);
        u.d = Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]);
        u.e = vec![1.5];
        let a = sample_uniform_scenarios(&u, 50, 7).unwrap();
        let b = sample_uniform_scenarios(&u, 50, 7).unwrap();
        assert_eq!(a.scenarios, b.scenarios);
        assert!(a.scenarios.iter().all(|p| u.violation(p) <= 1e-12));
        u.e = vec![-1.0];
        assert!(matches!(sample_uniform_scenarios(&u, 1, 0), Err(LowerBoundError::DegenerateSampler { .. })));
    }
}
