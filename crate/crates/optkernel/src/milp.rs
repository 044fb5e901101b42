//! Best-bound branch-and-bound for LPs with binary variables.
//!
//! Each node re-solves its relaxation with the dual simplex, starting from
//! the parent's optimal basis. Branching picks the most fractional binary
//! (lowest index on ties); nodes with equal bounds are explored in creation
//! order, so the search is deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::lp::{Basis, LinearProgram, LpStatus, Simplex};
use crate::{KernelError, Result};

#[derive(Clone, Debug, Default)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
}

impl MixedIntegerProgram {
    pub fn validate(&self) -> Result<()> {
        self.lp.validate()?;
        let n = self.lp.num_vars();
        for &j in &self.binaries {
            if j >= n {
                return Err(KernelError::Malformed(format!("binary index {j} out of range {n}")));
            }
            if self.lp.lower[j] < 0.0 || self.lp.upper[j] > 1.0 {
                return Err(KernelError::Malformed(format!("binary {j} must have bounds within [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MipOptions {
    /// Relative gap `(ub - lb) / max(1, |ub|)` at which a node is pruned.
    pub gap_tol: f64,
    pub abs_gap: f64,
    pub node_limit: usize,
    pub integrality_tol: f64,
    /// Optional starting incumbent; ignored unless feasible and integral.
    pub incumbent: Option<Vec<f64>>,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, abs_gap: 1e-9, node_limit: 500_000, integrality_tol: 1e-6, incumbent: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct MipSolution {
    pub status: MipStatus,
    pub x: Vec<f64>,
    /// Incumbent objective (minimization).
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub nodes: usize,
}

impl MipSolution {
    pub fn gap(&self) -> f64 {
        (self.objective - self.bound).max(0.0) / self.objective.abs().max(1.0)
    }
}

struct Node {
    bound: f64,
    id: usize,
    depth: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: Basis,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound, then older id, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Minimizes `mip`. Maximization callers negate the objective.
pub fn solve_milp(mip: &MixedIntegerProgram, opts: &MipOptions) -> Result<MipSolution> {
    mip.validate()?;
    let lp = &mip.lp;
    let n = lp.num_vars();
    let depth_cap = 10 * mip.binaries.len().max(1);
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if let Some(x) = &opts.incumbent {
        let integral = mip
            .binaries
            .iter()
            .all(|&j| x[j].min(1.0 - x[j]).abs() <= opts.integrality_tol);
        if x.len() == n && integral && lp.max_violation(x) <= 1e-7 {
            incumbent = Some((lp.evaluate(x), x.clone()));
        }
    }
    let prune_level = |inc: &Option<(f64, Vec<f64>)>| -> f64 {
        match inc {
            Some((v, _)) => v - opts.abs_gap.max(opts.gap_tol * v.abs().max(1.0)),
            None => f64::INFINITY,
        }
    };

    let mut simplex = Simplex::new(lp);
    let root_status = simplex.cold_solve()?;
    match root_status {
        LpStatus::Infeasible => {
            return Ok(MipSolution {
                status: MipStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::INFINITY,
                bound: f64::INFINITY,
                nodes: 1,
            })
        }
        LpStatus::Unbounded => {
            return Ok(MipSolution {
                status: MipStatus::Unbounded,
                x: vec![0.0; n],
                objective: f64::NEG_INFINITY,
                bound: f64::NEG_INFINITY,
                nodes: 1,
            })
        }
        LpStatus::Optimal => {}
    }

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut pending: Option<(Vec<f64>, Vec<f64>, usize)> = Some((lp.lower.clone(), lp.upper.clone(), 0));
    // Smallest relaxation bound among nodes discarded by the bound test.
    let mut pruned_min = f64::INFINITY;

    loop {
        let (lower, upper, depth, status) = match pending.take() {
            Some((lower, upper, depth)) => (lower, upper, depth, root_status),
            None => {
                let Some(node) = heap.pop() else { break };
                if node.bound >= prune_level(&incumbent) {
                    pruned_min = pruned_min.min(node.bound);
                    heap.clear();
                    break;
                }
                if nodes >= opts.node_limit {
                    let bound = node.bound.min(incumbent.as_ref().map_or(f64::INFINITY, |i| i.0));
                    return Err(KernelError::NodeLimit {
                        limit: opts.node_limit,
                        bound,
                        incumbent: incumbent.as_ref().map(|i| i.0),
                        incumbent_x: incumbent.map(|i| i.1),
                    });
                }
                let status = simplex.warm_solve(&node.basis, &node.lower, &node.upper)?;
                (node.lower, node.upper, node.depth, status)
            }
        };
        nodes += 1;
        match status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Ok(MipSolution {
                    status: MipStatus::Unbounded,
                    x: vec![0.0; n],
                    objective: f64::NEG_INFINITY,
                    bound: f64::NEG_INFINITY,
                    nodes,
                })
            }
            LpStatus::Optimal => {}
        }
        let value = simplex.objective();
        if value >= prune_level(&incumbent) {
            pruned_min = pruned_min.min(value);
            continue;
        }
        let mut branch: Option<(usize, f64)> = None;
        for &j in &mip.binaries {
            // a fixed binary can sit off its bound by the primal tolerance
            if lower[j] == upper[j] {
                continue;
            }
            let v = simplex.value(j);
            let frac = v.min(1.0 - v);
            if frac > opts.integrality_tol {
                let dist = (v - 0.5).abs();
                if branch.is_none_or(|(_, d)| dist < d) {
                    branch = Some((j, dist));
                }
            }
        }
        match branch {
            None => {
                let mut x: Vec<f64> = (0..n).map(|j| simplex.value(j)).collect();
                for &j in &mip.binaries {
                    x[j] = x[j].round();
                }
                incumbent = Some((value, x));
            }
            Some((j, _)) => {
                if depth + 1 > depth_cap {
                    return Err(KernelError::Malformed("branching depth cap exceeded".into()));
                }
                let basis = simplex.snapshot();
                for fix in [0.0, 1.0] {
                    let mut lo = lower.clone();
                    let mut hi = upper.clone();
                    lo[j] = fix;
                    hi[j] = fix;
                    heap.push(Node { bound: value, id: next_id, depth: depth + 1, lower: lo, upper: hi, basis: basis.clone() });
                    next_id += 1;
                }
            }
        }
    }

    match incumbent {
        Some((objective, x)) => {
            let bound = pruned_min.min(objective);
            Ok(MipSolution { status: MipStatus::Optimal, x, objective, bound, nodes })
        }
        None => Ok(MipSolution {
            status: MipStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            nodes,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_u_bounded_by_binary() {
        // max u s.t. u <= w
        let mut lp = LinearProgram::new();
        let u = lp.add_var(-1.0, 0.0, 1.0);
        let w = lp.add_var(0.0, 0.0, 1.0);
        lp.add_ge(vec![(w, 1.0), (u, -1.0)], 0.0);
        let mip = MixedIntegerProgram { lp, binaries: vec![w] };
        let s = solve_milp(&mip, &MipOptions::default()).unwrap();
        assert_eq!(s.status, MipStatus::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert_eq!(s.x[w], 1.0);
    }

    #[test]
    fn complementarity_toy() {
        // max y s.t. y <= 5, pi <= 10 w, (5 - y) <= 10 (1 - w), pi >= 1
        let mut lp = LinearProgram::new();
        let y = lp.add_var(-1.0, 0.0, 5.0);
        let pi = lp.add_var(0.0, 1.0, 10.0);
        let w = lp.add_var(0.0, 0.0, 1.0);
        lp.add_ge(vec![(w, 10.0), (pi, -1.0)], 0.0);
        lp.add_le(vec![(y, -1.0), (w, 10.0)], 5.0);
        let mip = MixedIntegerProgram { lp, binaries: vec![w] };
        let s = solve_milp(&mip, &MipOptions::default()).unwrap();
        assert!((s.x[y] - 5.0).abs() < 1e-9);
        assert_eq!(s.x[w], 1.0);
    }

    #[test]
    fn infeasible_binary_pattern() {
        let mut lp = LinearProgram::new();
        let a = lp.add_var(0.0, 0.0, 1.0);
        let b = lp.add_var(0.0, 0.0, 1.0);
        lp.add_eq(vec![(a, 1.0), (b, 1.0)], 1.5);
        let s = solve_milp(&MixedIntegerProgram { lp, binaries: vec![a, b] }, &MipOptions::default()).unwrap();
        assert_eq!(s.status, MipStatus::Infeasible);
    }

    #[test]
    fn node_limit_reports_incumbent() {
        // knapsack-like problem needing branching
        let mut lp = LinearProgram::new();
        let w = [3.0, 5.0, 7.0, 9.0, 11.0];
        let vars: Vec<usize> = w.iter().map(|&c| lp.add_var(-c - 0.5, 0.0, 1.0)).collect();
        lp.add_le(vars.iter().zip(&w).map(|(&j, &c)| (j, c)).collect(), 17.5);
        let mip = MixedIntegerProgram { lp, binaries: vars };
        let opts = MipOptions { node_limit: 1, ..Default::default() };
        match solve_milp(&mip, &opts) {
            Err(KernelError::NodeLimit { limit, .. }) => assert_eq!(limit, 1),
            other => panic!("expected node limit, got {other:?}"),
        }
    }
}
