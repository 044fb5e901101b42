//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 2 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msro_core::adversarial::{AdversarialConfig, Adversary, Domain};
use msro_core::bundle::{self, evaluate_f, BundleConfig, Evaluation, Solution, StepKind};
use msro_core::inventory::{self, Method};
use msro_core::lowerbound::{self, optimality_gap, PREFIX_TOL};
use msro_core::model::{dot, Instance};
use msro_core::oracle::{
    brute_force_f, brute_force_q, brute_force_two_stage, check_theorem3, enumerate_vertices, finite_diff_check, random_directions,
    random_instance, RandomShape, VertexList,
};
use msro_core::transform::{build_two_stage, solve_adr, TwoStageProblem};
use msro_optkernel::brute::{milp_by_enumeration, qp_by_active_sets};
use msro_optkernel::random::{general_lp, random_cut_pool, sup_shaped};
use msro_optkernel::{solve_lp, solve_milp, solve_qp, LpStatus, MipOptions, MipStatus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- instance pools

struct SmallCase {
    seed: u64,
    inst: Instance,
    verts: VertexList,
}

/// Random instances with `T <= 3`, every stage dimension `<= 3` and at most
/// 32 vertices.
fn small_cases() -> &'static Vec<SmallCase> {
    static CELL: OnceLock<Vec<SmallCase>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        let mut seed = 0u64;
        while out.len() < 50 {
            let shape = RandomShape { horizon: 1 + (seed % 3) as usize, max_dim: 3, max_n_u: 5, hard_rows: seed % 4 == 3, compact: true };
            let inst = random_instance(1000 + seed, &shape);
            let verts = enumerate_vertices(&inst.u, 100_000);
            // the criteria start from the ADR solution
            if verts.exhaustive && verts.vertices.len() <= 32 && solve_adr(&inst).is_ok() {
                out.push(SmallCase { seed: 1000 + seed, inst, verts });
            }
            seed += 1;
        }
        out
    })
}

struct BundleCase {
    seed: u64,
    ts: TwoStageProblem,
    verts: VertexList,
    sol: Solution,
    exact: f64,
    elapsed: Duration,
    cfg: BundleConfig,
}

/// Bundle runs at `delta_tol = 1e-6` with their enumeration optima.
fn bundle_cases() -> &'static Result<Vec<BundleCase>, String> {
    static CELL: OnceLock<Result<Vec<BundleCase>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for seed in 0..20u64 {
            let shape = if seed % 2 == 0 {
                RandomShape::default()
            } else {
                RandomShape { horizon: 2, max_dim: 2, max_n_u: 3, hard_rows: true, compact: false }
            };
            let inst = random_instance(2000 + seed, &shape);
            let ts = build_two_stage(&inst);
            let verts = enumerate_vertices(&inst.u, 100_000);
            let cfg = BundleConfig { delta_tol: 1e-6, ..BundleConfig::default() };
            let start = Instant::now();
            let sol = bundle::run(&ts, &cfg).map_err(|e| format!("seed {}: bundle: {e}", 2000 + seed))?;
            let elapsed = start.elapsed();
            let exact = brute_force_two_stage(&ts, &verts, sol.trust_radius)
                .map_err(|e| format!("seed {}: enumeration: {e}", 2000 + seed))?
                .value;
            out.push(BundleCase { seed: 2000 + seed, ts, verts, sol, exact, elapsed, cfg });
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------- criteria

fn c1_adversarial_matches_enumeration() -> Outcome {
    let mut worst_err: f64 = 0.0;
    let mut worst_time = Duration::ZERO;
    let mut infeasible_checked = 0;
    let mut failures = Vec::new();
    for case in small_cases() {
        let start = Instant::now();
        let ts = build_two_stage(&case.inst);
        let adv = Adversary::new(&ts, AdversarialConfig::default()).expect("adversary");
        let base = solve_adr(&case.inst).expect("ADR").xhat;
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let shifted: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        for xhat in [base, shifted] {
            let brute = brute_force_q(&ts, &xhat, &case.verts).expect("enumeration");
            match brute.q {
                Some(q) => {
                    let res = adv.solve_worst_case(&xhat, &[]).expect("SUP");
                    let err = (res.value - q).abs() / (1.0 + q.abs());
                    worst_err = worst_err.max(err);
                    if err > 1e-6 {
                        failures.push(format!("seed {}: {} vs {q}", case.seed, res.value));
                    }
                }
                None => {
                    infeasible_checked += 1;
                    if !matches!(adv.domain(&xhat).expect("domain"), Domain::Infeasible(_)) {
                        failures.push(format!("seed {}: infeasible point accepted", case.seed));
                    }
                }
            }
        }
        let el = start.elapsed();
        worst_time = worst_time.max(el);
        if el > Duration::from_secs(5) {
            failures.push(format!("seed {}: {:.1?}", case.seed, el));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} instances, max rel err {worst_err:.2e}, {infeasible_checked} infeasible points rejected, slowest {worst_time:.2?}{}",
            small_cases().len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn c2_bundle_matches_enumeration() -> Outcome {
    let cases = match bundle_cases() {
        Ok(c) => c,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    let mut failures = Vec::new();
    for c in cases {
        let err = (c.sol.ub - c.exact).abs() / (1.0 + c.exact.abs());
        worst = worst.max(err);
        slowest = slowest.max(c.elapsed);
        if err > 1e-4 || !c.sol.converged || c.elapsed > Duration::from_secs(60) {
            failures.push(format!("seed {}: UB {} exact {} converged {} {:.1?}", c.seed, c.sol.ub, c.exact, c.sol.converged, c.elapsed));
        }
    }
    let feas = cases.iter().filter(|c| c.sol.log.iter().any(|r| r.step == StepKind::Feasibility)).count();
    outcome(
        failures.is_empty(),
        format!(
            "{} runs, max rel err {worst:.2e}, slowest {slowest:.2?}, {feas} runs used feasibility cuts{}",
            cases.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn inventory_chain_configs() -> Vec<(u64, usize)> {
    (0..100u64).map(|s| (s, 2 + (s % 2) as usize)).collect()
}

fn c3_bound_chain() -> Outcome {
    let cfg = BundleConfig::default();
    let mut violations = Vec::new();
    let mut strict = 0;
    for (seed, horizon) in inventory_chain_configs() {
        let inst = inventory::generate(&inventory::random_config(horizon, seed)).expect("generate");
        match check_theorem3(&inst, &cfg, 64) {
            Ok(rep) => {
                let ok = rep.v_s <= rep.v_tpb + 1e-6 && rep.v_tpb <= rep.v_adr + 1e-6;
                if !ok {
                    violations.push(format!("seed {seed}: {} <= {} <= {}", rep.v_s, rep.v_tpb, rep.v_adr));
                }
                if rep.v_tpb < rep.v_adr - 1e-6 {
                    strict += 1;
                }
            }
            Err(e) => violations.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(
        violations.is_empty(),
        format!("100 inventory seeds (T = 2, 3), {} violations, TPB strictly below ADR on {strict}{}", violations.len(), if violations.is_empty() { String::new() } else { format!("; {}", violations.join("; ")) }),
    )
}

fn c4_aggregate_identities() -> Outcome {
    let cases = match bundle_cases() {
        Ok(c) => c,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for c in cases {
        for r in c.sol.log.iter().filter(|r| r.step != StepKind::Initial && !r.box_active) {
            let g2 = r.g_norm * r.g_norm;
            let d1 = (r.delta - (0.5 * r.t * g2 + r.e_hat)).abs();
            let d2 = (r.model - (r.f_center - r.t * g2 - r.e_hat)).abs();
            checked += 1;
            worst = worst.max(d1).max(d2);
            if d1.max(d2) > 1e-6 {
                failures.push(format!("seed {} k {}: {:.2e}", c.seed, r.k, d1.max(d2)));
            }
        }
    }
    outcome(
        failures.is_empty() && checked > 0,
        format!("{checked} iterations, max residual {worst:.2e}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

fn c5_serious_step_budget() -> Outcome {
    let cases = match bundle_cases() {
        Ok(c) => c,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut failures = Vec::new();
    let mut tightest = f64::INFINITY;
    let mut runs = 0;
    for c in cases.iter().filter(|c| c.sol.converged) {
        runs += 1;
        let budget = (c.sol.f_z0 - c.exact) / c.cfg.m;
        let sum = c.sol.serious_delta_sum();
        tightest = tightest.min(budget - sum);
        if sum > budget + 1e-6 {
            failures.push(format!("seed {}: sum {sum} > budget {budget}", c.seed));
        }
    }
    outcome(
        failures.is_empty() && runs > 0,
        format!("{runs} converged runs, min slack {tightest:.3e}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

fn c6_subgradients() -> Outcome {
    let cases = match bundle_cases() {
        Ok(c) => c,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut points = 0;
    let mut differentiable = 0;
    let mut central_ok = 0;
    let mut ineq_points = 0;
    let mut ineq_ok = 0;
    let mut failures = Vec::new();
    for c in cases {
        let adv = Adversary::new(&c.ts, AdversarialConfig::default()).expect("adversary");
        let f = |x: &[f64]| brute_force_f(&c.ts, x, &c.verts).expect("enumeration");
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let dim = c.ts.dim();
        for k in 0..5 {
            let scale = [0.0, 0.05, 0.2, 0.5, 1.0][k];
            let x: Vec<f64> = c.sol.xhat.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
            let Some(fx) = f(&x) else { continue };
            let Evaluation::Feasible { cut, .. } = evaluate_f(&adv, &x, &[]).expect("evaluate") else {
                // dom F disagreement counts as a failed inequality point
                ineq_points += 1;
                failures.push(format!("seed {} point {k}: enumeration feasible, domain test not", c.seed));
                continue;
            };
            points += 1;
            let brute = brute_force_q(&c.ts, &x, &c.verts).expect("enumeration");
            let tied = brute.margin() <= 1e-7 * (1.0 + fx.abs());
            let dirs = random_directions(dim, 4, &mut rng);
            let rep = finite_diff_check(f, &x, &cut.grad, &dirs, 1e-6, tied);
            if rep.differentiable() {
                differentiable += 1;
                if rep.central_passed() {
                    central_ok += 1;
                }
            }
            // global inequality F(y) >= F(x) + g'(y - x) at random y in dom F
            let mut ok = rep.inequality_passed();
            if !ok {
                failures.push(format!("seed {} point {k}: F - cut value {:.2e}, local inequality {:?}", c.seed, fx - cut.value, rep.checks));
            }
            for _ in 0..6 {
                let r = rng.gen_range(0.01..2.0);
                let y: Vec<f64> = x.iter().map(|v| v + r * rng.gen_range(-1.0..1.0)).collect();
                if let Some(fy) = f(&y) {
                    let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let lin = fx + dot(&cut.grad, &diff);
                    if fy < lin - 1e-7 * (1.0 + fx.abs()) {
                        ok = false;
                        failures.push(format!("seed {} point {k}: F(y) {fy} below {lin}", c.seed));
                    }
                }
            }
            ineq_points += 1;
            if ok {
                ineq_ok += 1;
            }
        }
    }
    let frac = if differentiable > 0 { central_ok as f64 / differentiable as f64 } else { 0.0 };
    outcome(
        differentiable > 0 && frac >= 0.95 && ineq_ok == ineq_points,
        format!(
            "{points} points, {differentiable} differentiable, central FD passed {central_ok} ({:.1}%), inequality {ineq_ok}/{ineq_points}{}",
            100.0 * frac,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn c7_gap_formula() -> Outcome {
    let g = optimality_gap(11.0, 9.0).expect("gap");
    outcome(g == 0.2, format!("gap(11, 9) = {g}"))
}

fn c8_inventory_study() -> Outcome {
    let start = Instant::now();
    let cases: Vec<_> = (0..10u64).map(|s| (s, inventory::random_config(5, s))).collect();
    let rep = inventory::study(&cases, &[Method::Tpb, Method::Adr], &BundleConfig::default(), 64);
    let el = start.elapsed();
    let (Some(tpb), Some(adr)) = (rep.average_gap(Method::Tpb), rep.average_gap(Method::Adr)) else {
        return outcome(false, format!("no results; failed {:?}", rep.failed));
    };
    let worse = rep.tpb_worse(1e-6);
    let pass = rep.failed.is_empty() && worse.is_empty() && 2.0 * tpb < adr && el <= Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "T = 5, 10 instances: avg gap TPB {:.3}% vs ADR {:.3}% (max {:.3}% vs {:.3}%), TPB worse on {worse:?}, failed {}, {el:.1?}",
            100.0 * tpb,
            100.0 * adr,
            100.0 * rep.max_gap(Method::Tpb).unwrap_or(f64::NAN),
            100.0 * rep.max_gap(Method::Adr).unwrap_or(f64::NAN),
            rep.failed.len()
        ),
    )
}

fn c9_harvested_vs_sampled() -> Outcome {
    let cfg = BundleConfig::default();
    let mut wins = 0;
    let mut total = 0;
    let mut errors = Vec::new();
    for seed in 0..20u64 {
        let inst = inventory::generate(&inventory::random_config(3, 500 + seed)).expect("generate");
        let ts = build_two_stage(&inst);
        let run = || -> Result<(f64, f64), String> {
            let sol = bundle::run(&ts, &cfg).map_err(|e| e.to_string())?;
            let h = lowerbound::harvest_scenarios(&sol.harvested, &inst.u, 64).map_err(|e| e.to_string())?;
            let s = lowerbound::sample_uniform_scenarios(&inst.u, h.len(), seed).map_err(|e| e.to_string())?;
            let lb = |set| lowerbound::solve_stmarmilp(&inst, &lowerbound::build_scenario_tree(&inst, set, PREFIX_TOL)).map_err(|e| e.to_string());
            Ok((lb(&h)?, lb(&s)?))
        };
        match run() {
            Ok((h, s)) => {
                total += 1;
                if h >= s - 1e-9 * (1.0 + s.abs()) {
                    wins += 1;
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(
        errors.is_empty() && wins * 10 >= 7 * 20,
        format!("harvested LB >= sampled LB on {wins}/{total}{}", if errors.is_empty() { String::new() } else { format!("; {}", errors.join("; ")) }),
    )
}

fn c10_kernels() -> Outcome {
    let mut msgs = Vec::new();
    let mut pass = true;

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut optimal = 0;
    let mut worst_dual: f64 = 0.0;
    for _ in 0..200 {
        let lp = general_lp(&mut rng);
        let sol = solve_lp(&lp).expect("lp");
        match sol.status {
            LpStatus::Optimal => {
                optimal += 1;
                let gap = (sol.objective - sol.dual_objective(&lp)).abs() / (1.0 + sol.objective.abs());
                worst_dual = worst_dual.max(gap);
            }
            LpStatus::Unbounded => {}
            LpStatus::Infeasible => pass = false,
        }
    }
    pass &= worst_dual <= 1e-7;
    msgs.push(format!("LP: {optimal}/200 bounded, max duality gap {worst_dual:.1e}"));

    let mut mip_bad = 0;
    for trial in 0..100 {
        let mip = sup_shaped(&mut rng, 1 + trial % 8);
        let oracle = milp_by_enumeration(&mip);
        let sol = solve_milp(&mip, &MipOptions { gap_tol: 1e-9, ..Default::default() }).expect("milp");
        let ok = match oracle {
            None => sol.status == MipStatus::Infeasible,
            Some(v) => sol.status == MipStatus::Optimal && (sol.objective - v).abs() <= 1e-6 * (1.0 + v.abs()),
        };
        mip_bad += usize::from(!ok);
    }
    pass &= mip_bad == 0;
    msgs.push(format!("MILP: {}/100 match enumeration", 100 - mip_bad));

    let mut qp_bad = 0;
    for _ in 0..100 {
        let qp = random_cut_pool(&mut rng);
        let sol = solve_qp(&qp).expect("qp");
        let oracle = qp_by_active_sets(&qp).expect("active sets");
        if (0..qp.prox_dim).any(|j| (sol.x[j] - oracle[j]).abs() > 1e-6) {
            qp_bad += 1;
        }
    }
    pass &= qp_bad == 0;
    msgs.push(format!("QP: {}/100 match active-set enumeration", 100 - qp_bad));
    outcome(pass, msgs.join(", "))
}

fn c11_big_m_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut failures = Vec::new();
    let mut instances: Vec<(String, Instance)> = small_cases().iter().map(|c| (format!("random {}", c.seed), c.inst.clone())).collect();
    for s in 0..5u64 {
        instances.push((format!("inventory {s}"), inventory::generate(&inventory::random_config(3, s)).expect("generate")));
    }
    for (name, inst) in &instances {
        let ts = build_two_stage(inst);
        let xhat = solve_adr(inst).expect("ADR").xhat;
        let a = Adversary::new(&ts, AdversarialConfig::default()).expect("adversary");
        let b = Adversary::new(&ts, AdversarialConfig { m_scale: 2.0, ..AdversarialConfig::default() }).expect("adversary");
        let (va, vb) = match (a.solve_worst_case(&xhat, &[]), b.solve_worst_case(&xhat, &[])) {
            (Ok(x), Ok(y)) => (x, y),
            (x, y) => {
                failures.push(format!("{name}: {:?} / {:?}", x.err(), y.err()));
                continue;
            }
        };
        count += 1;
        // compare the MILP optima, not the re-evaluated values
        for (x, y) in [(va.mip_value, vb.mip_value), (va.value, vb.value)] {
            let d = (x - y).abs();
            worst = worst.max(d);
            if d >= 1e-6 {
                failures.push(format!("{name}: {x} vs {y}"));
            }
        }
        if va.big_m_warning || vb.big_m_warning {
            failures.push(format!("{name}: fallback big-M used"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("{count} instances, max change {worst:.2e}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "adversarial solve matches vertex enumeration", c1_adversarial_matches_enumeration),
        (2, "bundle optimum matches enumeration optimum", c2_bundle_matches_enumeration),
        (3, "v_S <= v_TPB <= v_ADR on inventory instances", c3_bound_chain),
        (4, "aggregate identities at every iteration", c4_aggregate_identities),
        (5, "serious-step decrease budget", c5_serious_step_budget),
        (6, "subgradient validity", c6_subgradients),
        (7, "gap formula", c7_gap_formula),
        (8, "inventory study: TPB against ADR", c8_inventory_study),
        (9, "harvested vs sampled lower bounds", c9_harvested_vs_sampled),
        (10, "kernel correctness", c10_kernels),
        (11, "big-M invariance", c11_big_m_invariance),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let suite = Instant::now();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!out.pass);
        println!("{} criterion {id:>2}: {name} [{:.1?}] {}", if out.pass { "PASS" } else { "FAIL" }, start.elapsed(), out.detail);
    }
    println!("acceptance: {failed} failed, total {:.1?}", suite.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
